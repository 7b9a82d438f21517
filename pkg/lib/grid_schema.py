"""
Grid file schemas - loader, cache and validation
Version: 1.0.0
Purpose: Validate ablation grid documents before any run starts

Schemas live at schemas/<artifact_type>/<artifact_type>.v<version>.schema.json
and every grid document names its own artifact_type and schema_version.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    from jsonschema import Draft7Validator
except ImportError:
    raise ImportError(
        "jsonschema is required for grid validation. Install with: pip install jsonschema"
    )

GRID_ARTIFACT_TYPE = "ablation_grid"
GRID_SCHEMA_VERSION = "1.0"


class SchemaRegistryError(Exception):
    """Base exception for schema registry errors"""


class SchemaNotFoundError(SchemaRegistryError):
    """Raised when a schema file cannot be found"""


class SchemaLoadError(SchemaRegistryError):
    """Raised when a schema file cannot be loaded or parsed"""


class GridValidationError(ValueError):
    """
    Raised when a grid document fails validation.

    Attributes:
        source: file the document came from (or "<dict>")
        validation_errors: list of {path, message, value} dictionaries
        message: human-readable summary
    """

    def __init__(self, source: str, validation_errors: List[Dict[str, Any]],
                 message: Optional[str] = None):
        self.source = source
        self.validation_errors = validation_errors
        self.message = message or self._build_message()
        super().__init__(self.message)

    def _build_message(self) -> str:
        count = len(self.validation_errors)
        summary = f"Grid validation failed: {count} error(s) in {self.source}\n"
        for i, error in enumerate(self.validation_errors[:5], 1):
            summary += f"{i}. {error.get('path', 'unknown')}: {error.get('message', 'unknown error')}\n"
        if count > 5:
            summary += f"... and {count - 5} more errors"
        return summary

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_type": "GridValidationError",
            "source": self.source,
            "validation_errors": self.validation_errors,
            "message": self.message,
        }


class SchemaRegistry:
    """
    Loads and caches schemas.

    Usage:
        registry = SchemaRegistry()
        schema = registry.get_schema("ablation_grid", "1.0")
    """

    def __init__(self, root: Optional[str] = None):
        self.root = Path(root) if root is not None else Path(__file__).parent.parent / "schemas"
        self._cache: Dict[tuple, dict] = {}
        if not self.root.exists():
            raise SchemaRegistryError(f"Schema directory does not exist: {self.root}")

    def get_schema(self, artifact_type: str, schema_version: str) -> dict:
        key = (artifact_type, schema_version)
        if key in self._cache:
            return self._cache[key]
        path = self.root / artifact_type / f"{artifact_type}.v{schema_version}.schema.json"
        if not path.exists():
            raise SchemaNotFoundError(
                f"Schema not found: {path} (type {artifact_type}, version {schema_version})")
        try:
            with open(path, "r", encoding="utf-8") as f:
                schema = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaLoadError(f"Failed to parse schema {path}: {e}")
        self._cache[key] = schema
        return schema

    def list_schemas(self) -> Dict[str, List[str]]:
        found: Dict[str, List[str]] = {}
        for folder in sorted(d for d in self.root.iterdir() if d.is_dir()):
            versions = [f.name[len(folder.name) + 2:-len(".schema.json")]
                        for f in folder.glob(f"{folder.name}.v*.schema.json")]
            if versions:
                found[folder.name] = sorted(versions)
        return found


_default_registry: Optional[SchemaRegistry] = None


def get_default_registry() -> SchemaRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = SchemaRegistry()
    return _default_registry


def validate_grid(document: Dict[str, Any], source: str = "<dict>") -> None:
    """Raise GridValidationError unless `document` is a valid grid."""
    if not isinstance(document, dict):
        raise GridValidationError(source, [{"path": "root", "message": "grid must be a JSON object",
                                            "value": None}])
    artifact_type = document.get("artifact_type")
    version = document.get("schema_version")
    if artifact_type != GRID_ARTIFACT_TYPE:
        raise GridValidationError(source, [{
            "path": "artifact_type",
            "message": f"Expected artifact_type '{GRID_ARTIFACT_TYPE}', got {artifact_type!r}",
            "value": artifact_type,
        }])
    try:
        schema = get_default_registry().get_schema(GRID_ARTIFACT_TYPE, str(version))
    except SchemaNotFoundError as e:
        raise GridValidationError(source, [{"path": "schema_version",
                                            "message": f"Unsupported schema_version {version!r}: {e}",
                                            "value": version}])
    errors = sorted(Draft7Validator(schema).iter_errors(document), key=lambda e: [str(p) for p in e.path])
    if errors:
        raise GridValidationError(source, [{
            "path": ".".join(str(p) for p in e.path) if e.path else "root",
            "message": e.message,
            "value": e.instance,
        } for e in errors])

    row_ids = [row["row_id"] for row in document["rows"]]
    duplicates = sorted({r for r in row_ids if row_ids.count(r) > 1})
    if duplicates:
        raise GridValidationError(source, [{"path": "rows", "message": f"duplicate row_id {r!r}",
                                            "value": r} for r in duplicates])


def load_grid_document(path) -> Dict[str, Any]:
    p = Path(path)
    try:
        with open(p, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise GridValidationError(str(p), [{"path": "file", "message": "file not found", "value": None}])
    except json.JSONDecodeError as e:
        raise GridValidationError(str(p), [{"path": "file", "message": f"invalid JSON: {e}", "value": None}])
    validate_grid(document, str(p))
    return document
