"""
Test grid document validation against the JSON schema registry.
"""

import json
import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from lib.grid_schema import (GRID_ARTIFACT_TYPE, GRID_SCHEMA_VERSION, GridValidationError,
                             SchemaNotFoundError, SchemaRegistry, SchemaRegistryError,
                             get_default_registry, load_grid_document, validate_grid)


def minimal_grid(**extra):
    doc = {
        "artifact_type": "ablation_grid",
        "schema_version": "1.0",
        "grid_id": "tiny",
        "rows": [{"row_id": "r0", "freeze": "none"}, {"row_id": "r1", "freeze": "att"}],
    }
    doc.update(extra)
    return doc


class TestValidateGrid(unittest.TestCase):
    def test_minimal_and_full_documents_pass(self):
        validate_grid(minimal_grid())
        validate_grid(minimal_grid(
            title="t", ratio_tolerance=0.02, convergence_check=True,
            defaults={"train_preset": "toy-gradcheck", "seeds": [1, 2],
                      "task": {"task": "copy", "len_range": [2, 4]},
                      "train": {"learning_rate": 0.01, "max_epochs": 2}},
            orderings=[{"a": "r0", "b": "r1", "metric": "bleu", "direction": "greater"},
                       {"a": "r1", "value": 0, "metric": "bleu", "direction": "greater", "kind": "hard"}]))

    def test_inline_model_config(self):
        model = {"vocab_size": 12, "d_model": 8, "d_ff": 16, "n_heads": 2,
                 "n_enc_layers": 1, "n_dec_layers": 1, "d_kq": None}
        validate_grid(minimal_grid(defaults={"train_model": model, "ratio_model": model}))
        del model["d_ff"]
        with self.assertRaises(GridValidationError):
            validate_grid(minimal_grid(defaults={"train_model": model}))

    def test_wrong_artifact_type(self):
        with self.assertRaises(GridValidationError) as ctx:
            validate_grid(minimal_grid(artifact_type="manuscript"), "x.json")
        self.assertEqual(ctx.exception.validation_errors[0]["path"], "artifact_type")
        self.assertEqual(ctx.exception.source, "x.json")

    def test_unsupported_version(self):
        with self.assertRaises(GridValidationError) as ctx:
            validate_grid(minimal_grid(schema_version="2.0"))
        self.assertEqual(ctx.exception.validation_errors[0]["path"], "schema_version")

    def test_not_an_object(self):
        with self.assertRaises(GridValidationError):
            validate_grid(["rows"])

    def test_schema_violations_are_collected(self):
        doc = minimal_grid(rows=[{"row_id": "r0", "frozen": "att"}], ratio_tolerance=0)
        with self.assertRaises(GridValidationError) as ctx:
            validate_grid(doc)
        paths = [e["path"] for e in ctx.exception.validation_errors]
        self.assertIn("ratio_tolerance", paths)
        self.assertTrue(any(p.startswith("rows.0") for p in paths), paths)
        self.assertIn("Grid validation failed", str(ctx.exception))

    def test_ordering_needs_exactly_one_comparand(self):
        for ordering in ({"a": "r0", "metric": "bleu", "direction": "greater"},
                         {"a": "r0", "b": "r1", "value": 1, "metric": "bleu", "direction": "greater"},
                         {"a": "r0", "b": "r1", "metric": "loss", "direction": "greater"}):
            with self.assertRaises(GridValidationError, msg=str(ordering)):
                validate_grid(minimal_grid(orderings=[ordering]))

    def test_duplicate_row_ids(self):
        doc = minimal_grid(rows=[{"row_id": "r0", "freeze": "none"}, {"row_id": "r0", "freeze": "att"}])
        with self.assertRaises(GridValidationError) as ctx:
            validate_grid(doc)
        self.assertIn("duplicate row_id 'r0'", ctx.exception.message)

    def test_long_error_lists_are_summarised(self):
        error = GridValidationError("g.json", [{"path": f"p{i}", "message": "bad"} for i in range(8)])
        self.assertIn("8 error(s) in g.json", error.message)
        self.assertIn("... and 3 more errors", error.message)
        self.assertEqual(error.to_dict()["error_type"], "GridValidationError")


class TestLoadGridDocument(unittest.TestCase):
    def test_round_trip_through_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "grid.json"
            path.write_text(json.dumps(minimal_grid()), encoding="utf-8")
            self.assertEqual(load_grid_document(path)["grid_id"], "tiny")

    def test_missing_and_malformed_files(self):
        with self.assertRaises(GridValidationError) as ctx:
            load_grid_document("/nonexistent/grid.json")
        self.assertEqual(ctx.exception.validation_errors[0]["message"], "file not found")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "grid.json"
            path.write_text("{rows: ", encoding="utf-8")
            with self.assertRaises(GridValidationError) as ctx:
                load_grid_document(path)
        self.assertIn("invalid JSON", ctx.exception.validation_errors[0]["message"])


class TestSchemaRegistry(unittest.TestCase):
    def test_lists_and_caches_the_grid_schema(self):
        registry = get_default_registry()
        self.assertEqual(registry.list_schemas(), {GRID_ARTIFACT_TYPE: [GRID_SCHEMA_VERSION]})
        first = registry.get_schema(GRID_ARTIFACT_TYPE, GRID_SCHEMA_VERSION)
        self.assertIs(first, registry.get_schema(GRID_ARTIFACT_TYPE, GRID_SCHEMA_VERSION))

    def test_missing_schema_and_root(self):
        with self.assertRaises(SchemaNotFoundError):
            get_default_registry().get_schema(GRID_ARTIFACT_TYPE, "9.9")
        with self.assertRaises(SchemaRegistryError):
            SchemaRegistry("/nonexistent/schemas")


if __name__ == "__main__":
    unittest.main()
