"""
Checkpoints - one .npz per model
================================

Layout:
  __manifest__  JSON string: format tag, ModelConfig, per-parameter
                name/shape/tag/trainable, caller-supplied `extra`
  p0, p1, ...   parameter arrays in registry order

Loading rebuilds the model from its config and refuses a file whose
parameter names, shapes or component tags disagree with that config's
layout.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .model import ModelConfig, ModelConfigError, Transformer, model_from_arrays

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "freezelab.checkpoint/1"


class CheckpointError(ValueError):
    """Checkpoint file is missing, from another format, or inconsistent."""


def _npz_path(path) -> Path:
    p = Path(path)
    return p if p.suffix == ".npz" else p.with_suffix(p.suffix + ".npz")


def save_checkpoint(model: Transformer, path, extra: Optional[Dict] = None) -> Path:
    target = _npz_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "params": [{"name": p.name, "shape": list(p.shape), "tag": asdict(p.tag),
                    "trainable": p.trainable} for p in model.registry],
        "extra": extra or {},
    }
    arrays = {f"p{i}": p.tensor.data for i, p in enumerate(model.registry)}
    np.savez(target, __manifest__=np.array(json.dumps(manifest, sort_keys=True)), **arrays)
    logger.info(f"checkpoint written: {target} ({model.registry.total} params)")
    return target


def load_checkpoint(path) -> Tuple[Transformer, Dict]:
    """(model, extra). Frozen flags are restored as saved."""
    source = _npz_path(path)
    if not source.is_file():
        raise CheckpointError(f"checkpoint not found: {source}")
    with np.load(source, allow_pickle=False) as archive:
        if "__manifest__" not in archive.files:
            raise CheckpointError(f"{source} has no manifest")
        manifest = json.loads(str(archive["__manifest__"]))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(
                f"{source}: format {manifest.get('format')!r}, expected {CHECKPOINT_FORMAT!r}")
        entries = manifest["params"]
        arrays = {e["name"]: archive[f"p{i}"] for i, e in enumerate(entries)}
    try:
        config = ModelConfig.from_dict(manifest["config"])
        model = model_from_arrays(config, arrays, {e["name"]: e["trainable"] for e in entries})
    except ModelConfigError as exc:
        raise CheckpointError(f"{source}: {exc}") from exc
    if len(entries) != len(model.registry):
        raise CheckpointError(
            f"{source}: {len(entries)} stored parameters, layout has {len(model.registry)}")
    for e in entries:
        expected = asdict(model.registry[e["name"]].tag)
        if e.get("tag") != expected:
            raise CheckpointError(f"{source}: {e['name']} stored with tag {e.get('tag')}, "
                                  f"layout has {expected}")
    return model, manifest.get("extra", {})
