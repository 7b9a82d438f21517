"""
Preset registry - the single source of truth for what a preset name
MEANS: its ModelConfig, whether it is a full-size accounting target or
a desk-scale training config, and (for full-size presets) the total
parameter count it is expected to land on.

Doctrine:
- Full-size presets are COUNTED, never materialised: accounting walks
  their shape-only layout. Their `total_target` is the published model
  size; `total_tolerance` is the relative slack the count may take.
- Desk presets are what ablation rows actually train. Their
  vocab_size is a ceiling: a run swaps in the task vocabulary's size
  (see `Preset.config_for_vocab`).
- Every preset names the accounting preset it stands in for
  (`stands_for`), so a grid row can say "train desk-att-div8, report
  ratios against big-att-div8" without the pairing living in two
  places.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from lib.model import MODE_LM, SELF_SSRU, ModelConfig, ModelConfigError

SCALE_FULL = "full"
SCALE_DESK = "desk"


class UnknownPresetError(KeyError):
    """Preset name not in the registry."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown preset"


@dataclass(frozen=True)
class Preset:
    name: str
    config: ModelConfig
    scale: str
    stands_for: Optional[str] = None
    total_target: Optional[int] = None
    total_tolerance: float = 0.02
    note: str = ""

    def config_for_vocab(self, vocab_size: int) -> ModelConfig:
        if vocab_size > self.config.vocab_size:
            raise ModelConfigError(
                f"preset {self.name} allows at most {self.config.vocab_size} tokens, task has {vocab_size}")
        return self.config.with_vocab(vocab_size)


def _full(name, note, total, tolerance=0.02, **overrides) -> Preset:
    base = dict(vocab_size=36000, d_model=1024, d_ff=4096, n_heads=8, n_enc_layers=6, n_dec_layers=6)
    base.update(overrides)
    return Preset(name, ModelConfig(**base), SCALE_FULL, None, total, tolerance, note)


def _desk(name, stands_for, note, **overrides) -> Preset:
    base = dict(vocab_size=64, d_model=64, d_ff=256, n_heads=2, n_enc_layers=2, n_dec_layers=2,
                max_len=64)
    base.update(overrides)
    return Preset(name, ModelConfig(**base), SCALE_DESK, stands_for, None, 0.02, note)


_PRESET_LIST: Tuple[Preset, ...] = (
    _full("big", "transformer-big, 36k shared vocab", 213_000_000),
    _full("big-emb128", "big with d_model 128", 18_000_000, 0.05, d_model=128),
    _full("big-ffn1024", "big with d_ff 1024", 137_000_000, d_ff=1024),
    _full("big-att-div8", "big with per-head d_kq = d_v = 16", 147_000_000, d_kq=16, d_v=16),
    _full("base", "transformer-base", 62_600_000, d_model=512, d_ff=2048),
    _full("student", "SSRU-decoder student", 16_900_000,
          vocab_size=32000, d_model=256, d_ff=1536, n_dec_layers=2, decoder_self=SELF_SSRU),
    _full("lm-base", "decoder-only language model", 38_000_000, 0.08,
          vocab_size=32000, d_model=512, d_ff=2048, n_enc_layers=0, mode=MODE_LM),

    _desk("desk-translation", "big", "desk analog of big"),
    _desk("desk-emb8", "big-emb128", "d_model divided by 8", d_model=8),
    _desk("desk-ffn64", "big-ffn1024", "d_ff divided by 4", d_ff=64),
    _desk("desk-att-div8", "big-att-div8", "per-head dims divided by 8", d_kq=4, d_v=4, d_ff=512),
    _desk("desk-base", "base", "half-width desk model", d_model=32, d_ff=128),
    _desk("desk-student", "student", "SSRU decoder, deep encoder",
          d_model=32, d_ff=192, n_enc_layers=3, n_dec_layers=1, decoder_self=SELF_SSRU),
    _desk("desk-lm", "lm-base", "character language model",
          n_enc_layers=0, mode=MODE_LM, max_len=128),
    _desk("toy-gradcheck", None, "smallest model with every component",
          vocab_size=11, d_model=8, d_ff=16, n_enc_layers=1, n_dec_layers=1, max_len=16),
)

PRESETS: Dict[str, Preset] = {p.name: p for p in _PRESET_LIST}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise UnknownPresetError(
            f"unknown preset {name!r} (supported: {', '.join(PRESETS)})") from None


def full_presets() -> Tuple[Preset, ...]:
    return tuple(p for p in _PRESET_LIST if p.scale == SCALE_FULL)
