"""
Parameter accounting - per-component counts and Trainable/All ratios.

Counts come from walking the shape-only layout (lib.model.model_layout)
through the same selector resolution freezing uses, so a counted ratio
and a trained model's ratio cannot drift apart. `analytic_counts` is an
independent closed form kept as a cross-check.
"""

import csv
import io
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Union

from freezing import SELECTORS, FreezeSpec, parse_freeze_spec, resolve, selector_matches
from lib.model import (
    GROUP_ATT, GROUP_EMB, GROUP_FFN, GROUP_OTHER, GROUPS, MODE_TRANSLATION, SELF_SSRU,
    ModelConfig, model_layout,
)
from presets import get_preset

logger = logging.getLogger(__name__)

RATIO_TOLERANCE = 0.02


@dataclass(frozen=True)
class ParamBudget:
    per_group: Dict[str, int]
    per_selector: Dict[str, int]
    total: int
    trainable: int

    @property
    def frozen(self) -> int:
        return self.total - self.trainable

    @property
    def ratio(self) -> float:
        return self.trainable / self.total


def count_budget(config: ModelConfig, spec: Union[str, FreezeSpec, None] = None) -> ParamBudget:
    """Trainable/all budget of `config` once every item of `spec` is frozen.

    Scheduled items (@epoch=N) count as frozen: the budget is the one the
    run ends with.
    """
    spec = parse_freeze_spec(spec)
    layout = model_layout(config)
    per_group = {g: 0 for g in GROUPS}
    for slot in layout:
        per_group[slot.tag.group] += slot.numel
    per_selector = {path: sum(s.numel for s in layout if selector_matches(path, s.tag))
                    for path in SELECTORS}
    total = sum(per_group.values())
    frozen = sum(slot.numel for slot, _ in resolve(layout, spec))
    return ParamBudget(per_group, per_selector, total, total - frozen)


def analytic_counts(config: ModelConfig) -> Dict[str, int]:
    """Closed-form per-group counts (no layout walk)."""
    d, ff, h = config.d_model, config.d_ff, config.n_heads
    dk, dv = h * config.head_dim_kq, h * config.head_dim_v
    att_block = 2 * d * dk + 2 * d * dv
    att_bias = dk + dv + d
    norm = 2 * d
    ffn_block = 2 * d * ff
    ffn_bias = ff + d
    translation = config.mode == MODE_TRANSLATION
    if config.decoder_self == SELF_SSRU:
        dec_self, dec_self_bias = 2 * d * d, d
    else:
        dec_self, dec_self_bias = att_block, att_bias

    n_enc, n_dec = config.n_enc_layers, config.n_dec_layers
    att = n_enc * att_block + n_dec * (dec_self + (att_block if translation else 0))
    ffn = (n_enc + n_dec) * ffn_block
    other = n_enc * (att_bias + ffn_bias + 2 * norm)
    other += n_dec * (dec_self_bias + ffn_bias + 2 * norm + ((att_bias + norm) if translation else 0))
    other += norm * ((1 if n_enc else 0) + 1)
    return {GROUP_EMB: config.vocab_size * d, GROUP_ATT: att, GROUP_FFN: ffn, GROUP_OTHER: other}


# ---------------------------------------------------------------------------
# Ratio tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatioCase:
    label: str
    preset: str
    spec: str
    expected: Optional[float] = None
    config: Optional[ModelConfig] = None

    def resolved_config(self) -> ModelConfig:
        return self.config if self.config is not None else get_preset(self.preset).config


@dataclass(frozen=True)
class RatioRow:
    label: str
    preset: str
    spec: str
    ratio: float
    expected: Optional[float]
    total: int

    @property
    def delta(self) -> Optional[float]:
        return None if self.expected is None else abs(self.ratio - self.expected)

    def within(self, tolerance: float = RATIO_TOLERANCE) -> bool:
        return self.delta is None or self.delta <= tolerance + 1e-12


CSV_FIELDS = ("label", "preset", "spec", "ratio", "expected", "delta", "total")


@dataclass
class RatioTable:
    rows: List[RatioRow]

    def __len__(self) -> int:
        return len(self.rows)

    def failures(self, tolerance: float = RATIO_TOLERANCE) -> List[RatioRow]:
        return [r for r in self.rows if not r.within(tolerance)]

    def _cells(self, row: RatioRow) -> List[str]:
        return [row.label, row.preset, row.spec, f"{row.ratio:.4f}",
                "" if row.expected is None else f"{row.expected:.2f}",
                "" if row.delta is None else f"{row.delta:.4f}", str(row.total)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in self.rows:
            writer.writerow(self._cells(row))
        return buf.getvalue()

    def to_text(self) -> str:
        grid = [list(CSV_FIELDS)] + [self._cells(r) for r in self.rows]
        widths = [max(len(line[i]) for line in grid) for i in range(len(CSV_FIELDS))]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
                         for line in grid) + "\n"


def ratio_table(cases: Iterable[Union[RatioCase, Sequence]]) -> RatioTable:
    """One row per case. Tuples are read as (preset, spec[, expected])."""
    rows = []
    for case in cases:
        if not isinstance(case, RatioCase):
            preset, spec, *rest = case
            config = preset if isinstance(preset, ModelConfig) else None
            name = "inline" if config is not None else preset
            case = RatioCase(f"{name}:{spec}", name, str(spec), rest[0] if rest else None, config)
        budget = count_budget(case.resolved_config(), case.spec)
        rows.append(RatioRow(case.label, case.preset, str(parse_freeze_spec(case.spec)),
                             budget.ratio, case.expected, budget.total))
    return RatioTable(rows)
