"""
Freeze specs - what a run holds fixed, and when
===============================================

A freeze spec is a comma-separated list of selector items:

    [!]path[@diag][@epoch=N]

  path      emb | att | ffn | att.self | att.context | att.enc |
            att.dec | ffn.enc | ffn.dec
  !         subtract this selection from the positive items
  @diag     overwrite the selected weight matrices with the rectangular
            identity before freezing (ATT/FFN only)
  @epoch=N  keep training for N epochs, freeze at the start of epoch
            N+1 (epochs are 1-indexed; N=0 means frozen from init)

"none" or "" is the empty spec (the baseline row). Positive items must
each select something and must not overlap: "att,att.self" is an
error, not a no-op. OTHER-tagged parameters (biases, layer norms) are
never selected.

Doctrine:
- Frozen means requires_grad=False and no optimizer state. Values stay
  bit-identical for the rest of the run.
- A glorot freeze keeps the build-time draw (the model is always built
  with Glorot weights); applying the same spec twice is a no-op.
- Resolution works on anything with .name and .tag, so the same code
  freezes a live registry and counts a shape-only layout.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lib.model import (
    ATT_CONTEXT, ATT_SELF, GROUP_ATT, GROUP_EMB, GROUP_FFN, GROUPS, MATRIX_ROLES,
    SIDE_DECODER, SIDE_ENCODER, ComponentTag, ParameterRegistry, glorot_array,
)
from lib.tensor_engine import Tensor

logger = logging.getLogger(__name__)

INIT_GLOROT = "glorot"
INIT_DIAGONAL = "diagonal"

# path -> (group, att_kind, side); None matches anything
SELECTORS: Dict[str, Tuple[str, Optional[str], Optional[str]]] = {
    "emb": (GROUP_EMB, None, None),
    "att": (GROUP_ATT, None, None),
    "ffn": (GROUP_FFN, None, None),
    "att.self": (GROUP_ATT, ATT_SELF, None),
    "att.context": (GROUP_ATT, ATT_CONTEXT, None),
    "att.enc": (GROUP_ATT, None, SIDE_ENCODER),
    "att.dec": (GROUP_ATT, None, SIDE_DECODER),
    "ffn.enc": (GROUP_FFN, None, SIDE_ENCODER),
    "ffn.dec": (GROUP_FFN, None, SIDE_DECODER),
}

EMPTY_SPELLINGS = ("", "none")


class FreezeSpecError(ValueError):
    """Selector text does not parse."""


class EmptySelectionError(FreezeSpecError):
    """A positive selector matches no parameter of the model."""


class OverlappingSelectionError(FreezeSpecError):
    """Two positive selectors claim the same parameter."""


class UnsupportedInitError(FreezeSpecError):
    """Diagonal init requested for something that is not an ATT/FFN matrix."""


def selector_matches(path: str, tag: ComponentTag) -> bool:
    group, kind, side = SELECTORS[path]
    return (tag.group == group
            and (kind is None or tag.att_kind == kind)
            and (side is None or tag.side == side))


@dataclass(frozen=True)
class FreezeRule:
    path: str
    init_kind: str = INIT_GLOROT
    freeze_at_epoch: int = 0
    negated: bool = False

    def __str__(self) -> str:
        if self.negated:
            return f"!{self.path}"
        text = self.path
        if self.init_kind == INIT_DIAGONAL:
            text += "@diag"
        if self.freeze_at_epoch:
            text += f"@epoch={self.freeze_at_epoch}"
        return text


@dataclass(frozen=True)
class FreezeSpec:
    rules: Tuple[FreezeRule, ...] = ()

    def __str__(self) -> str:
        return ",".join(str(r) for r in self.rules) or "none"

    @property
    def is_empty(self) -> bool:
        return not self.rules

    @property
    def positives(self) -> Tuple[FreezeRule, ...]:
        return tuple(r for r in self.rules if not r.negated)

    @property
    def negatives(self) -> Tuple[FreezeRule, ...]:
        return tuple(r for r in self.rules if r.negated)

    @property
    def frozen_selectors(self) -> Tuple[str, ...]:
        return tuple(r.path for r in self.positives)

    @property
    def freeze_at_epoch(self) -> Optional[int]:
        """Latest scheduled freeze epoch, or None when everything freezes at init."""
        scheduled = [r.freeze_at_epoch for r in self.positives if r.freeze_at_epoch]
        return max(scheduled) if scheduled else None

    @classmethod
    def parse(cls, text: str) -> "FreezeSpec":
        return parse_freeze_spec(text)


def _parse_item(item: str) -> FreezeRule:
    negated = item.startswith("!")
    body = item[1:] if negated else item
    path, *suffixes = body.split("@")
    if path not in SELECTORS:
        raise FreezeSpecError(
            f"unknown selector {path!r} in {item!r} (supported: {', '.join(SELECTORS)})")
    init_kind, epoch = INIT_GLOROT, 0
    for suffix in suffixes:
        if suffix == "diag":
            init_kind = INIT_DIAGONAL
        elif suffix == "glorot":
            init_kind = INIT_GLOROT
        elif suffix.startswith("epoch="):
            try:
                epoch = int(suffix[len("epoch="):])
            except ValueError:
                raise FreezeSpecError(f"bad epoch in {item!r}")
            if epoch < 0:
                raise FreezeSpecError(f"freeze epoch must be >= 0 in {item!r}")
        else:
            raise FreezeSpecError(
                f"unknown suffix @{suffix} in {item!r} (supported: @diag, @glorot, @epoch=N)")
    if negated and suffixes:
        raise FreezeSpecError(f"negated selector {item!r} takes no suffixes")
    if init_kind == INIT_DIAGONAL and path == "emb":
        raise UnsupportedInitError("diagonal init applies to attention/FFN matrices, not emb")
    return FreezeRule(path, init_kind, epoch, negated)


def parse_freeze_spec(text: Optional[str]) -> FreezeSpec:
    if text is None:
        return FreezeSpec()
    if isinstance(text, FreezeSpec):
        return text
    stripped = text.strip()
    if stripped.lower() in EMPTY_SPELLINGS:
        return FreezeSpec()
    items = [part.strip() for part in stripped.split(",")]
    if any(not part for part in items):
        raise FreezeSpecError(f"empty selector item in {text!r}")
    rules = tuple(_parse_item(part) for part in items)
    if not any(not r.negated for r in rules):
        raise FreezeSpecError(f"{text!r} only subtracts; name at least one positive selector")
    return FreezeSpec(rules)


def resolve(items: Sequence, spec: FreezeSpec) -> List[Tuple[object, FreezeRule]]:
    """(item, rule) for every selected item, in input order.

    `items` are Parameters or ParamSlots; anything with .name and .tag.
    """
    items = list(items)
    claimed: Dict[str, FreezeRule] = {}
    for rule in spec.positives:
        matched = [it for it in items if selector_matches(rule.path, it.tag)]
        if not matched:
            raise EmptySelectionError(f"selector {rule} matches no parameter of this model")
        for it in matched:
            if it.name in claimed:
                raise OverlappingSelectionError(
                    f"selectors {claimed[it.name]} and {rule} both select {it.name}")
            claimed[it.name] = rule
    for rule in spec.negatives:
        dropped = [it.name for it in items if it.name in claimed and selector_matches(rule.path, it.tag)]
        if not dropped:
            raise EmptySelectionError(f"{rule} removes nothing from the selection")
        for name in dropped:
            del claimed[name]
    if spec.positives and not claimed:
        raise EmptySelectionError(f"freeze spec {spec} resolves to an empty selection")
    return [(it, claimed[it.name]) for it in items if it.name in claimed]


# ---------------------------------------------------------------------------
# Initializers
# ---------------------------------------------------------------------------

def _matrix_shape(shape) -> Tuple[int, int]:
    shape = tuple(shape)
    if len(shape) != 2 or min(shape) < 1:
        raise UnsupportedInitError(f"initializers need a 2-D matrix shape, got {shape}")
    return shape


def glorot_init(shape, rng: np.random.Generator) -> Tensor:
    return Tensor(glorot_array(_matrix_shape(shape), rng))


def diagonal_init(shape) -> Tensor:
    """Rectangular identity: 1 where row == col, 0 elsewhere."""
    rows, cols = _matrix_shape(shape)
    return Tensor(np.eye(rows, cols, dtype=np.float64))


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------

@dataclass
class FreezeReport:
    spec: str
    affected: Tuple[str, ...]
    pending: Tuple[str, ...]
    per_group_frozen: Dict[str, int]
    total: int
    trainable_final: int
    warnings: List[str] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        """Trainable fraction once every scheduled freeze has happened."""
        return self.trainable_final / self.total


def apply_freeze(registry: ParameterRegistry, spec) -> FreezeReport:
    """Freeze (and optionally re-initialise) the parameters `spec` selects.

    Scheduled items (@epoch=N, N>0) get their diagonal overwrite now but
    stay trainable until freeze_at_epoch_hook reaches them.
    """
    spec = parse_freeze_spec(spec)
    selection = resolve(registry, spec)
    affected, pending = [], []
    per_group = {g: 0 for g in GROUPS}
    for param, rule in selection:
        if rule.init_kind == INIT_DIAGONAL:
            if param.tag.matrix_role not in MATRIX_ROLES:
                raise UnsupportedInitError(f"diagonal init not applicable to {param.name}")
            param.tensor.data[...] = diagonal_init(param.shape).data
        per_group[param.tag.group] += param.numel
        if rule.freeze_at_epoch == 0:
            param.freeze()
            affected.append(param.name)
        else:
            pending.append(param.name)
    frozen_total = sum(per_group.values())
    report = FreezeReport(
        spec=str(spec),
        affected=tuple(affected),
        pending=tuple(pending),
        per_group_frozen=per_group,
        total=registry.total,
        trainable_final=registry.total - frozen_total,
    )
    logger.info(f"freeze {report.spec}: {len(affected)} frozen now, {len(pending)} scheduled, "
                f"final trainable ratio {report.ratio:.4f}")
    return report


@dataclass
class HookResult:
    frozen_now: Tuple[str, ...] = ()
    warnings: List[str] = field(default_factory=list)


def freeze_at_epoch_hook(registry: ParameterRegistry, spec, current_epoch: int,
                         optimizer_state=None) -> HookResult:
    """Freeze every scheduled item whose start epoch (N+1) is `current_epoch`.

    Moments of newly frozen parameters are dropped from `optimizer_state`.
    An item whose start epoch has already passed while it is still
    trainable is left alone and reported as a warning.
    """
    spec = parse_freeze_spec(spec)
    if spec.is_empty:
        return HookResult()
    frozen, warnings = [], []
    for param, rule in resolve(registry, spec):
        if not param.trainable:
            continue
        start = rule.freeze_at_epoch + 1
        if current_epoch == start:
            param.freeze()
            frozen.append(param.name)
        elif current_epoch > start:
            warnings.append(f"{param.name}: freeze scheduled for the start of epoch {start} "
                            f"has already passed (now epoch {current_epoch}); left trainable")
    if frozen and optimizer_state is not None:
        optimizer_state.discard(frozen)
    if frozen:
        logger.info(f"epoch {current_epoch}: froze {len(frozen)} parameters ({spec})")
    for w in warnings:
        logger.warning(w)
    return HookResult(tuple(frozen), warnings)
