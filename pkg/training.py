"""
Training loop - Adam, freeze schedule, stall-based early stopping
=================================================================

One run = one model, one task, one freeze spec, one seed:

  1. apply_freeze at initialisation; Adam state only for what is
     still trainable.
  2. Each epoch starts with freeze_at_epoch_hook (scheduled freezes
     land on epoch boundaries, and their Adam moments are dropped).
  3. After every `eval_every` epochs: dev perplexity, plus greedy dev
     BLEU in translation mode. Training stops once either metric has
     failed to improve on its best `stall_patience_*` evaluations in
     a row, or at max_epochs.
  4. The parameters of the best evaluation (BLEU in translation, PPL
     for language models) are restored and that evaluation is what
     the RunRecord reports.

A non-finite training loss aborts the run with TrainingDivergedError;
the harness marks the row failed and keeps going.

Everything except `wall_clock` is deterministic in (model seed, task,
spec, TrainConfig). wall_clock never reaches a report.
"""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from freezing import FreezeReport, apply_freeze, freeze_at_epoch_hook, parse_freeze_spec
from lib.data import TaskData, batch_iter
from lib.evaluation import dev_bleu, perplexity
from lib.model import MODE_TRANSLATION, Transformer
from lib.optim import AdamConfig, AdamState, adam_step
from lib.tensor_engine import Tape, backward

logger = logging.getLogger(__name__)

METRIC_BLEU = "bleu"
METRIC_PPL = "ppl"

STOP_STALLED_PPL = "stalled_ppl"
STOP_STALLED_BLEU = "stalled_bleu"
STOP_MAX_EPOCHS = "max_epochs"


class TrainConfigError(ValueError):
    """A TrainConfig field is out of range or unknown."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float, run_id: str = ""):
        self.step = step
        self.loss = loss
        self.run_id = run_id
        super().__init__(f"[{run_id}] training diverged at step {step}: loss={loss}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    stall_patience_ppl: int = 10
    stall_patience_bleu: int = 50
    eval_every: int = 1
    eval_batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "stall_patience_ppl",
                     "stall_patience_bleu", "eval_every", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise TrainConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        try:
            self.adam
        except ValueError as exc:
            raise TrainConfigError(str(exc)) from exc

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)

    def with_overrides(self, **overrides) -> "TrainConfig":
        return replace(self, **overrides)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise TrainConfigError(f"unknown train config field(s): {', '.join(unknown)}")
        return cls(**data)


class StallTracker:
    """Counts consecutive evaluations that fail to beat the best so far."""

    def __init__(self, patience: int, higher_is_better: bool):
        self.patience = patience
        self.higher_is_better = higher_is_better
        self.best: Optional[float] = None
        self.stalls = 0

    def update(self, value: float) -> bool:
        """True when `value` is a new best."""
        better = (self.best is None
                  or (value > self.best if self.higher_is_better else value < self.best))
        if better:
            self.best = value
            self.stalls = 0
        else:
            self.stalls += 1
        return better

    @property
    def exhausted(self) -> bool:
        return self.stalls >= self.patience


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_ppl: Optional[float] = None
    dev_bleu: Optional[float] = None


RUN_FIELDS = ("run_id", "freeze_spec", "seed", "ratio", "epochs_to_converge",
              "epochs_trained", "final_metric", "final_bleu", "final_ppl", "stop_reason")
METRIC_FIELDS = ("epoch", "train_loss", "dev_ppl", "dev_bleu")


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


@dataclass
class RunRecord:
    run_id: str
    freeze_spec: str
    seed: int
    ratio: float
    metric: str
    epochs: List[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    epochs_trained: int = 0
    stop_reason: str = STOP_MAX_EPOCHS
    warnings: List[str] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def epochs_to_converge(self) -> int:
        return self.best_epoch

    def _best(self) -> Optional[EpochMetrics]:
        for e in self.epochs:
            if e.epoch == self.best_epoch:
                return e
        return None

    @property
    def final_bleu(self) -> Optional[float]:
        best = self._best()
        return best.dev_bleu if best else None

    @property
    def final_ppl(self) -> Optional[float]:
        best = self._best()
        return best.dev_ppl if best else None

    @property
    def final_metric(self) -> Optional[float]:
        return self.final_bleu if self.metric == METRIC_BLEU else self.final_ppl

    def as_row(self) -> Dict[str, str]:
        return {
            "run_id": self.run_id, "freeze_spec": self.freeze_spec, "seed": str(self.seed),
            "ratio": f"{self.ratio:.6f}", "epochs_to_converge": str(self.epochs_to_converge),
            "epochs_trained": str(self.epochs_trained), "final_metric": _fmt(self.final_metric),
            "final_bleu": _fmt(self.final_bleu), "final_ppl": _fmt(self.final_ppl),
            "stop_reason": self.stop_reason,
        }

    def metric_rows(self) -> List[Dict[str, str]]:
        return [{"epoch": str(e.epoch), "train_loss": _fmt(e.train_loss),
                 "dev_ppl": _fmt(e.dev_ppl), "dev_bleu": _fmt(e.dev_bleu)} for e in self.epochs]


def write_runs_csv(records: List[RunRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RUN_FIELDS, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow(record.as_row())


def write_metrics_csv(record: RunRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(record.metric_rows())


def _train_step(model: Transformer, batch, state: AdamState, step: int,
                cfg: TrainConfig, run_id: str) -> float:
    trainable = model.registry.trainable()
    for p in trainable:
        p.tensor.zero_grad()
    with Tape():
        loss = model.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value, run_id)
        backward(loss)
    adam_step(trainable, state, step, cfg.adam)
    return value


def train(model: Transformer, data: TaskData, freeze_spec=None, cfg: TrainConfig = TrainConfig(),
          run_id: str = "run",
          epoch_callback: Optional[Callable[[int, Transformer], None]] = None) -> RunRecord:
    """Train `model` in place and return the record of its best evaluation."""
    started = time.perf_counter()
    spec = parse_freeze_spec(freeze_spec)
    report: FreezeReport = apply_freeze(model.registry, spec)
    state = AdamState.for_parameters(model.registry)
    translation = model.config.mode == MODE_TRANSLATION
    record = RunRecord(run_id=run_id, freeze_spec=str(spec), seed=cfg.seed, ratio=report.ratio,
                       metric=METRIC_BLEU if translation else METRIC_PPL)
    ppl_tracker = StallTracker(cfg.stall_patience_ppl, higher_is_better=False)
    bleu_tracker = StallTracker(cfg.stall_patience_bleu, higher_is_better=True) if translation else None
    primary = bleu_tracker if translation else ppl_tracker
    best_snapshot = None
    step = 0
    logger.info(f"[{run_id}] start: spec={spec} ratio={report.ratio:.4f} "
                f"trainable={model.registry.n_trainable}/{model.registry.total}")

    for epoch in range(1, cfg.max_epochs + 1):
        hook = freeze_at_epoch_hook(model.registry, spec, epoch, state)
        for w in hook.warnings:
            if w not in record.warnings:
                record.warnings.append(w)

        losses = []
        for batch in batch_iter(data.train, cfg.batch_size, cfg.seed, epoch):
            step += 1
            losses.append(_train_step(model, batch, state, step, cfg, run_id))
        metrics = EpochMetrics(epoch, float(np.mean(losses)))
        record.epochs.append(metrics)
        record.epochs_trained = epoch
        if epoch_callback is not None:
            epoch_callback(epoch, model)

        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            metrics.dev_ppl = perplexity(model, data.dev, cfg.eval_batch_size)
            if translation:
                metrics.dev_bleu = dev_bleu(model, data.dev, cfg.eval_batch_size)
            ppl_tracker.update(metrics.dev_ppl)
            if bleu_tracker is not None:
                bleu_tracker.update(metrics.dev_bleu)
            if primary.stalls == 0:
                record.best_epoch = epoch
                best_snapshot = model.registry.snapshot()
            logger.info(f"[{run_id}] epoch {epoch}: loss={metrics.train_loss:.4f} "
                        f"ppl={metrics.dev_ppl:.3f}"
                        + (f" bleu={metrics.dev_bleu:.2f}" if translation else ""))
            if ppl_tracker.exhausted:
                record.stop_reason = STOP_STALLED_PPL
                break
            if bleu_tracker is not None and bleu_tracker.exhausted:
                record.stop_reason = STOP_STALLED_BLEU
                break

    never_frozen = [name for name in report.pending if model.registry[name].trainable]
    if never_frozen:
        w = (f"stopped after epoch {record.epochs_trained} with {len(never_frozen)} scheduled freezes "
             f"not yet applied; ratio {report.ratio:.4f} counts them as frozen")
        record.warnings.append(w)
        logger.warning(f"[{run_id}] {w}")

    if best_snapshot is not None:
        model.registry.restore(best_snapshot)
    record.wall_clock = time.perf_counter() - started
    logger.info(f"[{run_id}] done: best epoch {record.best_epoch} of {record.epochs_trained}, "
                f"{record.metric}={_fmt(record.final_metric)} ({record.stop_reason})")
    return record
