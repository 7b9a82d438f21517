"""
Ablation harness - grid runner, checks, reports
===============================================

A grid file (schemas/ablation_grid/) is one results table: each row is
a freeze configuration trained over several seeds on a desk-scale
preset, and ratio-checked against the full-size preset it stands for.
run_grid trains every (row, seed) job, takes medians, and evaluates:

  ratio:<row>              |counted ratio - expected| <= tolerance on
                           the full-size preset. Severity fail.
  ratio_consistency:<row>  the ratio each run reports equals the
                           counted ratio of its own trained config,
                           exactly. Severity fail.
  runs:<row>               some seeds diverged or crashed; the row is
                           marked failed and the grid keeps going.
                           Severity warn.
  run_warnings:<row>       warnings the runs recorded, such as a
                           scheduled freeze the run stopped before.
                           Severity note.
  ordering:...             declared median comparisons between rows.
                           kind "trend" warns, kind "hard" fails.
  convergence:...          opt-in: the most-frozen row needs at least
                           as many epochs as the baseline. Severity warn.

Posture:
- Severities: "fail" drives exit code 1, "warn" exit code 2 when no
  fail is present, "note" is informational, "pass".
- A crashed check is a warn (internal:*); the harness never turns its
  own bug into a hard failure.
- Determinism: no wall clock, paths or object ids in verdict text or
  summary files; rows in grid order, seeds ascending; sequential and
  parallel execution write identical reports. Wall clock goes to
  timing.csv only.
"""

import csv
import json
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from accounting import RATIO_TOLERANCE, count_budget
from freezing import FreezeSpecError, parse_freeze_spec
from lib.data import DataConfigError, TaskSpec, build_task
from lib.grid_schema import GridValidationError, load_grid_document, validate_grid
from lib.model import ModelConfig, ModelConfigError, build_model
from presets import UnknownPresetError, get_preset
from training import (
    METRIC_BLEU, METRIC_PPL, RunRecord, TrainConfig, TrainConfigError, train, write_metrics_csv,
    RUN_FIELDS,
)

logger = logging.getLogger(__name__)

ABLATE_VERSION = "1.0.0"

DEFAULT_SEEDS = (1, 2, 3)
METRIC_EPOCHS = "epochs"
DIRECTION_GREATER, DIRECTION_LESS, DIRECTION_WITHIN = "greater", "less", "within"
KIND_TREND, KIND_HARD = "trend", "hard"

SEVERITY_PASS, SEVERITY_FAIL, SEVERITY_WARN, SEVERITY_NOTE = "pass", "fail", "warn", "note"

EXIT_OK, EXIT_HARD_FAIL, EXIT_TREND_WARN = 0, 1, 2

SUMMARY_FIELDS = ("row_id", "label", "freeze", "ratio_preset", "ratio", "expected_ratio", "delta",
                  "train_ratio", "median_bleu", "median_ppl", "median_epochs", "runs_ok", "runs_failed")


class ReportError(KeyError):
    """A check names a row the report does not have."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing row"


@dataclass(frozen=True)
class HarnessConfig:
    max_jobs: int = 1

    @classmethod
    def from_env(cls) -> "HarnessConfig":
        raw = (os.getenv("FREEZELAB_MAX_JOBS") or "").strip()
        if raw.isdigit() and int(raw) > 0:
            return cls(max_jobs=int(raw))
        return cls(max_jobs=os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Grid model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    table_id: str
    row_id: str
    label: str
    freeze: str
    seeds: Tuple[int, ...]
    task: TaskSpec
    train: TrainConfig
    train_preset: Optional[str] = None
    train_model: Optional[ModelConfig] = None
    ratio_preset: Optional[str] = None
    ratio_model: Optional[ModelConfig] = None
    expected_ratio: Optional[float] = None

    def _train_base(self) -> ModelConfig:
        return self.train_model if self.train_model is not None else get_preset(self.train_preset).config

    def train_config(self, vocab_size: int) -> ModelConfig:
        base = self._train_base()
        if vocab_size > base.vocab_size:
            raise ModelConfigError(
                f"{self.table_id}: task vocabulary {vocab_size} exceeds model vocab {base.vocab_size}")
        return base.with_vocab(vocab_size)

    def ratio_config(self) -> ModelConfig:
        if self.ratio_model is not None:
            return self.ratio_model
        if self.ratio_preset is not None:
            return get_preset(self.ratio_preset).config
        return self._train_base()

    @property
    def ratio_source(self) -> str:
        if self.ratio_model is not None:
            return "inline"
        return self.ratio_preset or self.train_preset or "inline"


@dataclass(frozen=True)
class OrderingSpec:
    a: str
    metric: str
    direction: str
    b: Optional[str] = None
    value: Optional[float] = None
    kind: str = KIND_TREND
    margin: float = 0.0
    note: str = ""


@dataclass(frozen=True)
class Grid:
    grid_id: str
    title: str
    rows: Tuple[ExperimentSpec, ...]
    orderings: Tuple[OrderingSpec, ...] = ()
    ratio_tolerance: float = RATIO_TOLERANCE
    convergence_check: bool = False

    def row(self, row_id: str) -> ExperimentSpec:
        for spec in self.rows:
            if row_id in (spec.row_id, spec.table_id):
                return spec
        raise ReportError(f"grid {self.grid_id} has no row {row_id!r}")


def _invalid(source: str, path: str, message: str) -> GridValidationError:
    return GridValidationError(source, [{"path": path, "message": message, "value": None}])


def grid_from_document(document: Dict[str, Any], source: str = "<dict>") -> Grid:
    """Validate and build a Grid. Every row's freeze spec is resolved
    against both its training and its ratio config before returning."""
    validate_grid(document, source)
    grid_id = document["grid_id"]
    defaults = document.get("defaults", {})
    rows = []
    for i, raw in enumerate(document["rows"]):
        merged = {**defaults, **raw}
        path = f"rows.{i}"
        try:
            spec = ExperimentSpec(
                table_id=f"{grid_id}.{raw['row_id']}",
                row_id=raw["row_id"],
                label=merged.get("label", raw["row_id"]),
                freeze=str(parse_freeze_spec(merged["freeze"])),
                seeds=tuple(sorted(merged.get("seeds", DEFAULT_SEEDS))),
                task=TaskSpec.from_dict({**defaults.get("task", {}), **raw.get("task", {})}),
                train=TrainConfig.from_dict({**defaults.get("train", {}), **raw.get("train", {})}),
                train_preset=merged.get("train_preset"),
                train_model=ModelConfig.from_dict(merged["train_model"]) if "train_model" in merged else None,
                ratio_preset=merged.get("ratio_preset"),
                ratio_model=ModelConfig.from_dict(merged["ratio_model"]) if "ratio_model" in merged else None,
                expected_ratio=merged.get("expected_ratio"),
            )
            if spec.train_preset is None and spec.train_model is None:
                raise _invalid(source, path, "row needs train_preset or train_model")
            count_budget(spec.ratio_config(), spec.freeze)
            count_budget(spec._train_base(), spec.freeze)
        except GridValidationError:
            raise
        except (FreezeSpecError, UnknownPresetError, ModelConfigError, DataConfigError,
                TrainConfigError) as exc:
            raise _invalid(source, path, f"{type(exc).__name__}: {exc}") from exc
        rows.append(spec)

    row_ids = {r.row_id for r in rows}
    orderings = []
    for i, raw in enumerate(document.get("orderings", [])):
        for end in ("a", "b"):
            if end in raw and raw[end] not in row_ids:
                raise _invalid(source, f"orderings.{i}.{end}", f"unknown row {raw[end]!r}")
        orderings.append(OrderingSpec(**raw))
    return Grid(grid_id, document.get("title", grid_id), tuple(rows), tuple(orderings),
                document.get("ratio_tolerance", RATIO_TOLERANCE),
                document.get("convergence_check", False))


def load_grid(path) -> Grid:
    return grid_from_document(load_grid_document(path), str(path))


# ---------------------------------------------------------------------------
# Verdicts and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckVerdict:
    check: str
    ok: bool
    severity: str
    detail: Optional[str] = None

    def as_dict(self) -> Dict[str, Any]:
        return {"check": self.check, "ok": self.ok, "severity": self.severity, "detail": self.detail}


@dataclass
class RowResult:
    spec: ExperimentSpec
    budget_ratio: Optional[float] = None
    train_ratio: Optional[float] = None
    records: List[RunRecord] = field(default_factory=list)
    failures: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.failures)

    @property
    def delta(self) -> Optional[float]:
        if self.budget_ratio is None or self.spec.expected_ratio is None:
            return None
        return abs(self.budget_ratio - self.spec.expected_ratio)

    def metric_values(self, metric: str) -> List[float]:
        if metric == METRIC_EPOCHS:
            return [float(r.epochs_to_converge) for r in self.records]
        if metric == METRIC_BLEU:
            values = [r.final_bleu for r in self.records]
        elif metric == METRIC_PPL:
            values = [r.final_ppl for r in self.records]
        else:
            raise ValueError(f"unknown metric {metric!r} (supported: bleu, ppl, epochs)")
        return [v for v in values if v is not None]

    def median(self, metric: str) -> Optional[float]:
        values = self.metric_values(metric)
        return statistics.median(values) if values else None


def _num(value: Optional[float], places: int = 4) -> str:
    return "" if value is None else f"{value:.{places}f}"


@dataclass
class GridReport:
    grid: Grid
    rows: List[RowResult]
    verdicts: List[CheckVerdict] = field(default_factory=list)
    ratios_only: bool = False

    def row(self, row_id: str) -> RowResult:
        for result in self.rows:
            if row_id in (result.spec.row_id, result.spec.table_id):
                return result
        raise ReportError(f"report for grid {self.grid.grid_id} has no row {row_id!r}")

    @property
    def hard_fails(self) -> List[CheckVerdict]:
        return [v for v in self.verdicts if v.severity == SEVERITY_FAIL and not v.ok]

    @property
    def warnings(self) -> List[CheckVerdict]:
        return [v for v in self.verdicts if v.severity == SEVERITY_WARN and not v.ok]

    @property
    def exit_code(self) -> int:
        if self.hard_fails:
            return EXIT_HARD_FAIL
        return EXIT_TREND_WARN if self.warnings else EXIT_OK

    def header(self) -> str:
        word = {EXIT_OK: "Pass", EXIT_HARD_FAIL: "Fail", EXIT_TREND_WARN: "Warn"}[self.exit_code]
        mode = " | ratios only" if self.ratios_only else ""
        return (f"ablate {ABLATE_VERSION} | grid {self.grid.grid_id}{mode} | {word} "
                f"({len(self.hard_fails)} hard, {len(self.warnings)} warn)")

    def report_lines(self) -> List[str]:
        lines = []
        for v in self.verdicts:
            tag = "PASS" if v.ok else v.severity.upper()
            lines.append(f"{tag} {v.check}" + (f": {v.detail}" if v.detail else ""))
        return lines

    def summary_rows(self) -> List[Dict[str, str]]:
        out = []
        for r in self.rows:
            epochs = r.median(METRIC_EPOCHS)
            out.append({
                "row_id": r.spec.row_id, "label": r.spec.label, "freeze": r.spec.freeze,
                "ratio_preset": r.spec.ratio_source, "ratio": _num(r.budget_ratio),
                "expected_ratio": _num(r.spec.expected_ratio, 2), "delta": _num(r.delta),
                "train_ratio": _num(r.train_ratio), "median_bleu": _num(r.median(METRIC_BLEU), 2),
                "median_ppl": _num(r.median(METRIC_PPL), 3),
                "median_epochs": "" if epochs is None else f"{epochs:g}",
                "runs_ok": "" if self.ratios_only else str(len(r.records)),
                "runs_failed": "" if self.ratios_only else str(len(r.failures)),
            })
        return out

    def to_markdown(self) -> str:
        return render_markdown(self.grid.title, self.header(), self.summary_rows(), self.report_lines())

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "meta.json", "w", encoding="utf-8") as fh:
            json.dump({"grid_id": self.grid.grid_id, "title": self.grid.title,
                       "ablate_version": ABLATE_VERSION, "ratios_only": self.ratios_only},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_csv(out / "summary.csv", SUMMARY_FIELDS, self.summary_rows())
        (out / "checks.txt").write_text("\n".join([self.header()] + self.report_lines()) + "\n",
                                        encoding="utf-8")
        (out / "report.md").write_text(self.to_markdown(), encoding="utf-8")
        if not self.ratios_only:
            run_rows, timing = [], []
            (out / "metrics").mkdir(exist_ok=True)
            for r in self.rows:
                for record in r.records:
                    run_rows.append({"row_id": r.spec.row_id, **record.as_row(), "status": "ok", "error": ""})
                    timing.append({"row_id": r.spec.row_id, "seed": str(record.seed),
                                   "wall_clock_s": f"{record.wall_clock:.3f}"})
                    write_metrics_csv(record, out / "metrics" / f"{r.spec.row_id}.s{record.seed}.csv")
                for seed, error in r.failures:
                    run_rows.append({"row_id": r.spec.row_id, "run_id": f"{r.spec.table_id}.s{seed}",
                                     "freeze_spec": r.spec.freeze, "seed": str(seed),
                                     "status": "failed", "error": error})
            run_rows.sort(key=lambda row: (self._row_index(row["row_id"]), int(row["seed"])))
            _write_csv(out / "runs.csv", ("row_id",) + RUN_FIELDS + ("status", "error"), run_rows)
            timing.sort(key=lambda row: (self._row_index(row["row_id"]), int(row["seed"])))
            _write_csv(out / "timing.csv", ("row_id", "seed", "wall_clock_s"), timing)
        logger.info(f"grid {self.grid.grid_id}: report written to {out}")
        return out

    def _row_index(self, row_id: str) -> int:
        return [r.spec.row_id for r in self.rows].index(row_id)


def _write_csv(path: Path, fieldnames, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n", restval="")
        writer.writeheader()
        writer.writerows(rows)


def render_markdown(title: str, header: str, summary: List[Dict[str, str]], check_lines: List[str]) -> str:
    lines = [f"# {title}", "", f"`{header}`", "",
             "| row | label | freeze | ratio | expected | Δ | BLEU | PPL | epochs | runs ok/failed |",
             "|---|---|---|---|---|---|---|---|---|---|"]
    for s in summary:
        runs = f"{s['runs_ok']}/{s['runs_failed']}" if s["runs_ok"] else ""
        lines.append(f"| {s['row_id']} | {s['label']} | `{s['freeze']}` | {s['ratio']} | "
                     f"{s['expected_ratio']} | {s['delta']} | {s['median_bleu']} | {s['median_ppl']} | "
                     f"{s['median_epochs']} | {runs} |")
    lines += ["", "## Checks", ""]
    lines += [f"- {line}" for line in check_lines] or ["- (none)"]
    return "\n".join(lines) + "\n"


def render_report(in_dir) -> Tuple[str, int]:
    """Re-render report.md from a finished output directory: (markdown, exit code)."""
    src = Path(in_dir)
    for name in ("meta.json", "summary.csv", "checks.txt"):
        if not (src / name).is_file():
            raise ReportError(f"{src} is not a grid output directory (missing {name})")
    meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    with open(src / "summary.csv", newline="", encoding="utf-8") as fh:
        summary = list(csv.DictReader(fh))
    header, *check_lines = (src / "checks.txt").read_text(encoding="utf-8").splitlines()
    if any(line.startswith("FAIL ") for line in check_lines):
        code = EXIT_HARD_FAIL
    elif any(line.startswith("WARN ") for line in check_lines):
        code = EXIT_TREND_WARN
    else:
        code = EXIT_OK
    return render_markdown(meta.get("title", meta.get("grid_id", "")), header, summary, check_lines), code


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def _guard(verdicts: List[CheckVerdict], name: str, fn, *args) -> None:
    """A crashed check is a warn, never a hard failure."""
    try:
        out = fn(*args)
    except Exception as e:
        verdicts.append(CheckVerdict(f"internal:{name}", False, SEVERITY_WARN,
                                     f"check crashed: {type(e).__name__}: {e}"))
        return
    if out is None:
        return
    if isinstance(out, list):
        verdicts.extend(out)
    else:
        verdicts.append(out)


def check_ratio(row: RowResult, tolerance: float = RATIO_TOLERANCE) -> Optional[CheckVerdict]:
    row.budget_ratio = count_budget(row.spec.ratio_config(), row.spec.freeze).ratio
    if row.spec.expected_ratio is None:
        return None
    name = f"ratio:{row.spec.row_id}"
    ok = row.delta <= tolerance + 1e-12
    detail = (f"{row.budget_ratio:.4f} vs expected {row.spec.expected_ratio:.2f} "
              f"(|Δ| {row.delta:.4f}, tolerance {tolerance:.2f}) on {row.spec.ratio_source}")
    return CheckVerdict(name, ok, SEVERITY_PASS if ok else SEVERITY_FAIL, detail)


def check_ratio_consistency(row: RowResult) -> Optional[CheckVerdict]:
    if not row.records:
        return None
    name = f"ratio_consistency:{row.spec.row_id}"
    mismatched = [r.seed for r in row.records if r.ratio != row.train_ratio]
    if mismatched:
        return CheckVerdict(name, False, SEVERITY_FAIL,
                            f"run ratio differs from counted ratio {row.train_ratio:.6f} for seeds {mismatched}")
    return CheckVerdict(name, True, SEVERITY_PASS, f"{row.train_ratio:.6f} on the trained config")


def check_runs(row: RowResult) -> Optional[CheckVerdict]:
    if not row.failures:
        return None
    seeds = ", ".join(str(s) for s, _ in row.failures)
    return CheckVerdict(f"runs:{row.spec.row_id}", False, SEVERITY_WARN,
                        f"row failed: {len(row.failures)} of {len(row.spec.seeds)} runs did not finish "
                        f"(seeds {seeds}); first error: {row.failures[0][1]}")


def check_run_warnings(row: RowResult) -> Optional[CheckVerdict]:
    noted = sorted({w for r in row.records for w in r.warnings})
    if not noted:
        return None
    seeds = [r.seed for r in row.records if r.warnings]
    return CheckVerdict(f"run_warnings:{row.spec.row_id}", False, SEVERITY_NOTE,
                        f"seeds {seeds}: " + "; ".join(noted))


def assert_ordering(report: GridReport, row_a: str, row_b: Optional[str], metric: str,
                    direction: str, kind: str = KIND_TREND, margin: float = 0.0,
                    value: Optional[float] = None) -> CheckVerdict:
    """Compare medians of `metric`: row_a against row_b (or a constant).

    greater: pass iff median_a - median_b > margin
    less:    pass iff median_b - median_a > margin
    within:  pass iff |median_a - median_b| <= margin
    A row compared with itself passes with margin 0.
    """
    if direction not in (DIRECTION_GREATER, DIRECTION_LESS, DIRECTION_WITHIN):
        raise ValueError(f"unknown direction {direction!r} (supported: greater, less, within)")
    a = report.row(row_a)
    if row_b is None and value is None:
        raise ReportError("ordering needs a second row or a constant value")
    b = report.row(row_b) if row_b is not None else None
    op = {DIRECTION_GREATER: ">", DIRECTION_LESS: "<", DIRECTION_WITHIN: "~"}[direction]
    rhs = f"{metric}({b.spec.row_id})" if b is not None else f"{value:g}"
    name = f"ordering:{metric}({a.spec.row_id}) {op} {rhs}"
    severity = SEVERITY_FAIL if kind == KIND_HARD else SEVERITY_WARN

    if b is a:
        return CheckVerdict(name, True, SEVERITY_PASS, "self-comparison, margin +0.000")
    median_a = a.median(metric)
    median_b = b.median(metric) if b is not None else float(value)
    if median_a is None or median_b is None:
        return CheckVerdict(name, False, severity, "no successful runs to compare")
    if direction == DIRECTION_GREATER:
        observed = median_a - median_b
        ok = observed > margin
    elif direction == DIRECTION_LESS:
        observed = median_b - median_a
        ok = observed > margin
    else:
        observed = abs(median_a - median_b)
        ok = observed <= margin
    detail = f"median {median_a:.3f} vs {median_b:.3f}, margin {observed:+.3f} (required {margin:.3f})"
    return CheckVerdict(name, ok, SEVERITY_PASS if ok else severity, detail)


def check_convergence(report: GridReport) -> Optional[CheckVerdict]:
    baseline = [r for r in report.rows if parse_freeze_spec(r.spec.freeze).is_empty]
    frozen = [r for r in report.rows if r.budget_ratio is not None and r not in baseline]
    if not baseline or not frozen:
        return CheckVerdict("convergence", True, SEVERITY_NOTE, "needs a baseline row and a frozen row")
    heaviest = min(frozen, key=lambda r: r.budget_ratio)
    verdict = assert_ordering(report, heaviest.spec.row_id, baseline[0].spec.row_id,
                              METRIC_EPOCHS, DIRECTION_GREATER, KIND_TREND, margin=-1e-9)
    return CheckVerdict(verdict.check.replace("ordering:", "convergence:", 1), verdict.ok,
                        verdict.severity, verdict.detail)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def run_experiment(spec: ExperimentSpec, seed: int) -> Dict[str, Any]:
    """Train one (row, seed). Never raises: failures come back as text."""
    run_id = f"{spec.table_id}.s{seed}"
    try:
        data = build_task(spec.task)
        config = spec.train_config(len(data.vocab))
        model = build_model(config, seed)
        record = train(model, data, spec.freeze, spec.train.with_overrides(seed=seed), run_id)
        return {"seed": seed, "record": record,
                "train_ratio": count_budget(config, spec.freeze).ratio, "error": None}
    except Exception as e:
        logger.error(f"[{run_id}] run failed: {type(e).__name__}: {e}", exc_info=True)
        return {"seed": seed, "record": None, "train_ratio": None, "error": f"{type(e).__name__}: {e}"}


def _run_job(job: Tuple[ExperimentSpec, int]) -> Dict[str, Any]:
    return run_experiment(*job)


def _execute(jobs: List[Tuple[ExperimentSpec, int]], parallelism: int) -> List[Dict[str, Any]]:
    if parallelism <= 1 or len(jobs) <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(parallelism, len(jobs))) as pool:
        return list(pool.map(_run_job, jobs))


def run_grid(grid: Grid, parallelism: int = 1, out_dir=None, ratios_only: bool = False,
             config: Optional[HarnessConfig] = None) -> GridReport:
    config = config or HarnessConfig.from_env()
    workers = max(1, min(parallelism, config.max_jobs))
    rows = [RowResult(spec) for spec in grid.rows]
    report = GridReport(grid, rows, ratios_only=ratios_only)
    for row in rows:
        _guard(report.verdicts, f"ratio:{row.spec.row_id}", check_ratio, row, grid.ratio_tolerance)

    if not ratios_only:
        jobs = [(row.spec, seed) for row in rows for seed in row.spec.seeds]
        logger.info(f"grid {grid.grid_id}: {len(jobs)} runs on {workers} worker(s)")
        outcomes = _execute(jobs, workers)
        for (spec, _), outcome in zip(jobs, outcomes):
            row = report.row(spec.row_id)
            if outcome["record"] is None:
                row.failures.append((outcome["seed"], outcome["error"]))
            else:
                row.records.append(outcome["record"])
                row.train_ratio = outcome["train_ratio"]
        for row in rows:
            _guard(report.verdicts, f"ratio_consistency:{row.spec.row_id}", check_ratio_consistency, row)
            _guard(report.verdicts, f"runs:{row.spec.row_id}", check_runs, row)
            _guard(report.verdicts, f"run_warnings:{row.spec.row_id}", check_run_warnings, row)
        for o in grid.orderings:
            _guard(report.verdicts, f"ordering:{o.a}", assert_ordering, report, o.a, o.b, o.metric,
                   o.direction, o.kind, o.margin, o.value)
        if grid.convergence_check:
            _guard(report.verdicts, "convergence", check_convergence, report)

    if out_dir is not None:
        report.write(out_dir)
    logger.info(report.header())
    return report
