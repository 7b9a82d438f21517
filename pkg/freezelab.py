#!/usr/bin/env python3
"""
freezelab - command line
========================

    python freezelab.py train --preset desk-translation --task substitute_shift \
        --freeze att,ffn --seed 1 --out runs/demo
    python freezelab.py evaluate --checkpoint runs/demo
    python freezelab.py count-params --preset big --freeze emb --expect 0.82
    python freezelab.py ablate --grid grids/table1.json --jobs 4 --out out/table1
    python freezelab.py report --in out/table1

Exit codes: 0 all checks pass, 1 a hard check failed (or bad input),
2 trend warnings only.

Environment:
    FREEZELAB_THREADS    BLAS/OpenMP threads per process (default 1);
                         must be set before numpy loads, so it is
                         applied here, at the top of the entry point
    FREEZELAB_MAX_JOBS   cap on --jobs (default: cpu count)
    FREEZELAB_LOG_LEVEL  logging level (default INFO)
"""

import os

_THREADS = os.getenv("FREEZELAB_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from ablate import EXIT_HARD_FAIL, EXIT_OK, ReportError, load_grid, render_report, run_grid  # noqa: E402
from accounting import RATIO_TOLERANCE, count_budget  # noqa: E402
from freezing import FreezeSpecError  # noqa: E402
from lib.checkpoint import CheckpointError, load_checkpoint, save_checkpoint  # noqa: E402
from lib.data import DataConfigError, DataError, TaskSpec, Vocab, build_task  # noqa: E402
from lib.evaluation import dev_bleu, perplexity  # noqa: E402
from lib.grid_schema import GridValidationError, SchemaRegistryError  # noqa: E402
from lib.model import MODE_TRANSLATION, ModelConfigError, build_model  # noqa: E402
from presets import PRESETS, UnknownPresetError, get_preset  # noqa: E402
from training import TrainConfig, TrainConfigError, train, write_metrics_csv, write_runs_csv  # noqa: E402

FREEZELAB_VERSION = "1.0.0"

logging.basicConfig(
    level=os.getenv("FREEZELAB_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("freezelab")

INPUT_ERRORS = (FreezeSpecError, UnknownPresetError, ModelConfigError, DataConfigError, DataError,
                TrainConfigError, CheckpointError, GridValidationError, SchemaRegistryError, ReportError)


def _task_spec(args) -> TaskSpec:
    fields = {"task": args.task, "seed": args.data_seed}
    for name in ("n_train", "n_dev", "alphabet_size", "shift", "n_lines", "max_vocab"):
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    if args.len_range:
        fields["len_range"] = tuple(args.len_range)
    if args.corpus:
        fields["path"] = str(args.corpus)
    return TaskSpec(**fields)


def cmd_train(args) -> int:
    spec = _task_spec(args)
    data = build_task(spec)
    config = get_preset(args.preset).config_for_vocab(len(data.vocab))
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                      stall_patience_ppl=args.patience_ppl, stall_patience_bleu=args.patience_bleu,
                      seed=args.seed)
    model = build_model(config, args.seed)
    record = train(model, data, args.freeze, cfg, run_id=args.run_id)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.npz",
                    extra={"task": spec.to_dict(), "preset": args.preset, "freeze": record.freeze_spec,
                           "train": cfg.to_dict()})
    data.vocab.save(out / "vocab.txt")
    write_runs_csv([record], out / "run.csv")
    write_metrics_csv(record, out / "metrics.csv")
    print(f"{record.run_id}: ratio {record.ratio:.4f}, best epoch {record.best_epoch} of "
          f"{record.epochs_trained}, {record.metric} {record.final_metric:.4f} ({record.stop_reason})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    src = Path(args.checkpoint)
    model, extra = load_checkpoint(src / "model.npz" if src.is_dir() else src)
    folder = src if src.is_dir() else src.parent
    spec = TaskSpec.from_dict(extra["task"])
    vocab = Vocab.load(folder / "vocab.txt", spec.level)
    data = build_task(spec, vocab)
    result = {"ppl": perplexity(model, data.dev)}
    if model.config.mode == MODE_TRANSLATION:
        result["bleu"] = dev_bleu(model, data.dev)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_count_params(args) -> int:
    budget = count_budget(get_preset(args.preset).config, args.freeze)
    print(f"preset {args.preset} | freeze {args.freeze or 'none'}")
    for group, n in budget.per_group.items():
        print(f"  {group:<6} {n:>12,}")
    print(f"  total  {budget.total:>12,}")
    print(f"  trainable {budget.trainable:,} | ratio {budget.ratio:.4f}")
    if args.expect is not None:
        delta = abs(budget.ratio - args.expect)
        ok = delta <= args.tolerance + 1e-12
        print(f"{'PASS' if ok else 'FAIL'} expect {args.expect:.2f} (|Δ| {delta:.4f}, tolerance {args.tolerance:.2f})")
        if not ok:
            return EXIT_HARD_FAIL
    return EXIT_OK


def cmd_ablate(args) -> int:
    grid = load_grid(args.grid)
    report = run_grid(grid, parallelism=args.jobs, out_dir=args.out, ratios_only=args.ratios_only)
    print("\n".join([report.header()] + report.report_lines()))
    return report.exit_code


def cmd_report(args) -> int:
    markdown, code = render_report(args.in_dir)
    print(markdown, end="")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freezelab", description="Component-freezing ablations for transformers")
    ap.add_argument("--version", action="version", version=f"freezelab {FREEZELAB_VERSION}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    p.add_argument("--preset", default="desk-translation", choices=sorted(PRESETS))
    p.add_argument("--task", default="substitute_shift")
    p.add_argument("--corpus", type=Path, default=None, help="text file for --task lm_text")
    p.add_argument("--n-train", dest="n_train", type=int, default=None)
    p.add_argument("--n-dev", dest="n_dev", type=int, default=None)
    p.add_argument("--len-range", dest="len_range", type=int, nargs=2, default=None)
    p.add_argument("--alphabet-size", dest="alphabet_size", type=int, default=None)
    p.add_argument("--shift", type=int, default=None)
    p.add_argument("--n-lines", dest="n_lines", type=int, default=None)
    p.add_argument("--max-vocab", dest="max_vocab", type=int, default=None)
    p.add_argument("--data-seed", dest="data_seed", type=int, default=7)
    p.add_argument("--freeze", default="none", help="e.g. 'att,ffn' or 'att@diag' or 'ffn@epoch=2'")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int, default=TrainConfig.max_epochs)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--patience-ppl", dest="patience_ppl", type=int, default=TrainConfig.stall_patience_ppl)
    p.add_argument("--patience-bleu", dest="patience_bleu", type=int, default=TrainConfig.stall_patience_bleu)
    p.add_argument("--run-id", dest="run_id", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="dev perplexity (and BLEU) of a saved run")
    p.add_argument("--checkpoint", required=True, help="run directory or model.npz")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("count-params", help="parameter budget of a preset under a freeze spec")
    p.add_argument("--preset", required=True)
    p.add_argument("--freeze", default="none")
    p.add_argument("--expect", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=RATIO_TOLERANCE)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("ablate", help="run a grid file")
    p.add_argument("--grid", required=True, type=Path)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--ratios-only", dest="ratios_only", action="store_true",
                   help="ratio checks only, no training")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render report.md from a grid output directory")
    p.add_argument("--in", dest="in_dir", required=True, type=Path)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HARD_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
