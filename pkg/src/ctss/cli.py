"""Command-line entry point: ``ctss generate|run|report``.

Exit codes: 0 success, 2 configuration/validation problem, 3 numeric failure,
4 file-format or I/O problem. Set CTSS_LOG_LEVEL (DEBUG/INFO/WARNING/...) to
control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, load_config
from .coteaching import write_selection_log
from .data import generate_cohort, load_raw, save_raw
from .errors import DataFormatError, NumericError, ValidationError
from .evaluate import run_loso, write_results_csv, write_summary_json
from .models import save_checkpoint

log = logging.getLogger("ctss")


def _setup_logging() -> None:
    level = os.environ.get("CTSS_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_or_default_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return load_config(path)


def cmd_generate(args) -> int:
    cfg = _load_or_default_config(args.config)
    generator = cfg.generator if args.seed is None else replace(cfg.generator, seed=args.seed)
    cohort = generate_cohort(generator)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_raw(cohort, out)
    log.info("wrote %d subjects to %s", len(cohort), out)
    print(f"generated cohort: {len(cohort)} subjects -> {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_or_default_config(args.config)
    run_cfg = cfg.run
    if args.method is not None:
        run_cfg = replace(run_cfg, method=args.method)
    if args.seed is not None:
        run_cfg = replace(run_cfg, master_seed=args.seed)
    if args.parallel_folds is not None:
        run_cfg = replace(run_cfg, parallel_folds=args.parallel_folds)
    out_dir = Path(args.out if args.out is not None else run_cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if run_cfg.cohort_file:
        cohort = load_raw(run_cfg.cohort_file)
        log.info("loaded cohort of %d subjects from %s", len(cohort), run_cfg.cohort_file)
    else:
        cohort = generate_cohort(cfg.generator)
        log.info("generated cohort of %d subjects", len(cohort))

    started = time.time()
    run = run_loso(
        cohort,
        run_cfg.method,
        cfg.model_config(),
        cfg.coteach,
        cfg.generator,
        master_seed=run_cfg.master_seed,
        val_ratio=run_cfg.val_ratio,
        parallel_folds=run_cfg.parallel_folds,
        config_echo=cfg.to_dict(),
    )
    elapsed = time.time() - started

    write_results_csv(run, out_dir / "results.csv")
    write_summary_json(run, out_dir / "summary.json")
    for fold in run.folds:
        fold_dir = out_dir / f"fold_{fold.record.target_subject:03d}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(fold.checkpoint.model, fold_dir / "checkpoint.bin")
        if fold.selection_records:
            write_selection_log(fold.selection_records, fold_dir / "selections.jsonl")
    manifest = {
        "command": "run",
        "config": cfg.to_dict(),
        "method": run_cfg.method,
        "master_seed": run_cfg.master_seed,
        "version": __version__,
        "wall_time_seconds": elapsed,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"{run_cfg.method}: mean balanced accuracy "
          f"{run.summary.mean_balanced_accuracy:.4f} "
          f"(std {run.summary.std_balanced_accuracy:.4f}) over {len(run.folds)} folds -> {out_dir}")
    return 0


def format_report(summary: dict) -> str:
    """Fixed-width per-subject table plus Avg./Std. and selection frequencies."""
    folds = sorted(summary["folds"], key=lambda f: f["target_subject"])
    header = ["Model"] + [str(f["target_subject"]) for f in folds] + ["Avg.", "Std."]
    row = [summary["method"]] + [f"{100 * f['balanced_accuracy']:.2f}" for f in folds]
    row += [f"{100 * summary['mean_balanced_accuracy']:.2f}",
            f"{100 * summary['std_balanced_accuracy']:.2f}"]
    widths = [max(len(h), len(v)) for h, v in zip(header, row)]
    lines = [
        "Balanced accuracy (%) per held-out subject",
        "  ".join(h.rjust(w) for h, w in zip(header, widths)),
        "  ".join(v.rjust(w) for v, w in zip(row, widths)),
    ]
    freqs = summary.get("selection_frequencies") or {}
    if freqs:
        lines.append("")
        lines.append("Selection frequency per source subject (final window, f/g pooled)")
        lines.append("  ".join(f"{sid}:{freqs[sid]:.3f}" for sid in sorted(freqs, key=int)))
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise DataFormatError(f"no summary.json in {run_dir}; is this a finished run directory?")
    with open(summary_path, "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    text = format_report(summary)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctss",
        description="Confidence-aware cross-subject training with dual-network subject selection.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic cohort file")
    p_gen.add_argument("--config", help="experiment config (INI); defaults apply when omitted")
    p_gen.add_argument("--out", required=True, help="output cohort file")
    p_gen.add_argument("--seed", type=int, help="override generator seed")
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="run the leave-one-subject-out experiment")
    p_run.add_argument("--config", help="experiment config (INI); defaults apply when omitted")
    p_run.add_argument("--out", help="output directory (overrides run.out_dir)")
    p_run.add_argument("--seed", type=int, help="override master seed")
    p_run.add_argument("--method", choices=("coteach", "baseline"), help="override run.method")
    p_run.add_argument("--parallel-folds", type=int, dest="parallel_folds",
                       help="train folds in up to K worker processes")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="print tables for a finished run directory")
    p_rep.add_argument("run_dir", help="directory written by 'ctss run'")
    p_rep.add_argument("--out", help="also write the text report to this file")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
