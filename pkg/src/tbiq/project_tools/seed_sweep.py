from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional

import pandas as pd

from ..config_utils import resolve_study_config
from ..pipeline import create_run_dir, resolve_out_dir, save_frame, setup_logging
from ..study_config import StudySpec, config_dict

logger = logging.getLogger("tbiq")

DEFAULT_SEEDS = (0, 1, 2)
# AUC(SR) may exceed AUC(LR) by this much and still count as "no gain"
AUC_SLACK = 0.01

SEED_SUMMARY_COLUMNS = ["sweep_value", "resolution", "observer", "n_seeds", "auc_mean", "auc_std", "auc_min", "auc_max"]
SR_VS_LR_COLUMNS = [
    "sweep_value",
    "observer",
    "n_seeds",
    "sr_gt_lr",
    "sr_gt_lr_disjoint_ci",
    "sr_le_lr_plus_slack",
    "mean_difference",
]


def _resolve_output_path(path_text: str) -> Path:
    candidate = Path(path_text).expanduser()
    if candidate.is_absolute():
        return candidate
    return (Path.cwd() / candidate).resolve()


def _parse_int_list(values: list[str]) -> list[int]:
    items: list[int] = []
    for entry in values:
        for part in str(entry).split(","):
            text = part.strip()
            if not text:
                continue
            items.append(int(text))
    return items


def seed_summary(report: pd.DataFrame) -> pd.DataFrame:
    """Mean and spread of AUC across seeds per (sweep value, resolution, observer)."""
    ok = report[(report["status"] == "ok") & report["auc"].notna()]
    if ok.empty:
        return pd.DataFrame(columns=SEED_SUMMARY_COLUMNS)
    grouped = ok.groupby(["sweep_value", "resolution", "observer"], sort=True)["auc"]
    out = grouped.agg(n_seeds="count", auc_mean="mean", auc_std="std", auc_min="min", auc_max="max").reset_index()
    out["auc_std"] = out["auc_std"].fillna(0.0)
    return out[SEED_SUMMARY_COLUMNS]


def sr_vs_lr(report: pd.DataFrame, slack: float = AUC_SLACK) -> pd.DataFrame:
    """Per (sweep value, observer): in how many seeds SR beat LR, beat it with disjoint CIs, or stayed within ``slack``."""
    ok = report[(report["status"] == "ok") & report["auc"].notna()]
    keys = ["sweep_value", "observer", "seed"]
    sr = ok[ok["resolution"] == "SR"].set_index(keys)[["auc", "ci_lo", "ci_hi"]]
    lr = ok[ok["resolution"] == "LR"].set_index(keys)[["auc", "ci_lo", "ci_hi"]]
    paired = sr.join(lr, lsuffix="_sr", rsuffix="_lr", how="inner").reset_index()
    if paired.empty:
        return pd.DataFrame(columns=SR_VS_LR_COLUMNS)
    paired["diff"] = paired["auc_sr"] - paired["auc_lr"]
    paired["gt"] = paired["diff"] > 0
    paired["gt_disjoint"] = paired["ci_lo_sr"] > paired["ci_hi_lr"]
    paired["le_slack"] = paired["auc_sr"] <= paired["auc_lr"] + float(slack)
    grouped = paired.groupby(["sweep_value", "observer"], sort=True)
    out = grouped.agg(
        n_seeds=("seed", "count"),
        sr_gt_lr=("gt", "sum"),
        sr_gt_lr_disjoint_ci=("gt_disjoint", "sum"),
        sr_le_lr_plus_slack=("le_slack", "sum"),
        mean_difference=("diff", "mean"),
    ).reset_index()
    for col in ("sr_gt_lr", "sr_gt_lr_disjoint_ci", "sr_le_lr_plus_slack"):
        out[col] = out[col].astype(int)
    return out[SR_VS_LR_COLUMNS]


def run_seeds(
    study: StudySpec,
    task,
    seeds: list[int],
    out_dir: Path,
    *,
    run_name_prefix: Optional[str] = None,
) -> tuple[pd.DataFrame, list[int]]:
    """One full study per seed; returns the combined report and the seeds that raised."""
    from ..studies import run_study

    base = run_name_prefix or study.run_name
    reports: list[pd.DataFrame] = []
    failed: list[int] = []
    for seed in seeds:
        seeded = replace(study, seed=int(seed), output=replace(study.output, run_name=f"{base}_seed{seed}"))
        run = create_run_dir(out_dir, seeded.run_name, config_dict(seeded, task))
        logger.info("Seed %d -> %s", seed, run.run_dir)
        try:
            result = run_study(seeded, task, run=run)
        except Exception as exc:
            logger.error("Seed %d failed: %s", seed, exc)
            failed.append(int(seed))
            continue
        frame = result.report.copy()
        frame["run_dir"] = str(run.run_dir)
        reports.append(frame)
    combined = pd.concat(reports, ignore_index=True) if reports else pd.DataFrame()
    return combined, failed


def add_seed_args(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    parser.add_argument(
        "--config",
        default=None,
        help="Base config path or built-in name (default: packaged default.yml)",
    )
    parser.add_argument(
        "--seed",
        action="append",
        default=None,
        help="Comma-separated master seeds (repeatable, default: 0,1,2)",
    )
    parser.add_argument(
        "--out-dir",
        default=None,
        help="Run output directory (default: $TBIQ_OUT_DIR, then output.dir)",
    )
    parser.add_argument(
        "--output",
        default=None,
        help="Combined report CSV (default: <out-dir>/seeds_<run name>.csv)",
    )
    parser.add_argument(
        "--run-name-prefix",
        default=None,
        help="Optional prefix for run_name (default: study name)",
    )
    parser.add_argument("--threads", type=int, default=None, help="torch intra-op threads")
    parser.add_argument(
        "--log-level",
        default=None,
        choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"],
        help="Logging level (default: logging.level from the config)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Repeat a study over several master seeds")
    add_seed_args(parser)
    args = parser.parse_args(argv)

    study, task = resolve_study_config(args.config).parse()
    setup_logging({"logging": {"level": study.log_level, "file": study.log_file}}, args.log_level)
    threads = args.threads or study.threads
    if threads:
        import torch

        torch.set_num_threads(int(threads))

    seeds = list(dict.fromkeys(_parse_int_list(args.seed or [",".join(map(str, DEFAULT_SEEDS))])))
    if not seeds:
        raise SystemExit("No seeds given.")
    if any(seed < 0 for seed in seeds):
        raise SystemExit("--seed values must be >= 0.")

    out_dir = resolve_out_dir(args.out_dir, study.output.dir)
    base = args.run_name_prefix or study.run_name
    output_path = _resolve_output_path(args.output) if args.output else _resolve_output_path(
        str(out_dir / f"seeds_{base}.csv")
    )
    output_path.parent.mkdir(parents=True, exist_ok=True)

    logger.info("Running %s over %d seeds ...", study.name, len(seeds))
    combined, failed = run_seeds(study, task, seeds, out_dir, run_name_prefix=base)
    if combined.empty:
        raise SystemExit("Every seed failed; nothing to summarize.")
    save_frame(combined, output_path)
    summary_path = output_path.with_name(f"{output_path.stem}_summary.csv")
    save_frame(seed_summary(combined), summary_path, allow_empty=True)
    compare_path = output_path.with_name(f"{output_path.stem}_sr_vs_lr.csv")
    save_frame(sr_vs_lr(combined), compare_path, allow_empty=True)
    logger.info("Summary written to %s", summary_path)
    if failed:
        logger.warning("Seeds that failed: %s", ", ".join(map(str, failed)))
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
