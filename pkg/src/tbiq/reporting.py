"""Report table I/O and AUC-vs-sweep charts."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .pipeline import atomic_write, save_frame  # noqa: E402

REPORT_COLUMNS = [
    "study",
    "sweep_value",
    "resolution",
    "observer",
    "auc",
    "ci_lo",
    "ci_hi",
    "mse",
    "psnr",
    "ssim",
    "seed",
    "status",
]
RESOLUTION_ORDER = ("HR", "LR", "SR")
SWEEP_AXIS_LABELS = {
    "signal_length_sweep": "signal length L (pixels)",
    "depth_sweep": "SRCNN layers",
    "observer_capacity": "training images",
}


def empty_report() -> pd.DataFrame:
    return pd.DataFrame(columns=REPORT_COLUMNS)


def write_csv(report: pd.DataFrame, path: str | Path) -> Path:
    """Schema-ordered CSV; an empty report still gets its header row."""
    path = Path(path)
    missing = [col for col in REPORT_COLUMNS if col not in report.columns]
    if missing:
        raise ValueError(f"Report is missing columns: {', '.join(missing)}.")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_frame(report[REPORT_COLUMNS], path, allow_empty=True)
    return path


def load_report(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [col for col in REPORT_COLUMNS if col not in frame.columns]
    if missing:
        raise ValueError(f"{path}: not a report file (missing {', '.join(missing)}).")
    for col in ("study", "resolution", "observer", "status"):
        frame[col] = frame[col].astype(str)
    return frame


def _series_order(report: pd.DataFrame) -> list[tuple[str, str]]:
    pairs = report[["resolution", "observer"]].drop_duplicates().itertuples(index=False)
    rank = {res: i for i, res in enumerate(RESOLUTION_ORDER)}
    return sorted(((str(r), str(o)) for r, o in pairs), key=lambda p: (rank.get(p[0], 99), p[1], p[0]))


def emit_plot(
    report: pd.DataFrame,
    path: str | Path,
    *,
    title: str | None = None,
    x_label: str = "sweep value",
) -> list[str]:
    """AUC vs sweep value with CI error bars, one line per (resolution, observer).

    Returns the series labels in drawing order.
    """
    if report is None or report.empty:
        raise ValueError("Cannot plot an empty report.")
    path = Path(path)
    ok = report[(report["status"] == "ok") & report["auc"].notna()]
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    labels: list[str] = []
    try:
        for resolution, observer in _series_order(report):
            part = ok[(ok["resolution"] == resolution) & (ok["observer"] == observer)].sort_values("sweep_value")
            if part.empty:
                continue
            x = part["sweep_value"].to_numpy(dtype=float)
            y = part["auc"].to_numpy(dtype=float)
            lo = np.clip(y - part["ci_lo"].to_numpy(dtype=float), 0.0, None)
            hi = np.clip(part["ci_hi"].to_numpy(dtype=float) - y, 0.0, None)
            label = f"{resolution} {observer}"
            container = ax.errorbar(x, y, yerr=[lo, hi], marker="o", capsize=3, label=label)
            container.lines[0].set_gid(f"series_{resolution}_{observer}")
            labels.append(label)
        ax.set_xlabel(x_label)
        ax.set_ylabel("AUC")
        if title:
            ax.set_title(title)
        if labels:
            ax.legend(fontsize="small", ncol=max(1, math.ceil(len(labels) / 6)))
        ax.grid(True, alpha=0.3)
        fig.tight_layout()

        def _write(tmp_path: Path) -> None:
            fig.savefig(tmp_path, format="svg", metadata={"Date": None})

        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(path, _write)
    finally:
        plt.close(fig)
    return labels
