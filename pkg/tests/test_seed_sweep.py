import types

import pandas as pd
import pytest

from tbiq.project_tools import seed_sweep
from tbiq.reporting import REPORT_COLUMNS


def _rows(seed: int, auc_lr: float, auc_sr: float, half_width: float = 0.01) -> list[dict]:
    rows = []
    for res, value in (("LR", auc_lr), ("SR", auc_sr)):
        rows.append(
            {
                "study": "signal_length_sweep",
                "sweep_value": 7,
                "resolution": res,
                "observer": "RHO",
                "auc": value,
                "ci_lo": value - half_width,
                "ci_hi": value + half_width,
                "mse": None,
                "psnr": None,
                "ssim": None,
                "seed": seed,
                "status": "ok",
            }
        )
    return rows


def _combined() -> pd.DataFrame:
    rows = _rows(0, 0.70, 0.75) + _rows(1, 0.70, 0.705) + _rows(2, 0.72, 0.70)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def test_seed_summary_aggregates_over_seeds():
    summary = seed_sweep.seed_summary(_combined())
    assert list(summary.columns) == seed_sweep.SEED_SUMMARY_COLUMNS
    lr = summary[summary["resolution"] == "LR"].iloc[0]
    assert lr["n_seeds"] == 3
    assert lr["auc_mean"] == pytest.approx(0.71333333333)
    assert lr["auc_min"] == pytest.approx(0.70)
    assert lr["auc_max"] == pytest.approx(0.72)


def test_seed_summary_single_seed_has_zero_spread():
    summary = seed_sweep.seed_summary(pd.DataFrame(_rows(0, 0.6, 0.6), columns=REPORT_COLUMNS))
    assert summary["auc_std"].tolist() == [0.0, 0.0]


def test_sr_vs_lr_counts_gains_and_slack():
    compare = seed_sweep.sr_vs_lr(_combined(), slack=0.01)
    row = compare.iloc[0]
    assert row["n_seeds"] == 3
    assert row["sr_gt_lr"] == 2
    # only seed 0 beats LR with non-overlapping intervals
    assert row["sr_gt_lr_disjoint_ci"] == 1
    assert row["sr_le_lr_plus_slack"] == 2
    assert row["mean_difference"] == pytest.approx((0.05 + 0.005 - 0.02) / 3)


def test_sr_vs_lr_without_pairs_is_empty():
    hr_only = _combined().assign(resolution="HR")
    assert seed_sweep.sr_vs_lr(hr_only).empty


def test_seed_sweep_main_writes_outputs_and_reports_failures(tmp_path, monkeypatch):
    import tbiq.studies as studies

    def fake_run_study(study, task, *, run=None):
        if study.seed == 2:
            raise RuntimeError("diverged")
        frame = pd.DataFrame(_rows(study.seed, 0.7, 0.71), columns=REPORT_COLUMNS)
        return types.SimpleNamespace(report=frame)

    monkeypatch.setattr(studies, "run_study", fake_run_study)
    config = tmp_path / "study.yml"
    config.write_text("study:\n  name: tiny\n  observers: [rho]\n", encoding="utf-8")
    out_dir = tmp_path / "runs"

    code = seed_sweep.main(["--config", str(config), "--seed", "0,1", "--seed", "2", "--out-dir", str(out_dir)])

    assert code == 1
    combined = pd.read_csv(out_dir / "seeds_tiny.csv")
    assert sorted(combined["seed"].unique().tolist()) == [0, 1]
    assert (out_dir / "seeds_tiny_summary.csv").exists()
    compare = pd.read_csv(out_dir / "seeds_tiny_sr_vs_lr.csv")
    assert int(compare["sr_gt_lr"].iloc[0]) == 2
    assert len([p for p in out_dir.iterdir() if p.is_dir() and p.name.startswith("tiny_seed")]) == 3


def test_seed_sweep_rejects_negative_seeds(tmp_path):
    with pytest.raises(SystemExit, match=">= 0"):
        seed_sweep.main(["--seed", "-1", "--out-dir", str(tmp_path)])
