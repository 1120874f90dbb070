import numpy as np
import pandas as pd
import pytest

from tbiq.reporting import REPORT_COLUMNS, emit_plot, empty_report, load_report, write_csv


def _report() -> pd.DataFrame:
    rows = []
    for res in ("HR", "LR", "SR"):
        for observer in ("RHO", "CHO"):
            for length in (5, 7):
                auc = 0.6 + 0.01 * length + (0.1 if res == "HR" else 0.0)
                rows.append(
                    {
                        "study": "signal_length_sweep",
                        "sweep_value": length,
                        "resolution": res,
                        "observer": observer,
                        "auc": auc + 1.0 / 3.0 * 1e-3,
                        "ci_lo": auc - 0.02,
                        "ci_hi": auc + 0.02,
                        "mse": np.nan if res == "HR" else 0.1 + 0.2,
                        "psnr": np.nan if res == "HR" else 31.4159,
                        "ssim": np.nan if res == "HR" else 0.9,
                        "seed": 20240101,
                        "status": "ok",
                    }
                )
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def test_empty_report_writes_header_only(tmp_path):
    path = write_csv(empty_report(), tmp_path / "report.csv")
    assert path.read_text(encoding="utf-8").strip() == ",".join(REPORT_COLUMNS)
    assert load_report(path).empty


def test_report_csv_reloads_exactly(tmp_path):
    report = _report()
    loaded = load_report(write_csv(report, tmp_path / "report.csv"))
    assert list(loaded.columns) == REPORT_COLUMNS
    np.testing.assert_array_equal(loaded["auc"].to_numpy(), report["auc"].to_numpy())
    np.testing.assert_array_equal(loaded["mse"].to_numpy(), report["mse"].to_numpy())
    assert loaded["resolution"].tolist() == report["resolution"].tolist()


def test_write_csv_requires_the_report_schema(tmp_path):
    with pytest.raises(ValueError, match="missing columns: status"):
        write_csv(_report().drop(columns=["status"]), tmp_path / "report.csv")


def test_plot_has_one_series_per_resolution_and_observer(tmp_path):
    path = tmp_path / "auc.svg"
    labels = emit_plot(_report(), path, title="L sweep", x_label="L")
    assert labels == ["HR CHO", "HR RHO", "LR CHO", "LR RHO", "SR CHO", "SR RHO"]
    svg = path.read_text(encoding="utf-8")
    assert svg.count('id="series_') == 6


def test_plot_skips_failed_cells(tmp_path):
    report = _report()
    report.loc[report["resolution"] == "SR", "status"] = "failed: diverged"
    labels = emit_plot(report, tmp_path / "auc.svg")
    assert all(not label.startswith("SR") for label in labels)


def test_plot_rejects_empty_reports(tmp_path):
    with pytest.raises(ValueError, match="empty report"):
        emit_plot(empty_report(), tmp_path / "auc.svg")
