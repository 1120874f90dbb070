"""Run-directory plumbing shared by the study runners and CLI subcommands.

Usage:
    $ tbiq study rayleigh-length --config rayleigh-length
    $ tbiq study srcnn-depth --config config/srcnn_depth.yml --seed 7
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Optional

import pandas as pd
import pyarrow  # noqa: F401  ensures parquet support
import yaml
from dotenv import load_dotenv

logger = logging.getLogger("tbiq")

OUT_DIR_ENV = "TBIQ_OUT_DIR"


def setup_logging(cfg: dict, level_override: Optional[str] = None) -> None:
    log_cfg = cfg.get("logging") if isinstance(cfg, dict) else None
    log_cfg = log_cfg if isinstance(log_cfg, dict) else {}
    level_name = str(level_override or log_cfg.get("level", "INFO")).upper()
    log_file = log_cfg.get("file")
    level = getattr(logging, level_name, logging.INFO)
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=level,
        handlers=handlers,
        format="%(asctime)s %(levelname)s %(message)s",
        force=True,
    )


def config_hash(cfg: dict) -> str:
    dumped = yaml.safe_dump(cfg, sort_keys=True)
    return hashlib.md5(dumped.encode("utf-8")).hexdigest()[:8]


def atomic_write(path: Path, write_fn: Callable[[Path], None]) -> None:
    tmp_path = path.with_name(f"{path.name}.tmp")
    try:
        write_fn(tmp_path)
        tmp_path.replace(path)
    finally:
        if tmp_path.exists():
            try:
                tmp_path.unlink()
            except OSError:
                pass


def save_frame(frame: pd.DataFrame, path: Path, *, allow_empty: bool = False) -> None:
    if frame is None or (frame.empty and not allow_empty):
        return

    def _write(tmp_path: Path) -> None:
        # repr-precision floats so a reload reproduces values exactly
        frame.to_csv(tmp_path, index=False, float_format="%.17g", encoding="utf-8")

    atomic_write(path, _write)


def save_parquet(frame: pd.DataFrame, path: Path) -> None:
    if frame is None or frame.empty:
        return

    def _write(tmp_path: Path) -> None:
        frame.to_parquet(tmp_path, index=False)

    atomic_write(path, _write)


def save_json(payload: dict, path: Path) -> None:
    def _write(tmp_path: Path) -> None:
        with tmp_path.open("w", encoding="utf-8") as handle:
            json.dump(payload, handle, ensure_ascii=True, indent=2, default=str)

    atomic_write(path, _write)


def save_text(text: str, path: Path) -> None:
    def _write(tmp_path: Path) -> None:
        tmp_path.write_text(text, encoding="utf-8")

    atomic_write(path, _write)


def resolve_out_dir(cli_value: str | Path | None, config_value: Any = None) -> Path:
    """``--out-dir`` wins, then ``TBIQ_OUT_DIR`` (``.env`` aware), then the config value."""
    if cli_value:
        return Path(cli_value)
    load_dotenv()
    env_value = os.environ.get(OUT_DIR_ENV)
    if env_value:
        return Path(env_value)
    return Path(config_value or "out/runs")


@dataclass(frozen=True)
class RunContext:
    run_dir: Path
    run_name: str
    timestamp: str
    config_hash: str

    def path(self, name: str) -> Path:
        return self.run_dir / name


def create_run_dir(out_dir: Path, run_name: str, cfg: dict) -> RunContext:
    run_stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    run_hash = config_hash(cfg)
    run_dir = Path(out_dir) / f"{run_name}_{run_stamp}_{run_hash}"
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info("Artifacts will be saved to %s", run_dir)
    return RunContext(run_dir=run_dir, run_name=run_name, timestamp=run_stamp, config_hash=run_hash)
