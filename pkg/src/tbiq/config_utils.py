from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from .ensemble import TaskSpec
from .study_config import StudySpec, parse_config

CONFIG_PACKAGE = "tbiq.config"


@dataclass(frozen=True)
class ResolvedConfig:
    text: str
    label: str
    path: Path | None
    source: str

    def parse(self) -> tuple[StudySpec, TaskSpec]:
        return parse_config(self.text)


def read_package_text(package: str, filename: str) -> str:
    try:
        return resources.files(package).joinpath(filename).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise SystemExit(f"Packaged config not found: {package}/{filename}") from exc


def _package_has_file(package: str, filename: str) -> bool:
    try:
        return resources.files(package).joinpath(filename).is_file()
    except Exception:
        return False


def _resolve_alias(ref: str, aliases: Optional[Mapping[str, str]]) -> Optional[str]:
    if not aliases:
        return None
    key = ref.strip()
    for candidate in (key, key.lower(), Path(key).name, Path(key).name.lower()):
        if candidate in aliases:
            return aliases[candidate]
    return None


def resolve_config(
    ref: str | Path | None,
    *,
    package: str,
    default_name: str,
    aliases: Optional[Mapping[str, str]] = None,
) -> ResolvedConfig:
    """Filesystem path first, then alias or packaged template name."""
    if ref is None or str(ref).strip() == "":
        text = read_package_text(package, default_name)
        return ResolvedConfig(text, Path(default_name).stem, None, f"package:{package}/{default_name}")

    ref_text = str(ref).strip()
    path = Path(ref_text)
    if path.exists():
        if not path.is_file():
            raise SystemExit(f"Config path is not a file: {path}")
        return ResolvedConfig(path.read_text(encoding="utf-8"), path.stem, path, str(path))

    alias = _resolve_alias(ref_text, aliases)
    if alias is None:
        candidate = Path(ref_text).name
        if candidate and _package_has_file(package, candidate):
            alias = candidate
    if alias:
        text = read_package_text(package, alias)
        return ResolvedConfig(text, Path(alias).stem, None, f"package:{package}/{alias}")

    raise SystemExit(f"Config file not found: {ref_text}")


STUDY_ALIASES: Mapping[str, str] = {
    "default": "default.yml",
    "default.yml": "default.yml",
    "rayleigh-length": "rayleigh_length.yml",
    "rayleigh_length": "rayleigh_length.yml",
    "rayleigh_length.yml": "rayleigh_length.yml",
    "srcnn-depth": "srcnn_depth.yml",
    "srcnn_depth": "srcnn_depth.yml",
    "srcnn_depth.yml": "srcnn_depth.yml",
    "mc-capacity": "mc_capacity.yml",
    "mc_capacity": "mc_capacity.yml",
    "mc_capacity.yml": "mc_capacity.yml",
}


def resolve_study_config(ref: str | Path | None) -> ResolvedConfig:
    return resolve_config(ref, package=CONFIG_PACKAGE, default_name="default.yml", aliases=STUDY_ALIASES)


def resolve_study_filename(ref: str) -> str:
    alias = _resolve_alias(ref, STUDY_ALIASES)
    if alias:
        return alias
    candidate = Path(ref).name
    if _package_has_file(CONFIG_PACKAGE, candidate):
        return candidate
    raise SystemExit(f"Unknown built-in config name: {ref}")
