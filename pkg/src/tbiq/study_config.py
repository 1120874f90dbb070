"""Study configuration: YAML sections -> validated ``StudySpec`` and ``TaskSpec``.

Every problem found in a file is collected and reported at once, each with the
line number of the offending key.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import yaml

from .degrade import DegradationSpec, MC_DEGRADATION, NoiseSpec, RAYLEIGH_DEGRADATION
from .ensemble import TaskSpec
from .learned import RESNET_BLOCKS, INIT_MODES
from .nn_engine import TrainConfig
from .objects import ClbParams, McSignalSpec, RayleighSignalSpec, SyntheticMcParams
from .sr_models import SrcnnSpec

STUDY_KINDS = ("signal_length_sweep", "depth_sweep", "observer_capacity")
STUDY_COMMANDS = {
    "rayleigh-length": "signal_length_sweep",
    "srcnn-depth": "depth_sweep",
    "mc-capacity": "observer_capacity",
}
OBSERVER_NAMES = ("rho", "cho", "resnet")

_DEFAULT_SWEEP = {
    "signal_length_sweep": [5, 6, 7, 8, 9],
    "depth_sweep": [2, 3, 4, 5, 6, 7, 8],
    "observer_capacity": [500, 1000, 2000, 5000],
}
_DEFAULT_OBSERVERS = {
    "signal_length_sweep": ["rho", "cho", "resnet"],
    "depth_sweep": ["rho", "cho"],
    "observer_capacity": ["resnet"],
}
_DEFAULT_TASK_KIND = {
    "signal_length_sweep": "rayleigh",
    "depth_sweep": "rayleigh",
    "observer_capacity": "mc_cluster",
}


class ConfigError(ValueError):
    """One or more configuration problems, each prefixed with its line number."""

    def __init__(self, problems: list[str]) -> None:
        self.problems = list(problems)
        super().__init__("Invalid config:\n  - " + "\n  - ".join(self.problems))


def _degradation_dict(spec: DegradationSpec) -> dict:
    return {
        "blur_sigma": spec.blur_sigma,
        "downsample_factor": spec.downsample_factor,
        "upsample_after": spec.upsample_after,
        "noise": {"sigma_p": spec.noise.sigma_p, "sigma_g": spec.noise.sigma_g},
    }


def default_config(study_kind: str = "signal_length_sweep", task_kind: Optional[str] = None) -> dict:
    """Full default tree; degradation and observer defaults follow the task kind."""
    task_kind = task_kind or _DEFAULT_TASK_KIND.get(study_kind, "rayleigh")
    mc = task_kind == "mc_cluster"
    return {
        "study": {
            "kind": study_kind,
            "name": None,
            "seed": 20240101,
            "sweep": list(_DEFAULT_SWEEP.get(study_kind, [7])),
            "observers": list(_DEFAULT_OBSERVERS.get(study_kind, ["rho"])),
            "n_jobs": 1,
            "background_cache_mb": 1024,
        },
        "sizes": {
            "sr_train_per_class": 1000,
            "sr_val_per_class": 250,
            "stats_per_class": 10000,
            "val_per_class": 1000,
            "test_per_class": 4000,
            "observer_train_per_class": 2000,
            "observer_val_per_class": 500,
            "chunk_size": 500,
        },
        "task": {
            "kind": task_kind,
            "image_size": [128, 128],
            "crop_size": [64, 64],
            "clb": {
                "mean_clusters": 150.0,
                "mean_blobs_per_cluster": 20.0,
                "half_axes": [5.0, 2.0],
                "alpha": 2.1,
                "beta": 0.5,
                "cluster_spread": 12.0,
                "support_radius": None,
            },
            "rayleigh": {
                "length": 7,
                "amplitude": 0.8,
                "blur_sigma": 1.375,
                "line_mode": "per_pixel",
            },
            "mc": {
                "source": "synthetic",
                "library_path": None,
                "library_size": 11,
                "contrast_range": [0.05, 0.06],
                "rotation_range": [0.0, 360.0],
                "synthetic": {
                    "size": 200,
                    "n_blobs_range": [5, 15],
                    "sigma_range": [0.5, 1.5],
                    "amplitude_range": [0.5, 1.0],
                    "disk_radius": 20.0,
                },
            },
            "degradation": _degradation_dict(MC_DEGRADATION if mc else RAYLEIGH_DEGRADATION),
        },
        "srcnn": {"n_layers": 3, "first_kernel": 9, "other_kernel": 5, "hidden_filters": 32},
        "sr_training": {
            "learning_rate": 1e-4,
            "batch_size": 64,
            "epochs": 200,
            "on_the_fly_noise": False,
        },
        "observers": {
            "rho": {"lambda_min": 1e-9, "lambda_max": 1e-4, "per_decade": 6},
            "cho": {"noise_realizations": 1, "regularize_lambda": None},
            "resnet": {
                "blocks": [2, 4, 6, 8] if study_kind == "observer_capacity" else [2],
                "filters": 32,
                "init": "random" if mc else "rho_template",
            },
        },
        "observer_training": {
            "learning_rate": 5e-5 if mc else 1e-4,
            "batch_size": 64,
            "epochs": 50,
            "on_the_fly_noise": not mc,
            "augment_flips": study_kind == "observer_capacity",
        },
        "evaluation": {"ci_level": 0.95},
        "output": {"dir": "out/runs", "run_name": None, "plot": True, "save_datasets": False},
        "logging": {"level": "INFO", "file": None},
        "runtime": {"threads": None},
    }


@dataclass(frozen=True)
class SizeSpec:
    sr_train_per_class: int = 1000
    sr_val_per_class: int = 250
    stats_per_class: int = 10000
    val_per_class: int = 1000
    test_per_class: int = 4000
    observer_train_per_class: int = 2000
    observer_val_per_class: int = 500
    chunk_size: int = 500


@dataclass(frozen=True)
class RhoGridSpec:
    lambda_min: float = 1e-9
    lambda_max: float = 1e-4
    per_decade: int = 6


@dataclass(frozen=True)
class ChoSpec:
    noise_realizations: int = 1
    regularize_lambda: Optional[float] = None


@dataclass(frozen=True)
class ResnetRosterSpec:
    blocks: tuple[int, ...] = (2,)
    filters: int = 32
    init: str = "rho_template"


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out/runs"
    run_name: Optional[str] = None
    plot: bool = True
    save_datasets: bool = False


@dataclass(frozen=True)
class StudySpec:
    kind: str = "signal_length_sweep"
    name: str = "rayleigh_length"
    seed: int = 20240101
    sweep: tuple[int, ...] = (5, 6, 7, 8, 9)
    observers: tuple[str, ...] = ("rho", "cho", "resnet")
    n_jobs: int = 1
    background_cache_mb: int = 1024
    sizes: SizeSpec = field(default_factory=SizeSpec)
    srcnn: SrcnnSpec = field(default_factory=SrcnnSpec)
    sr_training: TrainConfig = field(default_factory=TrainConfig)
    rho: RhoGridSpec = field(default_factory=RhoGridSpec)
    cho: ChoSpec = field(default_factory=ChoSpec)
    resnet: ResnetRosterSpec = field(default_factory=ResnetRosterSpec)
    observer_training: TrainConfig = field(default_factory=lambda: TrainConfig(loss="bce", epochs=50))
    augment_flips: bool = False
    ci_level: float = 0.95
    output: OutputSpec = field(default_factory=OutputSpec)
    log_level: str = "INFO"
    log_file: Optional[str] = None
    threads: Optional[int] = None

    @property
    def run_name(self) -> str:
        return self.output.run_name or self.name


# -----------------------------------------------------------------------------
# Parsing
# -----------------------------------------------------------------------------
def _line_index(text: str) -> dict[tuple[str, ...], int]:
    """Map key paths to 1-based YAML line numbers."""
    index: dict[tuple[str, ...], int] = {}
    root = yaml.compose(text)

    def _walk(node: Any, path: tuple[str, ...]) -> None:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                key_path = path + (str(key_node.value),)
                index[key_path] = key_node.start_mark.line + 1
                _walk(value_node, key_path)

    if root is not None:
        _walk(root, ())
    return index


class _Problems:
    def __init__(self, lines: dict[tuple[str, ...], int]) -> None:
        self.lines = lines
        self.items: list[str] = []

    def add(self, path: tuple[str, ...], message: str) -> None:
        key = path
        while key and key not in self.lines:
            key = key[:-1]
        where = f"line {self.lines[key]}" if key else "config"
        dotted = ".".join(path) if path else "<root>"
        self.items.append(f"{where}: {dotted}: {message}")


def _check_keys(data: Any, defaults: Any, path: tuple[str, ...], problems: _Problems) -> None:
    if not isinstance(defaults, dict):
        return
    if data is None:
        return
    if not isinstance(data, dict):
        problems.add(path, "must be a mapping")
        return
    for key, value in data.items():
        if key not in defaults:
            problems.add(path + (str(key),), "unknown key")
            continue
        _check_keys(value, defaults[key], path + (str(key),), problems)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _as_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ValueError(f"expected an integer, got {value!r}")
    return int(value)


def _as_float(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _as_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"expected true/false, got {value!r}")
    return value


def _as_str(value: Any) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"expected a non-empty string, got {value!r}")
    return value.strip()


def _optional(conv: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def _convert(value: Any) -> Any:
        return None if value is None else conv(value)

    return _convert


def _pair(conv: Callable[[Any], Any]) -> Callable[[Any], tuple]:
    def _convert(value: Any) -> tuple:
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValueError(f"expected a two-element list, got {value!r}")
        return tuple(conv(v) for v in value)

    return _convert


def _list_of(conv: Callable[[Any], Any]) -> Callable[[Any], tuple]:
    def _convert(value: Any) -> tuple:
        if not isinstance(value, (list, tuple)) or not value:
            raise ValueError(f"expected a non-empty list, got {value!r}")
        return tuple(conv(v) for v in value)

    return _convert


def _choice(*options: str) -> Callable[[Any], str]:
    def _convert(value: Any) -> str:
        text = _as_str(value)
        if text not in options:
            raise ValueError(f"must be one of: {', '.join(options)}; got {text!r}")
        return text

    return _convert


class _Reader:
    def __init__(self, cfg: dict, problems: _Problems) -> None:
        self.cfg = cfg
        self.problems = problems

    def get(self, path: tuple[str, ...], conv: Callable[[Any], Any]) -> Any:
        node: Any = self.cfg
        for key in path:
            node = node.get(key) if isinstance(node, dict) else None
        try:
            return conv(node)
        except (TypeError, ValueError) as exc:
            self.problems.add(path, str(exc))
            return None

    def build(self, path: tuple[str, ...], factory: Callable[..., Any], **kwargs: Any) -> Any:
        if any(value is None for key, value in kwargs.items() if key not in _NULLABLE):
            return None
        try:
            obj = factory(**kwargs)
            validate = getattr(obj, "validate", None)
            if validate is not None:
                validate()
            return obj
        except (TypeError, ValueError) as exc:
            self.problems.add(path, str(exc))
            return None


_NULLABLE = {
    "library_path",
    "run_name",
    "regularize_lambda",
    "threads",
    "log_file",
    "name",
    "n_blobs",
    "support_radius",
}


def _read_text(source: str | Path) -> str:
    if isinstance(source, Path):
        if not source.exists():
            raise ConfigError([f"config file not found: {source}"])
        return source.read_text(encoding="utf-8")
    return source


def parse_config(source: str | Path) -> tuple[StudySpec, TaskSpec]:
    """Parse a YAML config (path or text); defaults fill every missing key."""
    text = _read_text(source)
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
        lines = _line_index(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "config"
        raise ConfigError([f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}"]) from exc
    raw = raw or {}
    problems = _Problems(lines)
    if not isinstance(raw, dict):
        raise ConfigError(["line 1: config root must be a mapping"])

    study_raw = raw.get("study") if isinstance(raw.get("study"), dict) else {}
    study_kind = study_raw.get("kind") or "signal_length_sweep"
    if study_kind not in STUDY_KINDS:
        problems.add(("study", "kind"), f"must be one of: {', '.join(STUDY_KINDS)}; got {study_kind!r}")
        study_kind = "signal_length_sweep"
    task_raw = raw.get("task") if isinstance(raw.get("task"), dict) else {}
    task_kind = task_raw.get("kind") or _DEFAULT_TASK_KIND[study_kind]
    if task_kind not in ("rayleigh", "mc_cluster"):
        problems.add(("task", "kind"), f"must be one of: rayleigh, mc_cluster; got {task_kind!r}")
        task_kind = "rayleigh"
    defaults = default_config(study_kind, task_kind)
    _check_keys(raw, defaults, (), problems)
    cfg = _merge(defaults, {k: v for k, v in raw.items() if k in defaults})
    read = _Reader(cfg, problems)

    task = _build_task(read, task_kind)
    study = _build_study(read, study_kind)
    if study is not None and task is not None:
        _cross_checks(study, task, problems)
    if problems.items:
        raise ConfigError(problems.items)
    return study, task


def _build_task(read: _Reader, task_kind: str) -> Optional[TaskSpec]:
    image_size = read.get(("task", "image_size"), _pair(_as_int))
    crop_size = read.get(("task", "crop_size"), _pair(_as_int))
    clb_path = ("task", "clb")
    clb = read.build(
        clb_path,
        ClbParams,
        mean_clusters=read.get(clb_path + ("mean_clusters",), _as_float),
        mean_blobs_per_cluster=read.get(clb_path + ("mean_blobs_per_cluster",), _as_float),
        half_axes=read.get(clb_path + ("half_axes",), _pair(_as_float)),
        alpha=read.get(clb_path + ("alpha",), _as_float),
        beta=read.get(clb_path + ("beta",), _as_float),
        cluster_spread=read.get(clb_path + ("cluster_spread",), _as_float),
        support_radius=read.get(clb_path + ("support_radius",), _optional(_as_float)),
        height=image_size[0] if image_size else None,
        width=image_size[1] if image_size else None,
    )
    ray_path = ("task", "rayleigh")
    rayleigh = read.build(
        ray_path,
        RayleighSignalSpec,
        length=read.get(ray_path + ("length",), _as_int),
        amplitude=read.get(ray_path + ("amplitude",), _as_float),
        blur_sigma=read.get(ray_path + ("blur_sigma",), _as_float),
        line_mode=read.get(ray_path + ("line_mode",), _choice("per_pixel", "mass_matched")),
    )
    syn_path = ("task", "mc", "synthetic")
    synthetic = read.build(
        syn_path,
        SyntheticMcParams,
        size=read.get(syn_path + ("size",), _as_int),
        n_blobs_range=read.get(syn_path + ("n_blobs_range",), _pair(_as_int)),
        sigma_range=read.get(syn_path + ("sigma_range",), _pair(_as_float)),
        amplitude_range=read.get(syn_path + ("amplitude_range",), _pair(_as_float)),
        disk_radius=read.get(syn_path + ("disk_radius",), _as_float),
    )
    mc_path = ("task", "mc")
    mc = None
    if synthetic is not None and image_size is not None:
        mc = read.build(
            mc_path,
            McSignalSpec,
            source=read.get(mc_path + ("source",), _choice("synthetic", "library")),
            library_path=read.get(mc_path + ("library_path",), _optional(_as_str)),
            library_size=read.get(mc_path + ("library_size",), _as_int),
            contrast_range=read.get(mc_path + ("contrast_range",), _pair(_as_float)),
            rotation_range=read.get(mc_path + ("rotation_range",), _pair(_as_float)),
            crop_size=image_size[0],
            synthetic=synthetic,
        )
    deg_path = ("task", "degradation")
    noise = read.build(
        deg_path + ("noise",),
        NoiseSpec,
        sigma_p=read.get(deg_path + ("noise", "sigma_p"), _as_float),
        sigma_g=read.get(deg_path + ("noise", "sigma_g"), _as_float),
    )
    degradation = None
    if noise is not None:
        degradation = read.build(
            deg_path,
            DegradationSpec,
            blur_sigma=read.get(deg_path + ("blur_sigma",), _as_float),
            downsample_factor=read.get(deg_path + ("downsample_factor",), _as_int),
            upsample_after=read.get(deg_path + ("upsample_after",), _as_bool),
            noise=noise,
        )
    parts = (clb, rayleigh, mc, degradation, crop_size)
    if any(part is None for part in parts):
        return None
    return read.build(
        ("task",),
        TaskSpec,
        kind=task_kind,
        clb=clb,
        rayleigh=rayleigh,
        mc=mc,
        degradation=degradation,
        crop_size=crop_size,
    )


def _train_config(read: _Reader, path: tuple[str, ...], loss: str) -> Optional[TrainConfig]:
    return read.build(
        path,
        TrainConfig,
        learning_rate=read.get(path + ("learning_rate",), _as_float),
        batch_size=read.get(path + ("batch_size",), _as_int),
        epochs=read.get(path + ("epochs",), _as_int),
        on_the_fly_noise=read.get(path + ("on_the_fly_noise",), _as_bool),
        loss=loss,
    )


def _build_study(read: _Reader, study_kind: str) -> Optional[StudySpec]:
    sizes = read.build(
        ("sizes",),
        SizeSpec,
        **{name: read.get(("sizes", name), _as_int) for name in SizeSpec.__dataclass_fields__},
    )
    if sizes is not None:
        for name in SizeSpec.__dataclass_fields__:
            minimum = 1 if name == "chunk_size" else 2
            if getattr(sizes, name) < minimum:
                read.problems.add(("sizes", name), f"must be >= {minimum}, got {getattr(sizes, name)}")
    srcnn = read.build(
        ("srcnn",),
        SrcnnSpec,
        **{name: read.get(("srcnn", name), _as_int) for name in ("n_layers", "first_kernel", "other_kernel", "hidden_filters")},
    )
    rho = read.build(
        ("observers", "rho"),
        RhoGridSpec,
        lambda_min=read.get(("observers", "rho", "lambda_min"), _as_float),
        lambda_max=read.get(("observers", "rho", "lambda_max"), _as_float),
        per_decade=read.get(("observers", "rho", "per_decade"), _as_int),
    )
    if rho is not None and not (0 < rho.lambda_min <= rho.lambda_max <= 1 and rho.per_decade >= 1):
        read.problems.add(("observers", "rho"), "needs 0 < lambda_min <= lambda_max <= 1 and per_decade >= 1")
    cho = read.build(
        ("observers", "cho"),
        ChoSpec,
        noise_realizations=read.get(("observers", "cho", "noise_realizations"), _as_int),
        regularize_lambda=read.get(("observers", "cho", "regularize_lambda"), _optional(_as_float)),
    )
    if cho is not None and cho.noise_realizations < 1:
        read.problems.add(("observers", "cho", "noise_realizations"), "must be >= 1")
    resnet = read.build(
        ("observers", "resnet"),
        ResnetRosterSpec,
        blocks=read.get(("observers", "resnet", "blocks"), _list_of(_as_int)),
        filters=read.get(("observers", "resnet", "filters"), _as_int),
        init=read.get(("observers", "resnet", "init"), _choice(*INIT_MODES)),
    )
    if resnet is not None:
        bad = [b for b in resnet.blocks if b not in RESNET_BLOCKS]
        if bad:
            read.problems.add(("observers", "resnet", "blocks"), f"allowed values are {list(RESNET_BLOCKS)}; got {bad}")
    output = read.build(
        ("output",),
        OutputSpec,
        dir=read.get(("output", "dir"), _as_str),
        run_name=read.get(("output", "run_name"), _optional(_as_str)),
        plot=read.get(("output", "plot"), _as_bool),
        save_datasets=read.get(("output", "save_datasets"), _as_bool),
    )
    ci_level = read.get(("evaluation", "ci_level"), _as_float)
    if ci_level is not None and not 0 < ci_level < 1:
        read.problems.add(("evaluation", "ci_level"), f"must lie in (0, 1), got {ci_level}")
    observers = read.get(("study", "observers"), _list_of(_choice(*OBSERVER_NAMES)))
    sweep = read.get(("study", "sweep"), _list_of(_as_int))
    threads = read.get(("runtime", "threads"), _optional(_as_int))
    if threads is not None and threads < 1:
        read.problems.add(("runtime", "threads"), f"must be >= 1, got {threads}")
    n_jobs = read.get(("study", "n_jobs"), _as_int)
    cache_mb = read.get(("study", "background_cache_mb"), _as_int)
    if cache_mb is not None and cache_mb < 0:
        read.problems.add(("study", "background_cache_mb"), f"must be >= 0, got {cache_mb}")
    log_level = read.get(("logging", "level"), _choice("DEBUG", "INFO", "WARNING", "ERROR"))
    parts = dict(
        sizes=sizes,
        srcnn=srcnn,
        sr_training=_train_config(read, ("sr_training",), "mse"),
        rho=rho,
        cho=cho,
        resnet=resnet,
        observer_training=_train_config(read, ("observer_training",), "bce"),
        augment_flips=read.get(("observer_training", "augment_flips"), _as_bool),
        ci_level=ci_level,
        output=output,
        observers=observers,
        sweep=sweep,
        n_jobs=n_jobs,
        background_cache_mb=cache_mb,
        log_level=log_level,
        seed=read.get(("study", "seed"), _as_int),
    )
    if any(value is None for value in parts.values()):
        return None
    name = read.get(("study", "name"), _optional(_as_str))
    default_name = {v: k.replace("-", "_") for k, v in STUDY_COMMANDS.items()}[study_kind]
    return StudySpec(
        kind=study_kind,
        name=name or default_name,
        threads=threads,
        log_file=read.get(("logging", "file"), _optional(_as_str)),
        **parts,
    )


def _cross_checks(study: StudySpec, task: TaskSpec, problems: _Problems) -> None:
    if study.seed < 0:
        problems.add(("study", "seed"), f"must be >= 0, got {study.seed}")
    if study.kind == "signal_length_sweep":
        bad = [v for v in study.sweep if v < 3]
        if bad:
            problems.add(("study", "sweep"), f"signal lengths must be >= 3, got {bad}")
        if task.kind != "rayleigh":
            problems.add(("task", "kind"), "the signal-length sweep needs the rayleigh task")
    if study.kind == "depth_sweep":
        bad = [v for v in study.sweep if not 2 <= v <= 8]
        if bad:
            problems.add(("study", "sweep"), f"SRCNN depths must lie in [2, 8], got {bad}")
    if study.kind == "observer_capacity":
        bad = [v for v in study.sweep if v < 4 or v % 2]
        if bad:
            problems.add(("study", "sweep"), f"dataset sizes must be even and >= 4, got {bad}")
        if study.observers != ("resnet",):
            problems.add(("study", "observers"), "the capacity study evaluates only the resnet observer")
    if study.n_jobs < 1:
        problems.add(("study", "n_jobs"), f"must be >= 1, got {study.n_jobs}")
    if "resnet" in study.observers and study.resnet.init == "rho_template" and "rho" not in study.observers:
        problems.add(("observers", "resnet", "init"), "rho_template init needs the rho observer in study.observers")


# -----------------------------------------------------------------------------
# Emission
# -----------------------------------------------------------------------------
def config_dict(study: StudySpec, task: TaskSpec) -> dict:
    """Full config tree equivalent to ``(study, task)``."""
    height, width = task.image_size
    syn = task.mc.synthetic
    return {
        "study": {
            "kind": study.kind,
            "name": study.name,
            "seed": study.seed,
            "sweep": list(study.sweep),
            "observers": list(study.observers),
            "n_jobs": study.n_jobs,
            "background_cache_mb": study.background_cache_mb,
        },
        "sizes": {name: getattr(study.sizes, name) for name in SizeSpec.__dataclass_fields__},
        "task": {
            "kind": task.kind,
            "image_size": [height, width],
            "crop_size": list(task.crop_size),
            "clb": {
                "mean_clusters": task.clb.mean_clusters,
                "mean_blobs_per_cluster": task.clb.mean_blobs_per_cluster,
                "half_axes": list(task.clb.half_axes),
                "alpha": task.clb.alpha,
                "beta": task.clb.beta,
                "cluster_spread": task.clb.cluster_spread,
                "support_radius": task.clb.support_radius,
            },
            "rayleigh": {
                "length": task.rayleigh.length,
                "amplitude": task.rayleigh.amplitude,
                "blur_sigma": task.rayleigh.blur_sigma,
                "line_mode": task.rayleigh.line_mode,
            },
            "mc": {
                "source": task.mc.source,
                "library_path": task.mc.library_path,
                "library_size": task.mc.library_size,
                "contrast_range": list(task.mc.contrast_range),
                "rotation_range": list(task.mc.rotation_range),
                "synthetic": {
                    "size": syn.size,
                    "n_blobs_range": list(syn.n_blobs_range),
                    "sigma_range": list(syn.sigma_range),
                    "amplitude_range": list(syn.amplitude_range),
                    "disk_radius": syn.disk_radius,
                },
            },
            "degradation": _degradation_dict(task.degradation),
        },
        "srcnn": {
            "n_layers": study.srcnn.n_layers,
            "first_kernel": study.srcnn.first_kernel,
            "other_kernel": study.srcnn.other_kernel,
            "hidden_filters": study.srcnn.hidden_filters,
        },
        "sr_training": {
            "learning_rate": study.sr_training.learning_rate,
            "batch_size": study.sr_training.batch_size,
            "epochs": study.sr_training.epochs,
            "on_the_fly_noise": study.sr_training.on_the_fly_noise,
        },
        "observers": {
            "rho": {
                "lambda_min": study.rho.lambda_min,
                "lambda_max": study.rho.lambda_max,
                "per_decade": study.rho.per_decade,
            },
            "cho": {
                "noise_realizations": study.cho.noise_realizations,
                "regularize_lambda": study.cho.regularize_lambda,
            },
            "resnet": {
                "blocks": list(study.resnet.blocks),
                "filters": study.resnet.filters,
                "init": study.resnet.init,
            },
        },
        "observer_training": {
            "learning_rate": study.observer_training.learning_rate,
            "batch_size": study.observer_training.batch_size,
            "epochs": study.observer_training.epochs,
            "on_the_fly_noise": study.observer_training.on_the_fly_noise,
            "augment_flips": study.augment_flips,
        },
        "evaluation": {"ci_level": study.ci_level},
        "output": {
            "dir": study.output.dir,
            "run_name": study.output.run_name,
            "plot": study.output.plot,
            "save_datasets": study.output.save_datasets,
        },
        "logging": {"level": study.log_level, "file": study.log_file},
        "runtime": {"threads": study.threads},
    }


def emit_config(study: StudySpec, task: TaskSpec) -> str:
    return yaml.safe_dump(config_dict(study, task), sort_keys=False, default_flow_style=None)
