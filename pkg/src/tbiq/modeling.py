from __future__ import annotations

from collections.abc import Mapping
from dataclasses import fields
from typing import Any

from .learned import LearnedObserverSpec, build_learned_observer
from .nn_engine import Network
from .observers import LinearTemplate
from .sr_models import SrcnnSpec, build_srcnn

SUPPORTED_MODEL_TYPES = ("srcnn", "resnet_observer")

_MODEL_ALIASES: dict[str, str] = {
    "srcnn": "srcnn",
    "sr": "srcnn",
    "sr_cnn": "srcnn",
    "resnet_observer": "resnet_observer",
    "resnet": "resnet_observer",
    "resnet_io": "resnet_observer",
    "learned": "resnet_observer",
    "learned_observer": "resnet_observer",
}

_DEFAULT_MODEL_PARAMS: dict[str, dict[str, Any]] = {
    "srcnn": {
        "n_layers": 3,
        "first_kernel": 9,
        "other_kernel": 5,
        "hidden_filters": 32,
        "out_filters": 1,
    },
    "resnet_observer": {
        "n_residual_blocks": 2,
        "filters": 32,
        "kernel": 3,
        "init": "random",
        "template_kernel": 0,
    },
}

_SPEC_TYPES = {"srcnn": SrcnnSpec, "resnet_observer": LearnedObserverSpec}


def normalize_model_type(value: object | None) -> str:
    text = str(value or "srcnn").strip().lower().replace("-", "_")
    model_type = _MODEL_ALIASES.get(text)
    if model_type:
        return model_type
    supported = ", ".join(SUPPORTED_MODEL_TYPES)
    raise ValueError(f"Unsupported model.type: {value}. Supported values: {supported}.")


def resolve_model_spec(model_cfg: Mapping[str, Any] | None) -> tuple[str, Any]:
    """``{"type": ..., "params": {...}}`` -> ``(model_type, SrcnnSpec | LearnedObserverSpec)``."""
    if model_cfg is None:
        model_cfg = {}
    if not isinstance(model_cfg, Mapping):
        raise ValueError("model must be a mapping with keys: type, params.")
    model_type = normalize_model_type(model_cfg.get("type"))
    params_raw = model_cfg.get("params") or {}
    if not isinstance(params_raw, Mapping):
        raise ValueError("model.params must be a mapping.")
    spec_cls = _SPEC_TYPES[model_type]
    allowed = {f.name for f in fields(spec_cls)}
    unknown = sorted(set(params_raw) - allowed)
    if unknown:
        raise ValueError(f"Unknown {model_type} params: {', '.join(unknown)}. Allowed: {', '.join(sorted(allowed))}.")
    params = dict(_DEFAULT_MODEL_PARAMS[model_type])
    params.update(params_raw)
    spec = spec_cls(**params)
    spec.validate()
    return model_type, spec


def build_model(
    model_type: str,
    spec: Any,
    seed: int,
    *,
    rho_template: LinearTemplate | None = None,
    **kwargs: Any,
) -> Network:
    model_key = normalize_model_type(model_type)
    if model_key == "srcnn":
        return build_srcnn(spec, seed, **kwargs)
    if model_key == "resnet_observer":
        return build_learned_observer(spec, seed, rho_template, **kwargs)
    supported = ", ".join(SUPPORTED_MODEL_TYPES)
    raise ValueError(f"Unsupported model.type: {model_type}. Supported values: {supported}.")


def build_model_from_config(
    model_cfg: Mapping[str, Any] | None,
    seed: int,
    **kwargs: Any,
) -> tuple[Network, str, Any]:
    model_type, spec = resolve_model_spec(model_cfg)
    return build_model(model_type, spec, seed, **kwargs), model_type, spec
