"""Depth-parametric SRCNN super-resolvers."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn_engine import (
    LayerSpec,
    Network,
    RefreshFn,
    TrainConfig,
    TrainingData,
    TrainResult,
    build_network,
    conv,
    predict,
    relu,
    train,
)

logger = logging.getLogger("tbiq")

SRCNN_DEPTHS = tuple(range(2, 9))


@dataclass(frozen=True)
class SrcnnSpec:
    n_layers: int = 3
    first_kernel: int = 9
    other_kernel: int = 5
    hidden_filters: int = 32
    out_filters: int = 1

    def validate(self) -> None:
        if int(self.n_layers) not in SRCNN_DEPTHS:
            raise ValueError(f"SRCNN n_layers must lie in [2, 8], got {self.n_layers}.")
        if int(self.out_filters) != 1:
            raise ValueError(f"SRCNN final layer must have 1 filter, got {self.out_filters}.")
        for name in ("first_kernel", "other_kernel"):
            value = int(getattr(self, name))
            if value < 1 or value % 2 == 0:
                raise ValueError(f"SRCNN {name} must be a positive odd size, got {value}.")
        if int(self.hidden_filters) < 1:
            raise ValueError(f"SRCNN hidden_filters must be >= 1, got {self.hidden_filters}.")


def srcnn_layers(spec: SrcnnSpec) -> list[LayerSpec]:
    """conv(first)+ReLU, (n-2) x [conv(other)+ReLU], conv(other) -> 1 channel, no final ReLU."""
    spec.validate()
    hidden = int(spec.hidden_filters)
    layers = [conv(1, hidden, spec.first_kernel), relu()]
    for _ in range(int(spec.n_layers) - 2):
        layers += [conv(hidden, hidden, spec.other_kernel), relu()]
    layers.append(conv(hidden, 1, spec.other_kernel))
    return layers


def srcnn_parameter_count(spec: SrcnnSpec) -> int:
    total = 0
    for layer in srcnn_layers(spec):
        if layer.kind == "conv":
            total += layer.kernel**2 * layer.in_channels * layer.out_channels + layer.out_channels
    return total


def build_srcnn(spec: SrcnnSpec, seed: int, **kwargs) -> Network:
    return build_network(srcnn_layers(spec), seed, **kwargs)


def _check_pairs(lr: np.ndarray, hr: np.ndarray, what: str) -> None:
    if np.asarray(lr).shape != np.asarray(hr).shape:
        raise ValueError(
            f"{what}: LR {np.asarray(lr).shape} and HR {np.asarray(hr).shape} must share dimensions."
        )


def train_sr(
    net: Network,
    lr_train: np.ndarray,
    hr_train: np.ndarray,
    config: TrainConfig,
    *,
    lr_val: Optional[np.ndarray] = None,
    hr_val: Optional[np.ndarray] = None,
    clean_lr_train: Optional[np.ndarray] = None,
    refresh: Optional[RefreshFn] = None,
    label: str = "srcnn",
) -> TrainResult:
    """Minimize ensemble MSE between ``net(f_LR)`` and ``f_HR``; keeps the best-validation snapshot."""
    if config.loss != "mse":
        raise ValueError(f"SR training uses the mse loss, got {config.loss}.")
    _check_pairs(lr_train, hr_train, "training pairs")
    if lr_val is not None and hr_val is not None:
        _check_pairs(lr_val, hr_val, "validation pairs")
    data = TrainingData(
        inputs=lr_train,
        targets=hr_train,
        val_inputs=lr_val,
        val_targets=hr_val,
        clean_inputs=clean_lr_train,
        refresh=refresh,
    )
    return train(net, data, config, label=label)


def super_resolve(net: Network, images: np.ndarray, *, batch_size: int = 64) -> np.ndarray:
    """One forward pass per image; accepts a single image or a stack."""
    arr = np.asarray(images)
    single = arr.ndim == 2
    out = predict(net, arr[None] if single else arr, batch_size=batch_size)[:, 0]
    if out.shape[-2:] != arr.shape[-2:]:
        raise ValueError(f"SR output {out.shape[-2:]} does not match input {arr.shape[-2:]}.")
    return out[0] if single else out
