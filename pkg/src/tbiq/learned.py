"""ResNet-style learned observers."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy.special import expit

from .nn_engine import (
    LayerSpec,
    Network,
    RefreshFn,
    TemplateStem,
    TrainConfig,
    TrainingData,
    TrainResult,
    build_network,
    conv,
    dense,
    global_avg_pool,
    predict,
    residual_block,
    sigmoid,
    template_stem,
    train,
)
from .observers import LinearTemplate

logger = logging.getLogger("tbiq")

RESNET_BLOCKS = (2, 4, 6, 8)
INIT_MODES = ("random", "rho_template")


@dataclass(frozen=True)
class LearnedObserverSpec:
    n_residual_blocks: int = 2
    filters: int = 32
    kernel: int = 3
    init: str = "random"
    template_kernel: int = 0

    def validate(self) -> None:
        if int(self.n_residual_blocks) not in RESNET_BLOCKS:
            raise ValueError(
                f"n_residual_blocks must be one of {', '.join(map(str, RESNET_BLOCKS))}, got {self.n_residual_blocks}."
            )
        if int(self.filters) < 2:
            raise ValueError(f"filters must be >= 2, got {self.filters}.")
        if self.init not in INIT_MODES:
            raise ValueError(f"Unsupported init: {self.init}. Supported values: {', '.join(INIT_MODES)}.")
        if self.init == "rho_template" and int(self.template_kernel) < 1:
            raise ValueError("init 'rho_template' needs template_kernel set to the template side.")
        if int(self.template_kernel) < 0:
            raise ValueError(f"template_kernel must be >= 0, got {self.template_kernel}.")


def resnet_observer_layers(spec: LearnedObserverSpec) -> list[LayerSpec]:
    spec.validate()
    filters = int(spec.filters)
    if int(spec.template_kernel) > 0:
        layers = [template_stem(int(spec.template_kernel), filters)]
    else:
        layers = [conv(1, filters, 3)]
    layers += [residual_block(filters, int(spec.kernel)) for _ in range(int(spec.n_residual_blocks))]
    layers += [global_avg_pool(), dense(filters, 1), sigmoid()]
    return layers


def build_learned_observer(
    spec: LearnedObserverSpec,
    seed: int,
    rho_template: Optional[LinearTemplate] = None,
    *,
    dtype: torch.dtype = torch.float32,
) -> Network:
    """He-initialized observer; with ``rho_template`` init the stem projection starts as the unit-norm template."""
    net = build_network(resnet_observer_layers(spec), seed, dtype=dtype)
    if spec.init != "rho_template":
        return net
    if rho_template is None:
        raise ValueError("init 'rho_template' requires an RHO template.")
    side = int(spec.template_kernel)
    weights = np.asarray(rho_template.weights, dtype=np.float64)
    if weights.size != side * side:
        raise ValueError(
            f"Template has {weights.size} weights but the stem kernel is {side}x{side} ({side * side})."
        )
    norm = float(np.linalg.norm(weights))
    if norm == 0:
        raise ValueError("Cannot seed the observer from an all-zero template.")
    stem = net.layers[0]
    assert isinstance(stem, TemplateStem)
    head = net.layers[-2]
    with torch.no_grad():
        stem.template.copy_(torch.as_tensor((weights / norm).reshape(1, 1, side, side), dtype=dtype))
        # larger template response maps to a larger initial score
        head.weight[0, 0] = head.weight[0, 0].abs()
    return net


def skip_connection_count(net: Network) -> int:
    return sum(1 for layer in net.specs if layer.kind == "residual_block")


def augment_flips(images: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Identity, left-right, up-down and both flips: four times the data."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    stacks = [images, images[:, :, ::-1], images[:, ::-1, :], images[:, ::-1, ::-1]]
    return np.ascontiguousarray(np.concatenate(stacks)), np.tile(labels, 4)


def train_learned_observer(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    *,
    val_images: Optional[np.ndarray] = None,
    val_labels: Optional[np.ndarray] = None,
    clean_images: Optional[np.ndarray] = None,
    refresh: Optional[RefreshFn] = None,
    augment: bool = False,
    label: str = "observer",
) -> TrainResult:
    if config.loss != "bce":
        raise ValueError(f"Observer training uses the bce loss, got {config.loss}.")
    train_labels = np.asarray(labels)
    if augment:
        images, train_labels = augment_flips(images, labels)
        if clean_images is not None:
            clean_images, _ = augment_flips(clean_images, labels)
    data = TrainingData(
        inputs=images,
        targets=train_labels.astype(np.float32),
        val_inputs=val_images,
        val_targets=None if val_labels is None else np.asarray(val_labels, dtype=np.float32),
        clean_inputs=clean_images,
        refresh=refresh,
    )
    return train(net, data, config, label=label)


def score_learned(net: Network, images: np.ndarray, *, batch_size: int = 256) -> np.ndarray | float:
    """Sigmoid output in (0, 1), used directly as the test statistic."""
    arr = np.asarray(images)
    single = arr.ndim == 2
    logits = predict(net, arr[None] if single else arr, batch_size=batch_size, logits=True).reshape(-1)
    # sigmoid evaluated in float64 to limit saturation ties
    scores = expit(logits)
    return float(scores[0]) if single else scores
