"""Small feed-forward conv nets: layer descriptors, gradients, Adam and the training loop.

Networks are described by an ordered list of :class:`LayerSpec` so that the
same description can be validated, counted, checkpointed and rebuilt. Layers
use zero ``same`` padding and stride 1; resampling lives in ``tbiq.degrade``.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn

logger = logging.getLogger("tbiq")

LAYER_KINDS = (
    "conv",
    "relu",
    "residual_block",
    "global_avg_pool",
    "dense",
    "sigmoid",
    "template_stem",
)
LOSSES = ("mse", "bce")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the optimizer step was not applied."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""


class ForwardCacheError(RuntimeError):
    """``backward`` was called without a live forward cache."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0

    def to_dict(self) -> dict:
        return {key: value for key, value in asdict(self).items() if value or key == "kind"}

    @classmethod
    def from_dict(cls, payload: dict) -> "LayerSpec":
        return cls(
            kind=str(payload["kind"]),
            in_channels=int(payload.get("in_channels", 0)),
            out_channels=int(payload.get("out_channels", 0)),
            kernel=int(payload.get("kernel", 0)),
        )


def conv(in_channels: int, out_channels: int, kernel: int) -> LayerSpec:
    return LayerSpec("conv", in_channels, out_channels, kernel)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def residual_block(channels: int, kernel: int = 3) -> LayerSpec:
    return LayerSpec("residual_block", channels, channels, kernel)


def global_avg_pool() -> LayerSpec:
    return LayerSpec("global_avg_pool")


def dense(in_features: int, out_features: int) -> LayerSpec:
    return LayerSpec("dense", in_features, out_features)


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def template_stem(template_side: int, out_channels: int) -> LayerSpec:
    return LayerSpec("template_stem", 1, out_channels, template_side)


def validate_layers(layers: Sequence[LayerSpec]) -> None:
    """Check kinds, kernel sizes and that adjacent layer shapes are compatible."""
    if not layers:
        raise ValueError("A network needs at least one layer.")
    channels: Optional[int] = None
    flat = False
    for position, layer in enumerate(layers):
        where = f"layer {position} ({layer.kind})"
        if layer.kind not in LAYER_KINDS:
            raise ValueError(f"Unsupported layer kind: {layer.kind}. Supported values: {', '.join(LAYER_KINDS)}.")
        if layer.kind in {"conv", "residual_block"}:
            if flat:
                raise ValueError(f"{where} needs a 4-D input but follows global pooling.")
            if layer.kernel < 1 or layer.kernel % 2 == 0:
                raise ValueError(f"{where}: same padding needs an odd kernel, got {layer.kernel}.")
        if layer.kind in {"conv", "residual_block", "dense", "template_stem"}:
            if layer.in_channels < 1 or layer.out_channels < 1:
                raise ValueError(f"{where}: channel counts must be >= 1.")
            if channels is not None and layer.in_channels != channels:
                raise ValueError(f"{where} expects {layer.in_channels} inputs but receives {channels}.")
            channels = layer.out_channels
        if layer.kind == "residual_block" and layer.in_channels != layer.out_channels:
            raise ValueError(f"{where}: residual blocks keep the channel count.")
        if layer.kind == "template_stem":
            if position != 0:
                raise ValueError(f"{where} must be the first layer.")
            if layer.out_channels < 2 or layer.kernel < 1:
                raise ValueError(f"{where}: needs out_channels >= 2 and a positive template side.")
        if layer.kind == "global_avg_pool":
            if flat:
                raise ValueError(f"{where}: input is already pooled.")
            flat = True
        if layer.kind == "dense" and not flat:
            raise ValueError(f"{where} must follow global_avg_pool.")


class ResidualBlock(nn.Module):
    """``x + conv(relu(conv(x)))`` with no activation after the addition."""

    def __init__(self, channels: int, kernel: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv2d(channels, channels, kernel, padding=kernel // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(F.relu(self.conv1(x)))


class GlobalAvgPool(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.mean(dim=(2, 3))


class TemplateStem(nn.Module):
    """Full-patch linear projection broadcast as one channel, next to a 3x3 conv bank.

    The projection channel is where a linear observer template can be seeded;
    after global pooling it carries exactly ``w . f + b``.
    """

    def __init__(self, template_side: int, out_channels: int) -> None:
        super().__init__()
        self.template = nn.Parameter(torch.zeros(1, 1, template_side, template_side))
        self.template_bias = nn.Parameter(torch.zeros(1))
        self.conv = nn.Conv2d(1, out_channels - 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[-2:]) != tuple(self.template.shape[-2:]):
            raise ValueError(
                f"Template stem expects {tuple(self.template.shape[-2:])} inputs, got {tuple(x.shape[-2:])}."
            )
        projection = (x * self.template).sum(dim=(2, 3), keepdim=True) + self.template_bias
        projection = projection.expand(-1, -1, x.shape[-2], x.shape[-1])
        return torch.cat([projection, self.conv(x)], dim=1)


def _make_module(layer: LayerSpec) -> nn.Module:
    if layer.kind == "conv":
        return nn.Conv2d(layer.in_channels, layer.out_channels, layer.kernel, padding=layer.kernel // 2)
    if layer.kind == "relu":
        return nn.ReLU()
    if layer.kind == "residual_block":
        return ResidualBlock(layer.in_channels, layer.kernel)
    if layer.kind == "global_avg_pool":
        return GlobalAvgPool()
    if layer.kind == "dense":
        return nn.Linear(layer.in_channels, layer.out_channels)
    if layer.kind == "sigmoid":
        return nn.Sigmoid()
    return TemplateStem(layer.kernel, layer.out_channels)


class Network(nn.Module):
    def __init__(self, layers: Sequence[LayerSpec]) -> None:
        super().__init__()
        validate_layers(layers)
        self.specs: list[LayerSpec] = list(layers)
        self.layers = nn.ModuleList(_make_module(layer) for layer in self.specs)

    @property
    def in_channels(self) -> int:
        return self.specs[0].in_channels or 1

    @property
    def ends_with_sigmoid(self) -> bool:
        return self.specs[-1].kind == "sigmoid"

    def forward(self, x: torch.Tensor, *, logits: bool = False) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"Network expects (batch, {self.in_channels}, height, width) input, got {tuple(x.shape)}."
            )
        stop = len(self.layers) - 1 if logits and self.ends_with_sigmoid else len(self.layers)
        for module in list(self.layers)[:stop]:
            x = module(x)
        return x

    def parameter_count(self) -> int:
        return int(sum(p.numel() for p in self.parameters()))

    def describe(self) -> list[dict]:
        return [layer.to_dict() for layer in self.specs]


def init_network(net: Network, seed: int) -> Network:
    """He-normal weights from a seeded generator, zero biases."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in net.named_parameters():
            if name.endswith("bias"):
                param.zero_()
                continue
            fan_in = int(np.prod(param.shape[1:])) if param.ndim > 1 else int(param.shape[0])
            std = math.sqrt(2.0 / max(fan_in, 1))
            draw = torch.randn(param.shape, generator=gen, dtype=torch.float64) * std
            param.copy_(draw.to(param.dtype))
    return net


def build_network(
    layers: Sequence[LayerSpec],
    seed: int,
    *,
    dtype: torch.dtype = torch.float32,
) -> Network:
    net = Network(layers)
    init_network(net, seed)
    return net.to(dtype)


def as_tensor4(x: np.ndarray | torch.Tensor, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Accept ``(n, h, w)`` or ``(n, c, h, w)`` arrays."""
    tensor = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x, dtype=dtype)
    if tensor.ndim == 2:
        tensor = tensor[None, None]
    elif tensor.ndim == 3:
        tensor = tensor[:, None]
    if tensor.ndim != 4:
        raise ValueError(f"Expected a 2-D, 3-D or 4-D array, got shape {tuple(tensor.shape)}.")
    return tensor


def conv2d_forward(x: torch.Tensor, layer: nn.Conv2d) -> torch.Tensor:
    """Same-padding cross-correlation plus bias."""
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise ValueError(
            f"conv2d expects {layer.in_channels} input channels, got input shape {tuple(x.shape)}."
        )
    return layer(x)


@dataclass
class ForwardCache:
    inputs: torch.Tensor
    output: torch.Tensor
    consumed: bool = False


@dataclass
class Gradients:
    params: dict[str, torch.Tensor]
    inputs: torch.Tensor


def forward_cached(net: Network, x: np.ndarray | torch.Tensor, *, logits: bool = False) -> ForwardCache:
    dtype = next(net.parameters()).dtype
    inputs = as_tensor4(x, dtype=dtype).detach().clone().requires_grad_(True)
    return ForwardCache(inputs=inputs, output=net(inputs, logits=logits))


def backward(
    net: Network,
    cache: Optional[ForwardCache],
    grad_out: torch.Tensor | np.ndarray,
) -> Gradients:
    """Reverse-mode gradients of ``<output, grad_out>`` for every parameter and the input."""
    if cache is None or cache.consumed:
        raise ForwardCacheError("backward requires a fresh forward_cached() result.")
    grad_out = torch.as_tensor(grad_out, dtype=cache.output.dtype)
    if grad_out.shape != cache.output.shape:
        raise ValueError(
            f"grad_out shape {tuple(grad_out.shape)} does not match output {tuple(cache.output.shape)}."
        )
    names = [name for name, _ in net.named_parameters()]
    params = [param for _, param in net.named_parameters()]
    grads = torch.autograd.grad(
        cache.output,
        [cache.inputs, *params],
        grad_outputs=grad_out,
        allow_unused=True,
    )
    cache.consumed = True
    filled = [torch.zeros_like(t) if g is None else g for g, t in zip(grads, [cache.inputs, *params])]
    return Gradients(params=dict(zip(names, filled[1:])), inputs=filled[0])


class AdamOptimizer:
    """Bias-corrected Adam over a network's parameters (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, net: Network, learning_rate: float) -> None:
        if float(learning_rate) < 0:
            raise ValueError(f"learning_rate must be >= 0, got {learning_rate}.")
        self.net = net
        self.learning_rate = float(learning_rate)
        self.torch_optimizer = torch.optim.Adam(
            net.parameters(), lr=self.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        self.t = 0

    def state_dict(self) -> dict:
        return {"t": self.t, "torch": self.torch_optimizer.state_dict()}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state.get("t", 0))
        self.torch_optimizer.load_state_dict(state["torch"])


def _check_finite(grads: dict[str, torch.Tensor]) -> None:
    bad = [name for name, grad in grads.items() if not bool(torch.isfinite(grad).all())]
    if bad:
        raise NonFiniteGradientError(f"Non-finite gradients in: {', '.join(bad)}")


def adam_step(net: Network, grads: dict[str, torch.Tensor], optimizer: AdamOptimizer) -> Network:
    if optimizer.net is not net:
        raise ValueError("Optimizer was built for a different network.")
    _check_finite(grads)
    for name, param in net.named_parameters():
        grad = grads.get(name)
        param.grad = torch.zeros_like(param) if grad is None else grad.detach().to(param.dtype)
    optimizer.torch_optimizer.step()
    optimizer.torch_optimizer.zero_grad(set_to_none=True)
    optimizer.t += 1
    return net


def compute_loss(output: torch.Tensor, target: torch.Tensor, loss: str) -> torch.Tensor:
    if loss == "mse":
        if output.shape != target.shape:
            raise ValueError(f"MSE output {tuple(output.shape)} and target {tuple(target.shape)} differ.")
        return F.mse_loss(output, target)
    if loss == "bce":
        # fused sigmoid + cross-entropy on logits
        return F.binary_cross_entropy_with_logits(output.reshape(-1), target.reshape(-1))
    raise ValueError(f"Unsupported loss: {loss}. Supported values: {', '.join(LOSSES)}.")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    loss: str = "mse"
    seed: int = 0
    on_the_fly_noise: bool = False

    def validate(self) -> None:
        if not math.isfinite(float(self.learning_rate)) or float(self.learning_rate) < 0:
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}.")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}.")
        if int(self.epochs) < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}.")
        if self.loss not in LOSSES:
            raise ValueError(f"Unsupported loss: {self.loss}. Supported values: {', '.join(LOSSES)}.")


RefreshFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass
class TrainingData:
    inputs: np.ndarray
    targets: np.ndarray
    val_inputs: Optional[np.ndarray] = None
    val_targets: Optional[np.ndarray] = None
    clean_inputs: Optional[np.ndarray] = None
    refresh: Optional[RefreshFn] = None

    def __len__(self) -> int:
        return int(np.asarray(self.inputs).shape[0])

    @property
    def has_validation(self) -> bool:
        return self.val_inputs is not None and self.val_targets is not None and len(self.val_inputs) > 0


@dataclass
class TrainResult:
    net: Network
    history: pd.DataFrame
    best_epoch: int
    best_loss: float
    optimizer: Optional[AdamOptimizer] = field(repr=False, default=None)


def _target_tensor(targets: np.ndarray, loss: str, dtype: torch.dtype) -> torch.Tensor:
    if loss == "mse":
        return as_tensor4(targets, dtype=dtype)
    return torch.as_tensor(np.asarray(targets).reshape(-1, 1), dtype=dtype)


def _batches(n: int, batch_size: int) -> Iterable[slice]:
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def evaluate_loss(net: Network, inputs: np.ndarray, targets: np.ndarray, loss: str, batch_size: int = 256) -> float:
    dtype = next(net.parameters()).dtype
    total = 0.0
    count = 0
    net.eval()
    with torch.no_grad():
        for sl in _batches(len(inputs), batch_size):
            x = as_tensor4(inputs[sl], dtype=dtype)
            y = _target_tensor(targets[sl], loss, dtype)
            out = net(x, logits=(loss == "bce"))
            size = x.shape[0]
            total += float(compute_loss(out, y, loss).double()) * size
            count += size
    return total / max(count, 1)


def predict(net: Network, inputs: np.ndarray, *, batch_size: int = 256, logits: bool = False) -> np.ndarray:
    dtype = next(net.parameters()).dtype
    outputs = []
    net.eval()
    with torch.no_grad():
        for sl in _batches(len(inputs), batch_size):
            outputs.append(net(as_tensor4(inputs[sl], dtype=dtype), logits=logits).cpu().numpy())
    if not outputs:
        return np.empty((0,))
    return np.concatenate(outputs).astype(np.float64)


def train(net: Network, data: TrainingData, config: TrainConfig, *, label: str = "net") -> TrainResult:
    """Seeded mini-batch Adam; keeps the snapshot with the best validation loss."""
    config.validate()
    n = len(data)
    if n == 0:
        raise ValueError("Training data is empty.")
    if config.on_the_fly_noise and (data.clean_inputs is None or data.refresh is None):
        raise ValueError("on_the_fly_noise requires clean_inputs and a refresh function.")
    if config.loss == "bce":
        labels = set(np.unique(np.asarray(data.targets)).tolist())
        if not labels <= {0, 1}:
            raise ValueError(f"BCE targets must be 0/1, got {sorted(labels)}.")
    dtype = next(net.parameters()).dtype
    rng = np.random.default_rng(int(config.seed))
    optimizer = AdamOptimizer(net, config.learning_rate)
    targets_all = np.asarray(data.targets)
    best_state = copy.deepcopy(net.state_dict())
    best_loss = math.inf
    best_epoch = 0
    records = []
    for epoch in range(1, int(config.epochs) + 1):
        order = rng.permutation(n)
        running = 0.0
        net.train()
        for sl in _batches(n, int(config.batch_size)):
            idx = order[sl]
            if config.on_the_fly_noise:
                batch_inputs = data.refresh(np.asarray(data.clean_inputs)[idx], rng)
            else:
                batch_inputs = np.asarray(data.inputs)[idx]
            cache = forward_cached(net, batch_inputs, logits=(config.loss == "bce"))
            target = _target_tensor(targets_all[idx], config.loss, dtype)
            loss_value = compute_loss(cache.output, target, config.loss)
            if not bool(torch.isfinite(loss_value)):
                raise TrainingDivergedError(
                    f"{label}: non-finite loss {float(loss_value)} at epoch {epoch}, batch starting {sl.start}."
                )
            (grad_out,) = torch.autograd.grad(loss_value, cache.output, retain_graph=True)
            grads = backward(net, cache, grad_out)
            adam_step(net, grads.params, optimizer)
            running += float(loss_value.detach().double()) * len(idx)
        train_loss = running / n
        if data.has_validation:
            val_loss = evaluate_loss(net, data.val_inputs, np.asarray(data.val_targets), config.loss)
        else:
            val_loss = float("nan")
        monitored = val_loss if data.has_validation else train_loss
        if monitored < best_loss:
            best_loss = monitored
            best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
        records.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.debug("%s epoch %d train_loss=%.6g val_loss=%.6g", label, epoch, train_loss, val_loss)
    net.load_state_dict(best_state)
    logger.info("%s best epoch %d (loss %.6g)", label, best_epoch, best_loss)
    history = pd.DataFrame.from_records(records, columns=["epoch", "train_loss", "val_loss"])
    return TrainResult(net=net, history=history, best_epoch=best_epoch, best_loss=best_loss, optimizer=optimizer)
