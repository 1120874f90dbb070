import numpy as np
import pytest

from tbiq.nn_engine import TrainConfig
from tbiq.sr_models import (
    SRCNN_DEPTHS,
    SrcnnSpec,
    build_srcnn,
    srcnn_layers,
    srcnn_parameter_count,
    super_resolve,
    train_sr,
)


def test_three_layer_srcnn_parameter_count():
    spec = SrcnnSpec(n_layers=3)
    assert srcnn_parameter_count(spec) == 29_057
    assert build_srcnn(spec, 0).parameter_count() == 29_057


@pytest.mark.parametrize("n_layers", SRCNN_DEPTHS)
def test_srcnn_depth_layout(n_layers):
    layers = srcnn_layers(SrcnnSpec(n_layers=n_layers))
    convs = [layer for layer in layers if layer.kind == "conv"]
    assert len(convs) == n_layers
    assert convs[0].kernel == 9
    assert all(layer.kernel == 5 for layer in convs[1:])
    assert convs[-1].out_channels == 1
    # no activation after the last conv
    assert layers[-1].kind == "conv"


@pytest.mark.parametrize("n_layers", [1, 9])
def test_srcnn_depth_bounds(n_layers):
    with pytest.raises(ValueError, match=r"\[2, 8\]"):
        SrcnnSpec(n_layers=n_layers).validate()


def test_srcnn_rejects_even_kernels():
    with pytest.raises(ValueError, match="odd"):
        SrcnnSpec(first_kernel=8).validate()


def test_super_resolve_keeps_the_grid():
    net = build_srcnn(SrcnnSpec(n_layers=2, hidden_filters=4), 0)
    stack = np.random.default_rng(0).normal(size=(3, 12, 10)).astype(np.float32)
    assert super_resolve(net, stack).shape == (3, 12, 10)
    assert super_resolve(net, stack[0]).shape == (12, 10)


def test_train_sr_reduces_loss_and_requires_mse():
    rng = np.random.default_rng(1)
    hr = rng.normal(size=(16, 10, 10)).astype(np.float32)
    lr = hr + rng.normal(0, 0.1, size=hr.shape).astype(np.float32)
    net = build_srcnn(SrcnnSpec(n_layers=2, first_kernel=3, other_kernel=3, hidden_filters=4), 2)
    result = train_sr(net, lr, hr, TrainConfig(learning_rate=1e-2, batch_size=8, epochs=20, seed=3))
    history = result.history
    assert history["train_loss"].iloc[-1] < history["train_loss"].iloc[0]
    with pytest.raises(ValueError, match="mse"):
        train_sr(net, lr, hr, TrainConfig(loss="bce", epochs=1))
    with pytest.raises(ValueError, match="share dimensions"):
        train_sr(net, lr[:, :8], hr, TrainConfig(epochs=1))


def test_super_resolve_is_deterministic_and_finite():
    net = build_srcnn(SrcnnSpec(n_layers=3, hidden_filters=4), 5)
    stack = np.random.default_rng(2).normal(size=(2, 12, 12)).astype(np.float32)
    a = super_resolve(net, stack)
    np.testing.assert_array_equal(a, super_resolve(net, stack))
    assert np.all(np.isfinite(a))


def _smooth_pairs(rng, n):
    from scipy import ndimage

    field = rng.normal(size=(n, 16, 16))
    hr = np.stack([2.0 + 2.0 * ndimage.gaussian_filter(f, 2.0, mode="mirror") for f in field])
    lr = np.stack([ndimage.gaussian_filter(h, 1.0, mode="mirror") for h in hr]) + rng.normal(0, 0.2, hr.shape)
    return lr.astype(np.float32), hr.astype(np.float32)


@pytest.mark.slow
def test_trained_srcnn_beats_the_lr_baseline_on_most_images():
    rng = np.random.default_rng(4)
    lr_train, hr_train = _smooth_pairs(rng, 400)
    lr_val, hr_val = _smooth_pairs(rng, 50)
    lr_test, hr_test = _smooth_pairs(rng, 100)
    net = build_srcnn(SrcnnSpec(n_layers=3, first_kernel=5, other_kernel=3, hidden_filters=8), 0)
    config = TrainConfig(learning_rate=3e-3, batch_size=16, epochs=60, seed=1)
    result = train_sr(net, lr_train, hr_train, config, lr_val=lr_val, hr_val=hr_val)
    sr = super_resolve(result.net, lr_test)
    sr_mse = ((sr - hr_test) ** 2).mean(axis=(1, 2))
    lr_mse = ((lr_test - hr_test) ** 2).mean(axis=(1, 2))
    assert np.mean(sr_mse < lr_mse) >= 0.8
