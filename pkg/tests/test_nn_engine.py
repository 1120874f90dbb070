import numpy as np
import pytest
import torch

from tbiq.learned import LearnedObserverSpec, build_learned_observer
from tbiq.nn_engine import (
    AdamOptimizer,
    ForwardCacheError,
    LayerSpec,
    NonFiniteGradientError,
    TrainConfig,
    TrainingData,
    adam_step,
    backward,
    build_network,
    compute_loss,
    conv,
    conv2d_forward,
    dense,
    forward_cached,
    global_avg_pool,
    predict,
    relu,
    residual_block,
    train,
    validate_layers,
)
from tbiq.sr_models import SrcnnSpec, build_srcnn


def _finite_difference_check(net, x, logits, n_checks=6, eps=1e-6):
    rng = np.random.default_rng(0)
    cache = forward_cached(net, x, logits=logits)
    grad_out = torch.as_tensor(rng.normal(size=tuple(cache.output.shape)), dtype=torch.float64)
    grads = backward(net, cache, grad_out)

    def objective() -> float:
        with torch.no_grad():
            out = net(torch.as_tensor(x, dtype=torch.float64)[:, None], logits=logits)
            return float((out * grad_out).sum())

    for name, param in net.named_parameters():
        flat = param.data.view(-1)
        for idx in rng.choice(flat.numel(), size=min(n_checks, flat.numel()), replace=False):
            original = float(flat[idx])
            flat[idx] = original + eps
            plus = objective()
            flat[idx] = original - eps
            minus = objective()
            flat[idx] = original
            numeric = (plus - minus) / (2 * eps)
            analytic = float(grads.params[name].view(-1)[idx])
            assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7), name


def test_srcnn_gradients_match_finite_differences():
    net = build_srcnn(SrcnnSpec(n_layers=3, first_kernel=3, other_kernel=3, hidden_filters=4), 1, dtype=torch.float64)
    x = np.random.default_rng(1).normal(size=(2, 8, 8))
    _finite_difference_check(net, x, logits=False)


def test_observer_gradients_match_finite_differences():
    net = build_learned_observer(LearnedObserverSpec(n_residual_blocks=2, filters=4), 2, dtype=torch.float64)
    x = np.random.default_rng(2).normal(size=(3, 8, 8))
    _finite_difference_check(net, x, logits=True)


def test_input_gradient_matches_finite_differences():
    net = build_network([conv(1, 3, 3), relu(), conv(3, 1, 3)], 4, dtype=torch.float64)
    x = np.random.default_rng(3).normal(size=(1, 6, 6))
    cache = forward_cached(net, x)
    grad_out = torch.ones_like(cache.output)
    grads = backward(net, cache, grad_out)
    eps = 1e-6
    bumped = x.copy()
    bumped[0, 2, 3] += eps
    lowered = x.copy()
    lowered[0, 2, 3] -= eps
    with torch.no_grad():
        plus = float(net(torch.as_tensor(bumped)[:, None]).sum())
        minus = float(net(torch.as_tensor(lowered)[:, None]).sum())
    assert float(grads.inputs[0, 0, 2, 3]) == pytest.approx((plus - minus) / (2 * eps), rel=1e-5)


def test_backward_requires_a_fresh_cache():
    net = build_network([conv(1, 2, 3), relu(), conv(2, 1, 3)], 0)
    with pytest.raises(ForwardCacheError):
        backward(net, None, torch.zeros(1, 1, 4, 4))
    cache = forward_cached(net, np.zeros((1, 4, 4)))
    backward(net, cache, torch.zeros_like(cache.output))
    with pytest.raises(ForwardCacheError):
        backward(net, cache, torch.zeros_like(cache.output))


def test_adam_step_rejects_non_finite_gradients():
    net = build_network([conv(1, 1, 3)], 0)
    opt = AdamOptimizer(net, 1e-3)
    grads = {name: torch.full_like(p, float("nan")) for name, p in net.named_parameters()}
    with pytest.raises(NonFiniteGradientError):
        adam_step(net, grads, opt)
    assert opt.t == 0


def test_adam_step_moves_parameters_and_counts_steps():
    net = build_network([conv(1, 1, 3)], 0)
    before = [p.detach().clone() for p in net.parameters()]
    opt = AdamOptimizer(net, 1e-2)
    grads = {name: torch.ones_like(p) for name, p in net.named_parameters()}
    adam_step(net, grads, opt)
    assert opt.t == 1
    for old, new in zip(before, net.parameters()):
        # first bias-corrected Adam step moves each weight by lr against the gradient sign
        torch.testing.assert_close(new.detach(), old - 1e-2, rtol=0, atol=1e-6)


@pytest.mark.parametrize(
    "layers,match",
    [
        ([conv(1, 4, 4)], "odd kernel"),
        ([conv(1, 4, 3), conv(2, 1, 3)], "expects 2 inputs"),
        ([conv(1, 4, 3), global_avg_pool(), conv(4, 1, 3)], "follows global pooling"),
        ([conv(1, 4, 3), dense(4, 1)], "must follow global_avg_pool"),
        ([LayerSpec(kind="pool")], "Unsupported layer kind"),
    ],
)
def test_validate_layers_rejects_bad_stacks(layers, match):
    with pytest.raises(ValueError, match=match):
        validate_layers(layers)


def test_residual_block_parameter_count():
    net = build_network([conv(1, 4, 3), residual_block(4), global_avg_pool(), dense(4, 1)], 0)
    expected = (9 * 4 + 4) + 2 * (9 * 16 + 4) + (4 + 1)
    assert net.parameter_count() == expected


def test_compute_loss_rejects_unknown_loss():
    out = torch.zeros(2, 1)
    with pytest.raises(ValueError, match="Unsupported loss"):
        compute_loss(out, out, "hinge")


def test_train_is_seeded_and_records_history():
    rng = np.random.default_rng(5)
    inputs = rng.normal(size=(8, 6, 6))
    targets = inputs * 0.5
    config = TrainConfig(learning_rate=1e-2, batch_size=4, epochs=3, seed=7)

    def fit():
        net = build_network([conv(1, 2, 3), relu(), conv(2, 1, 3)], 3)
        return train(net, TrainingData(inputs=inputs, targets=targets, val_inputs=inputs, val_targets=targets), config)

    first = fit()
    second = fit()
    assert list(first.history.columns) == ["epoch", "train_loss", "val_loss"]
    assert len(first.history) == 3
    assert 1 <= first.best_epoch <= 3
    np.testing.assert_array_equal(predict(first.net, inputs), predict(second.net, inputs))


def test_train_rejects_non_binary_bce_targets():
    net = build_learned_observer(LearnedObserverSpec(n_residual_blocks=2, filters=2), 0)
    data = TrainingData(inputs=np.zeros((2, 4, 4)), targets=np.array([0.0, 0.5]))
    with pytest.raises(ValueError, match="0/1"):
        train(net, data, TrainConfig(loss="bce", epochs=1))


def test_on_the_fly_noise_requires_clean_inputs():
    net = build_network([conv(1, 1, 3)], 0)
    data = TrainingData(inputs=np.zeros((2, 4, 4)), targets=np.zeros((2, 4, 4)))
    with pytest.raises(ValueError, match="clean_inputs"):
        train(net, data, TrainConfig(epochs=1, on_the_fly_noise=True))


def test_conv2d_matches_nested_loop_cross_correlation():
    net = build_network([conv(2, 3, 3)], 4, dtype=torch.float64)
    layer = net.layers[0]
    with torch.no_grad():
        layer.bias.copy_(torch.tensor([0.1, -0.2, 0.3], dtype=torch.float64))
    x = np.random.default_rng(5).normal(size=(2, 2, 5, 6))
    out = conv2d_forward(torch.as_tensor(x), layer).detach().numpy()
    weight = layer.weight.detach().numpy()
    bias = layer.bias.detach().numpy()
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((2, 3, 5, 6))
    for n in range(2):
        for o in range(3):
            for i in range(5):
                for j in range(6):
                    total = bias[o]
                    for c in range(2):
                        for ki in range(3):
                            for kj in range(3):
                                total += weight[o, c, ki, kj] * padded[n, c, i + ki, j + kj]
                    expected[n, o, i, j] = total
    np.testing.assert_allclose(out, expected, atol=1e-6)
    with pytest.raises(ValueError, match="input channels"):
        conv2d_forward(torch.zeros((1, 1, 5, 5), dtype=torch.float64), layer)


def test_conv2d_of_an_impulse_returns_the_kernel():
    net = build_network([conv(1, 1, 3)], 6, dtype=torch.float64)
    layer = net.layers[0]
    x = torch.zeros((1, 1, 5, 5), dtype=torch.float64)
    x[0, 0, 2, 2] = 1.0
    out = conv2d_forward(x, layer).detach().numpy()[0, 0]
    kernel = layer.weight.detach().numpy()[0, 0]
    np.testing.assert_allclose(out[1:4, 1:4], kernel[::-1, ::-1], atol=1e-12)


def test_adam_step_with_zero_gradients_leaves_parameters():
    net = build_network([conv(1, 2, 3)], 0)
    before = [p.detach().clone() for p in net.parameters()]
    opt = AdamOptimizer(net, 1e-2)
    adam_step(net, {name: torch.zeros_like(p) for name, p in net.named_parameters()}, opt)
    assert opt.t == 1
    for old, new in zip(before, net.parameters()):
        torch.testing.assert_close(new.detach(), old, rtol=0, atol=0)
