import numpy as np
import pytest
import torch

from tbiq.learned import (
    LearnedObserverSpec,
    augment_flips,
    build_learned_observer,
    resnet_observer_layers,
    score_learned,
    skip_connection_count,
    train_learned_observer,
)
from tbiq.nn_engine import TrainConfig
from tbiq.observers import LinearTemplate


@pytest.mark.parametrize("blocks", [2, 4, 6, 8])
def test_observer_has_one_skip_per_block(blocks):
    net = build_learned_observer(LearnedObserverSpec(n_residual_blocks=blocks, filters=4), 0)
    assert skip_connection_count(net) == blocks
    kinds = [layer.kind for layer in resnet_observer_layers(LearnedObserverSpec(n_residual_blocks=blocks))]
    assert kinds[-3:] == ["global_avg_pool", "dense", "sigmoid"]


def test_observer_rejects_unsupported_block_counts():
    with pytest.raises(ValueError, match="n_residual_blocks"):
        LearnedObserverSpec(n_residual_blocks=3).validate()


def test_augment_flips_quadruples_the_data():
    images = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
    labels = np.array([0, 1])
    out, out_labels = augment_flips(images, labels)
    assert out.shape == (8, 3, 3)
    np.testing.assert_array_equal(out_labels, [0, 1, 0, 1, 0, 1, 0, 1])
    np.testing.assert_array_equal(out[2], images[0][:, ::-1])
    np.testing.assert_array_equal(out[4], images[0][::-1, :])
    np.testing.assert_array_equal(out[6], images[0][::-1, ::-1])


def test_rho_template_initialization_seeds_the_stem():
    weights = np.arange(1.0, 17.0)
    template = LinearTemplate(weights, "RHO", lam=1e-6, rank=16, patch_shape=(4, 4))
    spec = LearnedObserverSpec(n_residual_blocks=2, filters=4, init="rho_template", template_kernel=4)
    net = build_learned_observer(spec, 0, template, dtype=torch.float64)
    stem = net.layers[0].template.detach().numpy().reshape(-1)
    np.testing.assert_allclose(stem, weights / np.linalg.norm(weights))
    assert float(net.layers[-2].weight[0, 0]) >= 0.0


def test_rho_template_initialization_checks_the_template():
    spec = LearnedObserverSpec(n_residual_blocks=2, filters=4, init="rho_template", template_kernel=4)
    with pytest.raises(ValueError, match="requires an RHO template"):
        build_learned_observer(spec, 0)
    wrong = LinearTemplate(np.ones(9), "RHO", lam=1e-6, rank=9)
    with pytest.raises(ValueError, match="stem kernel"):
        build_learned_observer(spec, 0, wrong)


def test_learned_scores_lie_in_unit_interval():
    net = build_learned_observer(LearnedObserverSpec(n_residual_blocks=2, filters=4), 1)
    images = np.random.default_rng(0).normal(size=(5, 8, 8)).astype(np.float32)
    scores = score_learned(net, images)
    assert scores.shape == (5,)
    assert np.all((scores > 0) & (scores < 1))
    assert isinstance(score_learned(net, images[0]), float)


def test_observer_training_on_a_separable_task():
    rng = np.random.default_rng(2)
    labels = np.tile([0, 1], 16)
    images = rng.normal(0, 0.1, size=(32, 8, 8)).astype(np.float32)
    images[labels == 1] += 1.0
    net = build_learned_observer(LearnedObserverSpec(n_residual_blocks=2, filters=4), 3)
    config = TrainConfig(learning_rate=1e-2, batch_size=8, epochs=15, loss="bce", seed=0)
    result = train_learned_observer(net, images, labels, config, augment=True)
    scores = score_learned(result.net, images)
    assert scores[labels == 1].mean() > scores[labels == 0].mean()
    with pytest.raises(ValueError, match="bce"):
        train_learned_observer(net, images, labels, TrainConfig(loss="mse", epochs=1))
