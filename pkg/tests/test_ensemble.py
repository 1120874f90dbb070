import numpy as np
import pytest

from tbiq.degrade import MC_DEGRADATION
from tbiq.ensemble import (
    BackgroundBank,
    ObjectFactory,
    TaskSpec,
    add_noise,
    crop_set,
    generate_ensemble,
    image_digest,
    make_noise_refresher,
    measure,
    pre_noise,
)
from tbiq.objects import ClbParams, McSignalSpec, SyntheticMcParams


def _rayleigh_task(**kwargs) -> TaskSpec:
    clb = ClbParams(mean_clusters=4.0, mean_blobs_per_cluster=5.0, width=16, height=16)
    kwargs.setdefault("crop_size", (8, 8))
    return TaskSpec(clb=clb, **kwargs)


def _mc_task() -> TaskSpec:
    clb = ClbParams(mean_clusters=4.0, mean_blobs_per_cluster=5.0, width=16, height=16)
    mc = McSignalSpec(library_size=2, crop_size=16, synthetic=SyntheticMcParams(size=32, disk_radius=8.0))
    return TaskSpec(kind="mc_cluster", clb=clb, mc=mc, degradation=MC_DEGRADATION, crop_size=(8, 8))


def test_objects_are_interleaved_and_regenerable_in_chunks():
    factory = ObjectFactory(_rayleigh_task(), 7)
    whole = factory.objects("test", 4)
    assert whole.labels.tolist() == [0, 1] * 4
    assert whole.ids.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
    first = factory.objects("test", 2)
    second = factory.objects("test", 2, start=2)
    np.testing.assert_array_equal(np.concatenate([first.images, second.images]), whole.images)


def test_threaded_generation_matches_serial():
    factory = ObjectFactory(_rayleigh_task(), 7)
    serial = factory.objects("stats", 3)
    threaded = factory.objects("stats", 3, n_jobs=2)
    np.testing.assert_array_equal(serial.images, threaded.images)


def test_classes_share_background_streams_only_through_the_signal():
    task = _rayleigh_task()
    factory = ObjectFactory(task, 1)
    longer = ObjectFactory(task.with_signal_length(5), 1)
    # backgrounds ignore the signal length
    np.testing.assert_array_equal(factory.background("test", 1, 0), longer.background("test", 1, 0))
    assert not np.array_equal(factory.make("test", 1, 0), longer.make("test", 1, 0))


def test_background_bank_is_shared_across_signal_lengths():
    task = _rayleigh_task()
    bank = BackgroundBank(task.clb, 1, max_bytes=1 << 20)
    first = ObjectFactory(task, 1, backgrounds=bank).objects("test", 3)
    assert len(bank) == 6 and bank.hits == 0
    longer = ObjectFactory(task.with_signal_length(5), 1, backgrounds=bank)
    second = longer.objects("test", 3)
    assert bank.hits == 6
    uncached = ObjectFactory(task.with_signal_length(5), 1).objects("test", 3)
    np.testing.assert_array_equal(second.images, uncached.images)
    assert not np.array_equal(first.images, second.images)


def test_background_bank_respects_its_budget_and_owner():
    task = _rayleigh_task()
    one_image = 16 * 16 * 8
    bank = BackgroundBank(task.clb, 1, max_bytes=2 * one_image)
    ObjectFactory(task, 1, backgrounds=bank).objects("test", 3)
    assert len(bank) == 2
    with pytest.raises(ValueError, match="another master seed"):
        ObjectFactory(task, 2, backgrounds=bank)


def test_splits_draw_disjoint_images():
    factory = ObjectFactory(_rayleigh_task(), 3)
    a = image_digest(factory.objects("train", 5).images)
    b = image_digest(factory.objects("test", 5).images)
    assert not a & b


def test_mc_class0_is_background_only():
    factory = ObjectFactory(_mc_task(), 5)
    np.testing.assert_array_equal(factory.make("test", 0, 2), factory.background("test", 0, 2))
    with_signal = factory.make("test", 1, 2)
    assert np.all(with_signal >= factory.background("test", 1, 2))


def test_measure_is_seeded_per_image_and_realization():
    task = _rayleigh_task()
    objects = ObjectFactory(task, 2).objects("test", 3)
    a = measure(objects, task, "LR", 2, "test")
    b = measure(objects, task, "LR", 2, "test")
    c = measure(objects, task, "LR", 2, "test", realization=1)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)
    assert a.images.dtype == np.float32
    np.testing.assert_array_equal(a.labels, objects.labels)


def test_mc_lr_keeps_the_hr_grid():
    task = _mc_task()
    objects = ObjectFactory(task, 4).objects("test", 2)
    lr = measure(objects, task, "LR", 4, "test")
    assert lr.shape == (16, 16)
    assert pre_noise(objects.images, task, "LR").shape == (2 * 2, 8, 8)


def test_noise_refresher_draws_new_noise():
    task = _rayleigh_task()
    clean = pre_noise(ObjectFactory(task, 0).objects("train", 2).images, task, "HR")
    refresh = make_noise_refresher(task, "HR")
    rng = np.random.default_rng(0)
    first = refresh(clean, rng)
    second = refresh(clean, rng)
    assert first.shape == clean.shape
    assert not np.array_equal(first, second)


def test_unknown_resolution_is_rejected():
    task = _rayleigh_task()
    with pytest.raises(ValueError, match="Unsupported resolution"):
        pre_noise(np.zeros((1, 16, 16)), task, "SR")
    with pytest.raises(ValueError, match="Unsupported resolution"):
        add_noise(np.zeros((1, 16, 16)), task, "XR", [0])


def test_generate_ensemble_and_crop():
    task = _rayleigh_task()
    images = generate_ensemble(task, 3, 9, split="val")
    assert len(images) == 6
    assert images.shape == (16, 16)
    cropped = crop_set(images, task.crop_size)
    assert cropped.shape == (8, 8)
    np.testing.assert_array_equal(cropped.images, images.images[:, 4:12, 4:12])


def test_task_validation():
    with pytest.raises(ValueError, match="crop_size"):
        ObjectFactory(_rayleigh_task(crop_size=(32, 32)), 0)
    with pytest.raises(ValueError, match="Unsupported task.kind"):
        ObjectFactory(_rayleigh_task(kind="xray"), 0)
