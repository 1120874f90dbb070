import numpy as np
import pytest

from tbiq.seeding import derive_seed, make_rng, seed_sequence


def test_derive_seed_is_deterministic():
    assert derive_seed(7, "rayleigh", "test", 3) == derive_seed(7, "rayleigh", "test", 3)


def test_derive_seed_separates_streams():
    seeds = {
        derive_seed(7, "rayleigh", "test", 3),
        derive_seed(7, "rayleigh", "test", 4),
        derive_seed(7, "rayleigh", "train", 3),
        derive_seed(8, "rayleigh", "test", 3),
    }
    assert len(seeds) == 4
    assert all(0 <= s < 2**63 for s in seeds)


def test_seed_sequence_rejects_bad_keys():
    with pytest.raises(ValueError, match="Master seed"):
        seed_sequence(-1)
    with pytest.raises(TypeError, match="bool"):
        derive_seed(0, True)
    with pytest.raises(ValueError, match=">= 0"):
        derive_seed(0, -3)


def test_make_rng_passes_generators_through():
    rng = np.random.default_rng(0)
    assert make_rng(rng) is rng
    a = make_rng(derive_seed(1, "x")).normal(size=4)
    b = make_rng(derive_seed(1, "x")).normal(size=4)
    np.testing.assert_array_equal(a, b)
