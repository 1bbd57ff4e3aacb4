import numpy as np

from residual_lab.rng import stream


def test_deterministic_per_key():
    a = stream(3, "init").standard_normal(8)
    b = stream(3, "init").standard_normal(8)
    assert np.array_equal(a, b)


def test_purposes_are_independent():
    a = stream(3, "init").standard_normal(8)
    b = stream(3, "batches").standard_normal(8)
    assert not np.array_equal(a, b)


def test_seeds_are_independent():
    a = stream(3, "init").standard_normal(8)
    b = stream(4, "init").standard_normal(8)
    assert not np.array_equal(a, b)


def test_key_is_not_string_concatenation_collision():
    # ("ab", 1) and ("a", "b1" would collide under naive concatenation only
    # if the separator were dropped; the colon keeps them apart.
    a = stream(11, "x").uniform(size=4)
    b = stream(1, "x1").uniform(size=4)
    assert not np.array_equal(a, b)


def test_pinned_values():
    # Regression pins: Philox keyed by blake2b-128 is platform-stable, so
    # these exact draws must never change.
    assert stream(0, "dataset").uniform() == 0.24159122773597486
    assert stream(0, "init").standard_normal() == -1.3060665004743548
    assert list(stream(7, "batches").integers(0, 100, 5)) == [54, 26, 14, 49, 86]
