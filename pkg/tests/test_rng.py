import numpy as np
import pytest

from pathaug import derive_rng


def test_same_key_same_stream():
    a = derive_rng(42, 0, 7).random(16)
    b = derive_rng(42, 0, 7).random(16)
    assert np.array_equal(a, b)


def test_different_key_parts_give_different_streams():
    base = derive_rng(42).random(8)
    for key in [(0,), (1,), (0, 0), (0, 1), (1, 0)]:
        other = derive_rng(42, *key).random(8)
        assert not np.array_equal(base, other)


def test_key_order_matters():
    a = derive_rng(5, 1, 2).random(8)
    b = derive_rng(5, 2, 1).random(8)
    assert not np.array_equal(a, b)


def test_seed_wraps_to_64_bits():
    a = derive_rng(-1).random(4)
    b = derive_rng(2**64 - 1).random(4)
    assert np.array_equal(a, b)


def test_negative_key_part_rejected():
    with pytest.raises(ValueError):
        derive_rng(1, -3)


def test_generator_type():
    rng = derive_rng(0)
    assert isinstance(rng, np.random.Generator)
    assert isinstance(rng.bit_generator, np.random.PCG64)
