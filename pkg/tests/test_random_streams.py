import numpy as np
import pytest

from src.models.random_streams import ROW_BLOCK, SLOT_L, SLOT_X, RandomStreams, block_ranges


def test_same_address_same_draws():
    a = RandomStreams(42).uniforms("simulate", SLOT_L, 3, (4, 5))
    b = RandomStreams(42).uniforms("simulate", SLOT_L, 3, (4, 5))
    assert np.array_equal(a, b)


def test_addresses_are_independent():
    streams = RandomStreams(42)
    base = streams.uniforms("simulate", SLOT_L, 0, (100,))
    assert not np.array_equal(base, streams.uniforms("simulate", SLOT_X, 0, (100,)))
    assert not np.array_equal(base, streams.uniforms("simulate", SLOT_L, 1, (100,)))
    assert not np.array_equal(base, streams.uniforms("bootstrap", SLOT_L, 0, (100,)))
    assert not np.array_equal(base, RandomStreams(43).uniforms("simulate", SLOT_L, 0, (100,)))


def test_uniforms_are_in_open_interval():
    u = RandomStreams(0).uniforms("simulate", SLOT_L, 0, (10_000,))
    assert np.all(u > 0.0) and np.all(u < 1.0)


def test_children_are_reproducible_and_distinct():
    streams = RandomStreams(9)
    assert streams.child("replicate", 4) == streams.child("replicate", 4)
    assert streams.child("replicate", 4).seed != streams.child("replicate", 5).seed


def test_block_ranges_cover_rows():
    blocks = list(block_ranges(2 * ROW_BLOCK + 7))
    assert [b[0] for b in blocks] == [0, 1, 2]
    assert blocks[-1] == (2, 2 * ROW_BLOCK, 2 * ROW_BLOCK + 7)


def test_bad_purpose_and_seed():
    with pytest.raises(ValueError):
        RandomStreams(0).generator("nonsense")
    with pytest.raises(ValueError):
        RandomStreams(-1)
