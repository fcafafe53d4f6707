import pytest

from constants import PAIRING_COUNTS
from oracles import double_factorial, pairings
from toeplab.model import PairPartition
from toeplab.partitions import (OddSize, ShapeMismatch, count_pairings, enumerate_pairings,
                                pairing_arrays, segment_of, sign_maps)


@pytest.mark.parametrize("k", range(1, 6))
def test_enumeration_matches_recursive_oracle(k):
    mine = {p.blocks for p in enumerate_pairings(2 * k)}
    ref = {tuple(sorted((a + 1, b + 1) for a, b in p)) for p in pairings(2 * k)}
    assert mine == ref
    assert len(mine) == double_factorial(2 * k - 1) == PAIRING_COUNTS[k - 1]


def test_canonical_order_is_stable():
    first = [p.blocks for p in enumerate_pairings(6)]
    assert first == [p.blocks for p in enumerate_pairings(6)]
    assert first[0] == ((1, 2), (3, 4), (5, 6))


def test_count_and_odd_size():
    assert count_pairings(14) == 135135
    assert enumerate_pairings(0)[0].k == 0
    with pytest.raises(OddSize):
        enumerate_pairings(3)


def test_pairing_arrays():
    labels, opener = pairing_arrays(4)
    assert labels.shape == (3, 4)
    assert opener.sum(axis=1).tolist() == [2, 2, 2]


def test_segment_of():
    assert segment_of((2, 3, 6), 6).tolist() == [1, 1, 2, 3, 3, 3]


def test_sign_maps_basic():
    pi = PairPartition(((1, 3), (2, 4)))
    sm = sign_maps(pi, ["1", "*", "1", "1"])
    assert sm.eps_prime == (1, -1, 1, 1)
    assert sm.eps_pi == (-1, -1, 1, 1)
    # positions 1 and 3 share a star, 2 and 4 do not
    assert sm.xi == (-1, 1, 1, 1)
    assert sm.nu == (-1, 1, -1, 1)


def test_sign_maps_with_segments():
    pi = PairPartition(((1, 2),))
    sm = sign_maps(pi, [1, 1], k_cum=(1, 2))
    assert sm.nu == (-1, 1)
    with pytest.raises(ShapeMismatch):
        sign_maps(pi, [1, 1], k_cum=(1, 3))
    with pytest.raises(ShapeMismatch):
        sign_maps(pi, [1, 1, 1])
