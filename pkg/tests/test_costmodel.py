import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heprune.costmodel import (DivisibilityError, LayerCostSpec, dominance_gap, exact_rotations,
                               network_cost, rotations_pruned, rotations_unpruned)
from heprune.masks import PruneMask


def test_unpruned_small_layer():
    assert rotations_unpruned(LayerCostSpec(4, 4, 3, 4)) == 11


def test_unpruned_resnet_like_layer():
    # (8 + 63 * 256/64) * 256/64
    assert rotations_unpruned(LayerCostSpec(256, 256, 3, 64)) == 1040


@pytest.mark.parametrize("f,c", [(1, 3), (3, 5), (5, 2)])
def test_unpruned_without_packing(f, c):
    assert rotations_unpruned(LayerCostSpec(c, c, f, 1)) == (f * f - 1) * c


def test_pruned_reductions():
    s = LayerCostSpec(256, 256, 3, 64)
    assert rotations_pruned(s) == rotations_unpruned(s)
    assert rotations_pruned(LayerCostSpec(4, 4, 3, 4, alpha=1.0, beta=0.0)) == 8
    # (0.5*8 + 0.5*252) * 4
    assert rotations_pruned(LayerCostSpec(256, 256, 3, 64, 0.5, 0.5)) == pytest.approx(520)


def test_spec_validation():
    with pytest.raises(DivisibilityError):
        LayerCostSpec(6, 4, 3, 4)
    with pytest.raises(ValueError):
        LayerCostSpec(4, 4, 3, 4, alpha=1.5)
    with pytest.raises(ValueError):
        LayerCostSpec(4, 4, 2, 4)


def test_dominance_gap_values():
    s = LayerCostSpec(256, 256, 3, 64)
    assert dominance_gap(s, 0.5) == (16, 504)
    assert dominance_gap(s, 0.0) == (0, 0)
    with pytest.raises(ValueError):
        dominance_gap(s, 1.2)


def test_dominance_gap_boundary_equal():
    # f^2 - 1 = 8 = (c_n - 1) * c_out / c_n with c_n = 2, c_out = 16
    p, d = dominance_gap(LayerCostSpec(16, 16, 3, 2), 0.3)
    assert p == pytest.approx(d)


@given(c_in_b=st.integers(1, 8), c_out_b=st.integers(1, 8), c_n=st.sampled_from([1, 2, 4, 8, 16]),
       f=st.sampled_from([1, 3, 5, 7]), frac=st.floats(0.01, 1.0))
def test_dominance_ratio_independent_of_fraction(c_in_b, c_out_b, c_n, f, frac):
    s = LayerCostSpec(c_in_b * c_n, c_out_b * c_n, f, c_n)
    p, d = dominance_gap(s, frac)
    assert d * (f * f - 1) == pytest.approx(p * (c_n - 1) * c_out_b)
    if (c_n - 1) * c_out_b > f * f - 1:
        assert d > p


@given(a1=st.floats(0, 1), a2=st.floats(0, 1), b1=st.floats(0, 1), b2=st.floats(0, 1))
def test_pruned_monotone(a1, a2, b1, b2):
    lo_a, hi_a = sorted((a1, a2))
    lo_b, hi_b = sorted((b1, b2))
    lo = rotations_pruned(LayerCostSpec(16, 32, 3, 4, lo_a, lo_b))
    assert lo <= rotations_pruned(LayerCostSpec(16, 32, 3, 4, hi_a, lo_b))
    assert lo <= rotations_pruned(LayerCostSpec(16, 32, 3, 4, lo_a, hi_b))


def test_network_cost_aggregation():
    assert network_cost([]).unpruned == 0 and network_cost([]).pruned == 0
    s = LayerCostSpec(4, 4, 3, 4, 0.5, 0.5)
    one = network_cost([s])
    assert one.unpruned == 11 and one.pruned == pytest.approx(rotations_pruned(s))
    two = network_cost([s, s])
    assert two.unpruned == 22 and two.pruned == pytest.approx(2 * one.pruned)


def test_exact_rotations_equals_estimator_with_averaged_beta():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = PruneMask.full(16, 8, 3, 2)
        m.positional = rng.random((3, 3)) < 0.5
        m.diagonal = rng.random(m.diagonal.shape) < 0.5
        assert sum(exact_rotations(m)) == pytest.approx(rotations_pruned(LayerCostSpec.from_mask(m)))
