import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surfkmc.grid import ContinuumField
from surfkmc.scaling import ScalingKind, cell_average, compare, project
from surfkmc.surface import HeightField, LatticeShape


def test_exponents():
    sm = ScalingKind("smooth")
    assert (sm.a, sm.b) == (1.0, 4.0)
    rg2 = ScalingKind("rough", p=2.0)
    assert (rg2.a, rg2.b) == (2.0, 4.0)
    rg15 = ScalingKind("rough", p=1.5)
    assert rg15.a == pytest.approx(3.0)
    assert rg15.b == pytest.approx(5.0)


def test_rough_requires_superlinear_potential():
    with pytest.raises(ValueError):
        ScalingKind("rough")
    with pytest.raises(ValueError):
        ScalingKind("rough", p=1.0)
    with pytest.raises(ValueError):
        ScalingKind("weird")


def test_project_smooth():
    shape = LatticeShape(1, 10)
    h = HeightField(shape, np.arange(10))
    t, f = project(h, ScalingKind("smooth"), tau=2.0e4)
    assert t == pytest.approx(2.0e4 / 10 ** 4)
    assert f.M == 10 and f.d == 1
    np.testing.assert_allclose(f.values, np.arange(10) / 10.0)


def test_project_rough_2d():
    shape = LatticeShape(2, 5)
    h = HeightField(shape, np.full(25, 50))
    t, f = project(h, ScalingKind("rough", p=2.0), tau=625.0)
    assert t == pytest.approx(625.0 / 5 ** 4)
    assert f.values.shape == (5, 5)
    np.testing.assert_allclose(f.values, 50 / 25.0)


def test_cell_average_exact_ratio():
    # cells are centered at i/M, so coarse cell i takes all of fine cell 2i
    # and half of each flanking fine cell
    f = ContinuumField(1, 6, np.array([0.0, 6.0, 0.0, 0.0, 6.0, 0.0]))
    g = cell_average(f, 3)
    assert g.M == 3
    np.testing.assert_array_equal(g.values, [1.5, 1.5, 3.0])


def test_cell_average_identity_and_refusal():
    f = ContinuumField(1, 5, np.arange(5.0))
    same = cell_average(f, 5)
    assert same == f and same is not f
    with pytest.raises(ValueError):
        cell_average(f, 10)


def test_cell_average_2d_mean_preserved():
    rng = np.random.default_rng(2)
    f = ContinuumField(2, 12, rng.normal(size=(12, 12)))
    g = cell_average(f, 4)
    assert g.mean() == pytest.approx(f.mean(), abs=1e-14)


@given(st.integers(3, 40), st.integers(3, 40), st.integers(0, 2 ** 31))
@settings(max_examples=50, deadline=None)
def test_cell_average_preserves_mean_for_uneven_ratios(Mc, Mf, seed):
    if Mc > Mf:
        Mc, Mf = Mf, Mc
    rng = np.random.default_rng(seed)
    f = ContinuumField(1, Mf, rng.normal(size=Mf))
    g = cell_average(f, Mc)
    assert g.mean() == pytest.approx(f.mean(), abs=1e-12)


def test_cell_average_constant_for_uneven_ratio():
    # 1/14 is not a binary fraction, so only rounding-level error is allowed
    f = ContinuumField(1, 7, np.full(7, 3.25))
    g = cell_average(f, 5)
    np.testing.assert_allclose(g.values, np.full(5, 3.25), rtol=0, atol=1e-14)


def test_compare_picks_coarser_grid_and_locates_max():
    a = ContinuumField(1, 4, np.array([0.0, 1.0, 0.0, -1.0]))
    b = ContinuumField(1, 4, np.array([0.0, 0.0, 0.0, -1.0]))
    r = compare(a, b)
    assert r.M == 4
    assert r.l_inf == 1.0
    assert r.argmax_cell == (1,)
    assert r.argmax_x == (0.25,)
    assert r.l2 == pytest.approx(np.sqrt(1.0 / 4.0))


def test_compare_mixed_resolution():
    spike = np.zeros(8)
    spike[2] = 8.0
    fine = ContinuumField(1, 8, spike)
    coarse = ContinuumField(1, 4, np.array([0.0, 4.0, 0.0, 0.0]))
    r = compare(fine, coarse)
    assert r.M == 4
    assert r.l_inf == 0.0 and r.l2 == 0.0
    with pytest.raises(ValueError):
        compare(fine, ContinuumField(2, 4, np.zeros((4, 4))))
