import math

import numpy as np
import pytest

from surfkmc.errors import BlowUpError
from surfkmc.grid import ContinuumField
from surfkmc.pde import (
    PdeConfig,
    div_tension,
    evolve,
    rhs_rough,
    rhs_smooth,
)
from surfkmc.potential import Potential
from surfkmc.tension import TensionSpec, sigma_d, tabulate

DG = Potential(p=2.0)


def _sine(M, amp=1.0, d=1):
    x = np.arange(M) / M
    if d == 1:
        return ContinuumField(1, M, amp * np.sin(2.0 * np.pi * x))
    vals = amp * (np.sin(2.0 * np.pi * x)[:, None]
                  * np.sin(2.0 * np.pi * x)[None, :])
    return ContinuumField(2, M, vals)


def _dg_table(lo=-10.0, hi=10.0, n=129, K=1.5):
    spec = TensionSpec(K, DG)
    return tabulate(lambda u: sigma_d(u, spec), lo, hi, n)


def test_config_validation():
    with pytest.raises(ValueError):
        PdeConfig("fast", 1.5, DG, 1.0)
    with pytest.raises(ValueError):
        PdeConfig("smooth", 0.0, DG, 1.0)
    with pytest.raises(ValueError):
        PdeConfig("smooth", 1.5, DG, -1.0)
    with pytest.raises(ValueError):
        PdeConfig("smooth", 1.5, DG, 1.0, coefficient="half")
    with pytest.raises(ValueError):
        PdeConfig("smooth", 1.5, DG, 1.0, error_tol=2.0)
    with pytest.raises(ValueError):
        PdeConfig("smooth", 1.5, DG, 1.0, dt_safety=0.0)


def test_snapshot_validation():
    h0 = _sine(16)
    with pytest.raises(ValueError):
        evolve(h0, PdeConfig("smooth", 1.5, DG, 1e-6,
                             snapshot_times=[1e-6, 1e-7]))
    with pytest.raises(ValueError):
        evolve(h0, PdeConfig("smooth", 1.5, DG, 1e-6,
                             snapshot_times=[2e-6]))


def test_zero_duration():
    h0 = _sine(16)
    res = evolve(h0, PdeConfig("smooth", 1.5, DG, 0.0,
                               snapshot_times=[0.0]))
    assert len(res) == 1
    assert res[0][0] == 0.0
    assert res[0][1] == h0
    assert res.stats["accepted"] == 0


def test_rhs_smooth_is_quartic_diffusion_for_quadratic_bonds():
    # with sigma = 2u the right side collapses to -2 c K (lap)^2 h
    M = 24
    rng = np.random.default_rng(1)
    h = ContinuumField(1, M, rng.normal(size=M))
    cfg = PdeConfig("smooth", 1.5, DG, 1.0)

    def lap(v):
        return (np.roll(v, -1) + np.roll(v, 1) - 2.0 * v) * M * M

    expect = -0.5 * 1.5 * 2.0 * lap(lap(h.values))
    np.testing.assert_allclose(rhs_smooth(h, cfg).values, expect,
                               rtol=1e-12, atol=1e-9)


def test_bare_coefficient_doubles_the_d1_rate():
    h = _sine(20, amp=0.3)
    base = rhs_smooth(h, PdeConfig("smooth", 1.5, DG, 1.0))
    bare = rhs_smooth(h, PdeConfig("smooth", 1.5, DG, 1.0,
                                   coefficient="bare"))
    np.testing.assert_allclose(bare.values, 2.0 * base.values, rtol=1e-14)


def test_div_tension_table_matches_potential():
    # a table of the linear function 2u interpolates it exactly
    h = _sine(20, amp=0.7)
    tab = tabulate(lambda u: 2.0 * u, -20.0, 20.0, 65)
    np.testing.assert_allclose(div_tension(h, tab).values,
                               div_tension(h, DG).values,
                               rtol=1e-13, atol=1e-10)


def test_rough_rhs_overflow_raises():
    h = _sine(16, amp=40.0)
    cfg = PdeConfig("rough", 1.5, DG, 1.0)
    with pytest.raises(BlowUpError):
        rhs_rough(h, cfg)


def test_rough_blowup_is_reported_not_raised():
    h = _sine(16, amp=40.0)
    res = evolve(h, PdeConfig("rough", 1.5, DG, 1e-9,
                              snapshot_times=[0.0, 1e-9]))
    assert res.blowup is not None
    t_blow, cell = res.blowup
    assert t_blow == 0.0
    assert isinstance(cell, tuple)
    # only the t = 0 snapshot survives
    assert [t for t, _ in res] == [0.0]


def test_smooth_decay_matches_lattice_dispersion():
    # single mode decays at c K sigma'(0) lam^2 with the flux-form
    # laplacian eigenvalue lam = 4 M^2 sin^2(pi / M)
    M = 64
    K = 1.5
    h0 = _sine(M, amp=1e-3)
    T = 5e-4
    res = evolve(h0, PdeConfig("smooth", K, DG, T))
    vT = res[-1][1].values
    x = np.arange(M) / M
    s = np.sin(2.0 * np.pi * x)
    ratio = float(np.sum(vT * s) / np.sum(h0.values * s))
    lam = 4.0 * M * M * math.sin(math.pi / M) ** 2
    expect = math.exp(-0.5 * K * 2.0 * lam * lam * T)
    assert ratio == pytest.approx(expect, rel=1e-5)


def test_smooth_kernel_and_python_paths_agree_bitwise():
    M = 48
    h0 = _sine(M, amp=0.01)
    cfg = PdeConfig("smooth", 1.5, _dg_table(), 1e-6,
                    snapshot_times=[5e-7, 1e-6])
    a = evolve(h0, cfg, use_kernel=True)
    b = evolve(h0, cfg, use_kernel=False)
    assert a.stats["accepted"] == b.stats["accepted"]
    for (ta, fa), (tb, fb) in zip(a, b):
        assert ta == tb
        assert fa.values.tobytes() == fb.values.tobytes()


def test_rough_kernel_and_python_paths_agree():
    # libm vs simd exp differ in the last ulp, so equality is near, not
    # bitwise
    M = 16
    h0 = _sine(M, amp=0.3)
    cfg = PdeConfig("rough", 1.5, DG, 1e-14, snapshot_times=[1e-14])
    a = evolve(h0, cfg, use_kernel=True)
    b = evolve(h0, cfg, use_kernel=False)
    assert a.stats["accepted"] == b.stats["accepted"]
    np.testing.assert_allclose(a[-1][1].values, b[-1][1].values,
                               rtol=0, atol=1e-13)


def test_kernel_refused_for_callable_tension():
    h0 = _sine(16)
    cfg = PdeConfig("smooth", 1.5, lambda z: 2.0 * z, 1e-8)
    with pytest.raises(ValueError):
        evolve(h0, cfg, use_kernel=True)
    res = evolve(h0, cfg)  # python path handles it
    assert res.stats["accepted"] >= 1


def test_mean_is_conserved_through_a_rough_solve():
    M = 32
    h0 = _sine(M, amp=0.5)
    res = evolve(h0, PdeConfig("rough", 1.5, DG, 1e-12))
    drift = abs(res[-1][1].mean() - h0.mean())
    assert drift < 1e-12
    assert res.stats["accepted"] > 1000


def test_rough_flow_erodes_peaks_first():
    # downward convexity relaxes fastest under the exponential flow, so
    # maxima flatten while minima persist: the signature asymmetry
    M = 32
    h0 = _sine(M, amp=0.5)
    res = evolve(h0, PdeConfig("rough", 1.5, DG, 1e-8))
    vals = res[-1][1].values
    assert float(vals.max()) < 0.25
    assert float(vals.min()) < -0.3
    assert abs(float(vals.max() + vals.min())) > 0.05


def test_smooth_sine_antisymmetry_is_preserved():
    M = 32
    h0 = _sine(M, amp=0.1)
    res = evolve(h0, PdeConfig("smooth", 1.5, _dg_table(), 2e-5,
                               snapshot_times=[1e-5, 2e-5]))
    for _, f in res:
        mirrored = -np.roll(f.values[::-1], 1)
        np.testing.assert_allclose(f.values, mirrored, rtol=0, atol=1e-10)


def test_d2_smooth_solve_runs_and_conserves():
    M = 12
    h0 = _sine(M, amp=0.05, d=2)
    res = evolve(h0, PdeConfig("smooth", 1.5, DG, 1e-6))
    assert res.blowup is None
    f = res[-1][1]
    assert f.values.shape == (M, M)
    assert abs(f.mean() - h0.mean()) < 1e-12
    # amplitude must have dropped
    assert float(np.abs(f.values).max()) < 0.05


def test_dt_init_override_is_respected():
    M = 32
    h0 = _sine(M, amp=0.01)
    tiny = evolve(h0, PdeConfig("smooth", 1.5, DG, 1e-7, dt_init=1e-9))
    auto = evolve(h0, PdeConfig("smooth", 1.5, DG, 1e-7))
    assert tiny.stats["accepted"] > auto.stats["accepted"]
