import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import surfkmc.kmc as kmc
from surfkmc.errors import RateOverflowError
from surfkmc.kmc import (
    ModelParams,
    build_rate_index,
    generator_apply,
    generator_estimate,
    run,
    step,
    total_rate_at,
    transition_rate,
)
from surfkmc.potential import Potential
from surfkmc.rng import RandomSource
from surfkmc.surface import (
    HeightField,
    LatticeShape,
    SiteMove,
    apply_move,
    coordination_number,
    energy,
    lower_site,
)

SOS = Potential(p=1.0)
DG = Potential(p=2.0)


def _params(d, N, V, K):
    return ModelParams(LatticeShape(d, N), V, K)


def test_params_validation():
    with pytest.raises(ValueError):
        _params(1, 8, SOS, 0.0)
    with pytest.raises(ValueError):
        _params(1, 8, SOS, -1.5)


def test_exit_rate_flat_surface():
    # flat: every site costs n = d, exit rate e^(-2Kd)
    p = _params(1, 5, SOS, 1.5)
    h = HeightField.flat(p.shape)
    assert total_rate_at(h, 2, p) == pytest.approx(math.exp(-3.0), rel=1e-15)
    p2 = _params(2, 4, SOS, 1.5)
    h2 = HeightField.flat(p2.shape)
    assert total_rate_at(h2, 5, p2) == pytest.approx(math.exp(-6.0), rel=1e-15)


def test_exit_rate_adatom_and_pit():
    # lone adatom detaches fast: n = -1 gives e^(+2K)
    pa = _params(1, 3, SOS, 1.5)
    bump = HeightField(pa.shape, [0, 1, 0])
    assert total_rate_at(bump, 1, pa) == pytest.approx(math.exp(3.0), rel=1e-15)
    # quadratic bonds punish digging: [1,0,1] middle has n = 3
    pd = _params(1, 3, DG, 1.5)
    pit = HeightField(pd.shape, [1, 0, 1])
    assert total_rate_at(pit, 1, pd) == pytest.approx(math.exp(-9.0), rel=1e-15)


def test_transition_rate_splits_evenly():
    p = _params(1, 3, SOS, 1.5)
    bump = HeightField(p.shape, [0, 1, 0])
    r = math.exp(3.0) / 2.0
    assert transition_rate(bump, 1, 0, p) == pytest.approx(r, rel=1e-15)
    assert transition_rate(bump, 1, 2, p) == pytest.approx(r, rel=1e-15)


def test_transition_rate_zero_for_non_neighbor():
    p = _params(1, 6, SOS, 1.5)
    h = HeightField.flat(p.shape)
    assert transition_rate(h, 0, 3, p) == 0.0
    assert transition_rate(h, 0, 0, p) == 0.0


def test_rate_index_totals():
    p = _params(1, 4, SOS, 1.5)
    idx = build_rate_index(HeightField.flat(p.shape), p)
    assert idx.total_rate == pytest.approx(4.0 * math.exp(-3.0), rel=1e-14)
    p3 = _params(1, 3, SOS, 1.5)
    idx3 = build_rate_index(HeightField(p3.shape, [0, 1, 0]), p3)
    expect = math.exp(3.0) + 2.0 * math.exp(-3.0)
    assert idx3.total_rate == pytest.approx(expect, rel=1e-14)
    assert idx3.site_rate(1) == pytest.approx(math.exp(3.0), rel=1e-15)
    np.testing.assert_allclose(
        idx3.site_rates(),
        [math.exp(-3.0), math.exp(3.0), math.exp(-3.0)], rtol=1e-15)


def test_rate_index_overflow_rejected():
    # a tall tower gives n = 1 - 2T, and e^(-2Kn) passes double range
    p = _params(1, 3, DG, 20.0)
    tower = HeightField(p.shape, [0, 10, 0])
    with pytest.raises(RateOverflowError):
        build_rate_index(tower, p)


def _random_surface(rng, d, N):
    shape = LatticeShape(d, N)
    return HeightField(shape, rng.integers(-3, 4, size=shape.n_sites))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_detailed_balance_property(seed):
    rng = np.random.default_rng(seed)
    V = SOS if seed % 2 else DG
    K = [0.5, 1.5, 5.0][seed % 3]
    d = 1 if seed % 5 < 3 else 2
    p = _params(d, 5, V, K)
    h = _random_surface(rng, d, 5)
    nbr = p.shape.neighbor_table()
    site = int(rng.integers(p.shape.n_sites))
    tgt = int(nbr[site, rng.integers(2 * d)])
    hp = apply_move(h, SiteMove(site, tgt))
    fwd = transition_rate(h, site, tgt, p)
    bwd = transition_rate(hp, tgt, site, p)
    lhs = math.log(fwd) - K * energy(h, V)
    rhs = math.log(bwd) - K * energy(hp, V)
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(lhs)))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_energy_relation_property(seed):
    # lowering site alpha changes the energy by exactly 2 n(alpha)
    rng = np.random.default_rng(seed)
    V = SOS if seed % 2 else DG
    p = _params(2, 4, V, 1.5)
    h = _random_surface(rng, 2, 4)
    site = int(rng.integers(p.shape.n_sites))
    n = coordination_number(h, site, V)
    assert energy(lower_site(h, site), V) - energy(h, V) == pytest.approx(
        2.0 * n, abs=1e-12)


def test_step_consumes_three_uniforms_and_matches_manual_sampling():
    p = _params(1, 8, SOS, 1.5)
    h = HeightField(p.shape, [0, 2, -1, 0, 1, 0, -2, 0])
    idx = build_rate_index(h, p)
    total = idx.total_rate
    rates = idx.site_rates()
    u = RandomSource(123).uniform_block(3)
    src = RandomSource(123)
    dt, move = step(h, idx, p, src)
    assert dt == -math.log(1.0 - u[0]) / total
    # source picked by cumulative rate, target by the third uniform
    cum = np.cumsum(rates)
    expect_source = int(np.searchsorted(cum, u[1] * total, side="right"))
    assert move.source == expect_source
    assert move.target == p.shape.neighbor_table()[
        expect_source, int(u[2] * 2)]


def test_step_updates_index_consistently():
    p = _params(2, 4, DG, 0.8)
    rng = np.random.default_rng(0)
    h = HeightField(p.shape, rng.integers(-2, 3, 16))
    idx = build_rate_index(h, p)
    src = RandomSource(7)
    for _ in range(500):
        step(h, idx, p, src)
    assert idx.max_error(h) <= 1e-12


def test_run_requires_rng_and_validates_times():
    p = _params(1, 4, SOS, 1.5)
    h = HeightField.flat(p.shape)
    with pytest.raises(ValueError):
        run(h, p, 1.0)
    with pytest.raises(ValueError):
        run(h, p, 1.0, snapshot_times=[0.5, 0.2], rng=RandomSource(0))
    with pytest.raises(ValueError):
        run(h, p, 1.0, snapshot_times=[2.0], rng=RandomSource(0))
    with pytest.raises(ValueError):
        run(h, p, -1.0, rng=RandomSource(0))


def test_zero_duration_run_consumes_no_randomness():
    p = _params(1, 4, SOS, 1.5)
    h = HeightField(p.shape, [1, 0, -1, 0])
    src = RandomSource(55)
    traj = run(h, p, 0.0, snapshot_times=[0.0], rng=src)
    assert traj.event_count == 0
    assert traj.final == h
    assert traj.final is not h
    np.testing.assert_array_equal(src.uniform_block(4),
                                  RandomSource(55).uniform_block(4))


def test_run_and_step_agree_event_by_event():
    p = _params(1, 8, SOS, 1.0)
    h0 = HeightField(p.shape, [0, 3, 0, -1, 0, 2, 0, 0])
    traj = run(h0, p, 5.0, rng=RandomSource(99))
    assert traj.event_count > 10
    h = h0.copy()
    idx = build_rate_index(h, p)
    src = RandomSource(99)
    for _ in range(traj.event_count):
        step(h, idx, p, src)
    assert h == traj.final


def test_run_independent_of_uniform_buffer_size(monkeypatch):
    p = _params(1, 8, DG, 1.2)
    h0 = HeightField(p.shape, [0, 3, 0, -1, 0, 2, 0, 0])
    big = run(h0, p, 2.0, snapshot_times=[1.0, 2.0], rng=RandomSource(4))
    monkeypatch.setattr(kmc, "_EVENTS_PER_BLOCK", 5)
    small = run(h0, p, 2.0, snapshot_times=[1.0, 2.0], rng=RandomSource(4))
    assert small.event_count == big.event_count
    assert small.final == big.final
    for (ta, fa), (tb, fb) in zip(small.snapshots, big.snapshots):
        assert ta == tb and fa == fb


def test_snapshots_bracket_the_run():
    p = _params(1, 6, SOS, 1.0)
    h0 = HeightField(p.shape, [2, 0, 0, -2, 0, 0])
    traj = run(h0, p, 3.0, snapshot_times=[0.0, 1.5, 3.0],
               rng=RandomSource(21))
    assert traj.times == (0.0, 1.5, 3.0)
    assert traj.fields[0] == h0
    assert traj.fields[-1] == traj.final
    assert traj.mass_trace() == [0, 0, 0]


def test_mass_is_exactly_conserved():
    p = _params(2, 5, DG, 0.9)
    rng = np.random.default_rng(3)
    h0 = HeightField(p.shape, rng.integers(-3, 4, 25))
    traj = run(h0, p, 2.0, snapshot_times=[0.5, 1.0, 1.5, 2.0],
               rng=RandomSource(17))
    assert traj.event_count > 100
    assert set(traj.mass_trace()) == {h0.mass}
    assert traj.final.mass == h0.mass


def test_shape_mismatch_rejected():
    p = _params(1, 4, SOS, 1.5)
    h = HeightField.flat(LatticeShape(1, 5))
    with pytest.raises(ValueError):
        run(h, p, 1.0, rng=RandomSource(0))


# generator


def test_generator_apply_single_adatom():
    # f = height of a flat site next to an adatom: the adatom hops on with
    # rate e^(2K)/2 and the site itself leaks out at e^(-2K)/2 per target,
    # one of which returns mass; net drift is sinh(2K)
    K = 1.3
    p = _params(1, 3, SOS, K)
    h = HeightField(p.shape, [0, 1, 0])
    drift0 = generator_apply(lambda f: float(f.heights[0]), h, p)
    assert drift0 == pytest.approx(math.sinh(2.0 * K), rel=1e-13)
    drift1 = generator_apply(lambda f: float(f.heights[1]), h, p)
    assert drift1 == pytest.approx(-2.0 * math.sinh(2.0 * K), rel=1e-13)


def test_generator_apply_mass_functional_is_static():
    p = _params(2, 4, DG, 1.1)
    rng = np.random.default_rng(9)
    h = HeightField(p.shape, rng.integers(-2, 3, 16))
    assert generator_apply(lambda f: float(f.mass), h, p) == pytest.approx(
        0.0, abs=1e-12)


def test_generator_estimate_merge_is_bitwise():
    p = _params(1, 8, DG, 1.5)
    h0 = HeightField(p.shape, [0, 2, 3, 2, 0, -2, -3, -2])
    t_macro = 1e-4 / p.shape.N ** 4 * 50
    src = RandomSource(31)
    whole = generator_estimate(h0, p, t_macro, 16, src)
    a = generator_estimate(h0, p, t_macro, 10, src)
    b = generator_estimate(h0, p, t_macro, 6, src, traj_offset=10)
    merged = a.merge(b)
    assert merged.samples == whole.samples == 16
    assert merged.total_events == whole.total_events
    assert merged.mean_values().tobytes() == whole.mean_values().tobytes()
    assert merged.stderr_values().tobytes() == whole.stderr_values().tobytes()


def test_generator_estimate_trajectories_use_split_streams():
    # drawing from the parent source between calls must not matter
    p = _params(1, 8, SOS, 1.5)
    h0 = HeightField(p.shape, [0, 1, 2, 1, 0, -1, -2, -1])
    t_macro = 2e-2 / p.shape.N ** 4
    one = generator_estimate(h0, p, t_macro, 4, RandomSource(8))
    src = RandomSource(8)
    src.uniform_block(1000)
    two = generator_estimate(h0, p, t_macro, 4, src)
    assert one.mean_values().tobytes() == two.mean_values().tobytes()


def test_generator_estimate_stderr_shrinks():
    p = _params(1, 8, DG, 1.5)
    h0 = HeightField(p.shape, [0, 2, 3, 2, 0, -2, -3, -2])
    t_macro = 3e-2 / p.shape.N ** 4
    small = generator_estimate(h0, p, t_macro, 40, RandomSource(12))
    large = generator_estimate(h0, p, t_macro, 160, RandomSource(12))
    rs = float(np.linalg.norm(small.stderr_values()))
    rl = float(np.linalg.norm(large.stderr_values()))
    # 4x the samples should halve the error, within sampling slack
    assert rl < rs * 0.75


def test_generator_estimate_validation():
    p = _params(1, 4, SOS, 1.5)
    h = HeightField.flat(p.shape)
    with pytest.raises(ValueError):
        generator_estimate(h, p, 1e-6, 0, RandomSource(0))
    with pytest.raises(ValueError):
        generator_estimate(h, p, 0.0, 4, RandomSource(0))
