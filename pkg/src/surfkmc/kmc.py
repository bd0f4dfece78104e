"""Rejection-free simulation of the height-exchange jump process.

One atom hop per event: a source site is drawn proportionally to its
exit rate e^{-2K n}, a neighbor uniformly among the 2d, the source drops
by one and the neighbor gains one.  Rates live in a binary partial-sum
tree so each event costs O(log n_sites) after a constant-size local
rate refresh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NumericalError, RateOverflowError, StallError
from .exact import ExactVectorSum
from .grid import ContinuumField
from .potential import Potential
from .rng import RandomSource
from .surface import HeightField, LatticeShape, SiteMove, apply_move

# uniforms are consumed three per event; refills preserve leftovers so
# the consumed stream does not depend on this size
_EVENTS_PER_BLOCK = 1 << 16


@dataclass(frozen=True)
class ModelParams:
    """Static parameters of the jump process."""

    shape: LatticeShape
    V: Potential
    K: float

    def __post_init__(self):
        if not (self.K > 0.0 and math.isfinite(self.K)):
            raise ValueError(f"inverse temperature K must be positive, got {self.K}")


class RateIndex:
    """Partial-sum tree over per-site exit rates.

    Leaves hold e^{-2K n(site)}; internal nodes hold exact float sums of
    their children, recomputed bottom-up on every leaf write so the tree
    never accumulates incremental drift.  A full rebuild additionally
    runs every 2^20 events.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        n = params.shape.n_sites
        P = 1
        while P < n:
            P *= 2
        self.P = P
        self.n_sites = n
        self.tree = np.zeros(2 * P, dtype=np.float64)
        self._stamp = np.zeros(n, dtype=np.int64)
        self._scratch = np.zeros(2 * (2 * params.shape.d + 1), dtype=np.int64)
        self._stamp_counter = 0

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    def site_rate(self, site: int) -> float:
        return float(self.tree[self.P + site])

    def site_rates(self) -> np.ndarray:
        return self.tree[self.P:self.P + self.n_sites].copy()

    def refresh(self, h: HeightField) -> None:
        """Recompute every rate from the surface."""
        shape = self.params.shape
        _kernels.fill_rates(h.heights, shape.neighbor_table(), shape.d,
                            self.params.K, self.params.V.p,
                            self.tree, self.P, self.n_sites)
        if not np.isfinite(self.tree[1]):
            raise RateOverflowError(
                "total rate overflowed while indexing; some site has a "
                "coordination number with -2K n beyond double range")

    def max_error(self, h: HeightField) -> float:
        """Largest relative deviation of a stored rate from one
        recomputed fresh; diagnostic for the 1e-12 consistency bound."""
        shape = self.params.shape
        nbr = shape.neighbor_table()
        worst = 0.0
        for s in range(self.n_sites):
            exact = _kernels.site_rate(h.heights, nbr, shape.d, s,
                                       self.params.K, self.params.V.p)
            stored = self.tree[self.P + s]
            denom = max(abs(exact), 1e-300)
            worst = max(worst, abs(stored - exact) / denom)
        return worst


def total_rate_at(h: HeightField, site: int, params: ModelParams) -> float:
    """Total exit rate e^{-2K n(site)} of one site."""
    shape = params.shape
    if not 0 <= site < shape.n_sites:
        raise ValueError(f"site {site} out of range")
    return float(_kernels.site_rate(h.heights, shape.neighbor_table(),
                                    shape.d, site, params.K, params.V.p))


def transition_rate(h: HeightField, source: int, target: int,
                    params: ModelParams) -> float:
    """Rate of the single move source -> target; zero unless target is a
    nearest neighbor of source."""
    shape = params.shape
    nbr = shape.neighbor_table()
    if target not in nbr[source]:
        return 0.0
    return total_rate_at(h, source, params) / (2 * shape.d)


def build_rate_index(h: HeightField, params: ModelParams) -> RateIndex:
    if h.shape != params.shape:
        raise ValueError("height field and params disagree on lattice shape")
    idx = RateIndex(params)
    idx.refresh(h)
    return idx


def step(h: HeightField, idx: RateIndex, params: ModelParams,
         rng: RandomSource) -> tuple[float, SiteMove]:
    """Sample one event, apply it to h in place, update the index.

    Returns the waiting time and the move.  Consumes exactly three
    uniforms, the same pattern as the batched runner, so stepping
    manually and running in bulk produce identical trajectories from
    identical sources.
    """
    shape = params.shape
    tree = idx.tree
    total = float(tree[1])
    if not math.isfinite(total):
        raise RateOverflowError(f"total rate is {total}")
    if total <= 0.0:
        raise StallError("all rates are zero; no move can fire")
    u = rng.uniform_block(3)
    dt = -math.log(1.0 - u[0]) / total
    source = int(_kernels.tree_sample(tree, idx.P, idx.n_sites,
                                      u[1] * total))
    twod = 2 * shape.d
    j = int(u[2] * twod)
    if j >= twod:
        j = twod - 1
    target = int(shape.neighbor_table()[source, j])
    idx._stamp_counter += 1
    ok = _kernels.apply_event(h.heights, shape.neighbor_table(), shape.d,
                              params.K, params.V.p, tree, idx.P,
                              source, target, idx._stamp,
                              idx._stamp_counter, idx._scratch)
    if ok < 0:
        raise RateOverflowError(
            f"rate overflow after move {source}->{target}; the surface "
            "reached a coordination number outside double range")
    return dt, SiteMove(source, target)


@dataclass
class Trajectory:
    """Result of one run: pre-event states at the requested times."""

    shape: LatticeShape
    t_end: float
    times: tuple[float, ...]
    fields: tuple[HeightField, ...]
    event_count: int
    final: HeightField

    @property
    def snapshots(self) -> list[tuple[float, HeightField]]:
        return list(zip(self.times, self.fields))

    def mass_trace(self) -> list[int]:
        return [f.mass for f in self.fields]


def run(h0: HeightField, params: ModelParams, t_end: float,
        snapshot_times=None, rng: RandomSource | None = None) -> Trajectory:
    """Simulate from h0 up to time t_end.

    Snapshots record the state just before the first event after each
    requested time (the state AT that time).  h0 is never mutated.  A
    zero-duration run returns the initial state and consumes no
    randomness.
    """
    if rng is None:
        raise ValueError("an explicit random source is required")
    if h0.shape != params.shape:
        raise ValueError("height field and params disagree on lattice shape")
    if not (t_end >= 0.0):
        raise ValueError(f"t_end must be nonnegative, got {t_end}")
    if snapshot_times is None:
        snapshot_times = [t_end]
    snap = np.asarray(snapshot_times, dtype=np.float64)
    if snap.ndim != 1:
        raise ValueError("snapshot_times must be a flat sequence")
    if snap.size and (np.any(np.diff(snap) < 0) or snap[0] < 0.0
                      or snap[-1] > t_end):
        raise ValueError("snapshot_times must be sorted within [0, t_end]")

    if t_end == 0.0:
        fields = tuple(h0.copy() for _ in snap)
        return Trajectory(h0.shape, 0.0, tuple(snap.tolist()), fields, 0,
                          h0.copy())

    shape = params.shape
    heights = h0.heights.copy()
    idx = RateIndex(params)
    _kernels.fill_rates(heights, shape.neighbor_table(), shape.d,
                        params.K, params.V.p, idx.tree, idx.P, idx.n_sites)
    if not np.isfinite(idx.tree[1]):
        raise RateOverflowError("initial total rate overflowed")

    snap_out = np.zeros((snap.size, shape.n_sites), dtype=np.int64)
    state_f = np.zeros(2, dtype=np.float64)
    state_i = np.zeros(5, dtype=np.int64)
    u = rng.uniform_block(3 * _EVENTS_PER_BLOCK)
    nbr = shape.neighbor_table()
    while True:
        status = _kernels.run_kernel(heights, nbr, shape.d, params.K,
                                     params.V.p, idx.tree, idx.P,
                                     idx.n_sites, float(t_end), snap,
                                     snap_out, u, state_f, state_i,
                                     idx._stamp, idx._scratch)
        if status == _kernels.NEED_UNIFORMS:
            left = u[state_i[3]:]
            u = np.concatenate([left, rng.uniform_block(3 * _EVENTS_PER_BLOCK)])
            state_i[3] = 0
            continue
        break
    if status == _kernels.STALLED:
        raise StallError(f"all rates are zero at time {state_f[0]:.6g} "
                         f"after {state_i[0]} events")
    if status == _kernels.RATE_OVERFLOW:
        raise RateOverflowError(
            f"rate overflow at time {state_f[0]:.6g} after {state_i[0]} "
            "events; -2K n exceeded double range")

    fields = tuple(HeightField.flat(shape, snap_out[i])
                   for i in range(snap.size))
    final = HeightField.flat(shape, heights)
    mass0 = h0.mass
    for f in fields:
        if f.mass != mass0:
            raise NumericalError("snapshot mass differs from initial mass")
    if final.mass != mass0:
        raise NumericalError("final mass differs from initial mass")
    return Trajectory(shape, float(t_end), tuple(snap.tolist()), fields,
                      int(state_i[0]), final)


def generator_apply(f, h: HeightField, params: ModelParams) -> float:
    """(A f)(h) by brute force over all 2d * n_sites transitions."""
    shape = params.shape
    nbr = shape.neighbor_table()
    twod = 2 * shape.d
    base = f(h)
    acc = 0.0
    for site in range(shape.n_sites):
        r = total_rate_at(h, site, params) / twod
        if r == 0.0:
            continue
        for j in range(twod):
            moved = apply_move(h, SiteMove(site, int(nbr[site, j])))
            acc += r * (f(moved) - base)
    return acc


@dataclass
class GeneratorEstimate:
    """Ensemble estimate of the macroscopic drift field.

    Per-sample sums are kept as exact integer accumulators, so merging
    two estimates is bitwise identical to computing the union in one
    pass, regardless of ordering or process count.
    """

    shape: LatticeShape
    t_macro: float
    samples: int
    sums: ExactVectorSum
    sq_sums: ExactVectorSum
    total_events: int
    per_sample: np.ndarray | None = field(default=None, repr=False)

    def mean_values(self) -> np.ndarray:
        return self.sums.sum_array() / self.samples

    def stderr_values(self) -> np.ndarray:
        if self.samples < 2:
            return np.full(self.shape.n_sites, np.nan)
        m = self.mean_values()
        ss = self.sq_sums.sum_array()
        var = np.maximum(ss / self.samples - m * m, 0.0)
        var *= self.samples / (self.samples - 1)
        return np.sqrt(var / self.samples)

    def _as_field(self, flat: np.ndarray) -> ContinuumField:
        N = self.shape.N
        return ContinuumField(self.shape.d, N,
                              flat.reshape((N,) * self.shape.d))

    def mean_field(self) -> ContinuumField:
        return self._as_field(self.mean_values())

    def stderr_field(self) -> ContinuumField:
        return self._as_field(self.stderr_values())

    def merge(self, other: "GeneratorEstimate") -> "GeneratorEstimate":
        if (self.shape != other.shape or self.t_macro != other.t_macro):
            raise ValueError("cannot merge estimates from different setups")
        sums = ExactVectorSum(self.shape.n_sites)
        sums.merge(self.sums)
        sums.merge(other.sums)
        sq = ExactVectorSum(self.shape.n_sites)
        sq.merge(self.sq_sums)
        sq.merge(other.sq_sums)
        per = None
        if self.per_sample is not None and other.per_sample is not None:
            per = np.vstack([self.per_sample, other.per_sample])
        return GeneratorEstimate(self.shape, self.t_macro,
                                 self.samples + other.samples, sums, sq,
                                 self.total_events + other.total_events, per)


def _estimate_one(h0: HeightField, params: ModelParams, t_micro: float,
                  src: RandomSource) -> tuple[np.ndarray, int]:
    """Integral of the drift field over one trajectory, micro time."""
    shape = params.shape
    n = shape.n_sites
    nbr = shape.neighbor_table()
    heights = h0.heights.copy()
    P = 1
    while P < n:
        P *= 2
    tree = np.zeros(2 * P, dtype=np.float64)
    _kernels.fill_rates(heights, nbr, shape.d, params.K, params.V.p,
                        tree, P, n)
    if not np.isfinite(tree[1]):
        raise RateOverflowError("initial total rate overflowed")
    drift = np.zeros(n, dtype=np.float64)
    _kernels.init_drift_field(tree, nbr, shape.d, P, n, drift)
    t_last = np.zeros(n, dtype=np.float64)
    integral = np.zeros(n, dtype=np.float64)
    stamp = np.zeros(n, dtype=np.int64)
    scratch = np.zeros(2 * (2 * shape.d + 1), dtype=np.int64)
    dstamp = np.zeros(n, dtype=np.int64)
    dscratch = np.zeros(2 * (2 * shape.d + 1) * (2 * shape.d + 1),
                        dtype=np.int64)
    state_f = np.zeros(2, dtype=np.float64)
    state_i = np.zeros(5, dtype=np.int64)
    u = src.uniform_block(3 * _EVENTS_PER_BLOCK)
    while True:
        status = _kernels.gen_kernel(heights, nbr, shape.d, params.K,
                                     params.V.p, tree, P, n,
                                     float(t_micro), u, state_f, state_i,
                                     stamp, scratch, dstamp, dscratch,
                                     drift, t_last, integral)
        if status == _kernels.NEED_UNIFORMS:
            left = u[state_i[3]:]
            u = np.concatenate([left,
                                src.uniform_block(3 * _EVENTS_PER_BLOCK)])
            state_i[3] = 0
            continue
        break
    if status == _kernels.STALLED:
        raise StallError(f"all rates are zero at micro time {state_f[0]:.6g}")
    if status == _kernels.RATE_OVERFLOW:
        raise RateOverflowError("rate overflow during generator estimate")
    return integral, int(state_i[0])


def generator_estimate(h0: HeightField, params: ModelParams,
                       t_macro: float, samples: int, rng: RandomSource,
                       traj_offset: int = 0,
                       keep_samples: bool = False) -> GeneratorEstimate:
    """Monte Carlo estimate of the time-averaged macroscopic drift.

    Each sample j integrates the per-site generator integrand exactly
    along one trajectory driven by rng.split(traj_offset + j), then
    scales by 1/(N * t_macro), which is the smooth-scaling average
    (1/T) int_0^T of the projected drift.  Trajectory j's randomness
    depends only on its split index, so estimates over disjoint index
    ranges merge into exactly the combined estimate.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    if not (t_macro > 0.0):
        raise ValueError("t_macro must be positive")
    shape = params.shape
    t_micro = float(shape.N) ** 4 * t_macro
    norm = 1.0 / (shape.N * t_macro)
    sums = ExactVectorSum(shape.n_sites)
    sq = ExactVectorSum(shape.n_sites)
    per = np.zeros((samples, shape.n_sites), dtype=np.float32) \
        if keep_samples else None
    events = 0
    for j in range(samples):
        integral, ev = _estimate_one(h0, params, t_micro,
                                     rng.split(traj_offset + j))
        est = integral * norm
        sums.add(est)
        sq.add(est * est)
        events += ev
        if per is not None:
            per[j] = est
    return GeneratorEstimate(shape, t_macro, samples, sums, sq, events, per)
