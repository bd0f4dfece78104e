"""Macroscopic limit equations on the periodic unit torus.

Two conservative flows for a cell-centered field h:

    smooth:  dh/dt = -c K lap( div sigma(grad h) )
    rough:   dh/dt =  c lap( exp(-K div sigma(grad h)) )

with the staggered discretization: forward differences per axis at cell
edges, sigma applied componentwise, backward divergence, then the
standard 3/5-point Laplacian.  c is (2d)^-1 under the default
convention and 1 under "bare"; the rough equation optionally drops the
K inside the exponential (rough_include_K).

Integration is classic RK4 with step doubling: the two-half-step result
is accepted when the relative deviation from the full step is within
error_tol, dt halves on rejection and doubles after 20 straight accepts
up to a linearized stability bound.  Blow-up of the rough exponential
(argument > 700) ends the solve with a marker rather than an exception;
persistent rejection raises StiffnessError.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _pde_kernels as _pk
from .errors import BlowUpError, NumericalError, StiffnessError
from .grid import ContinuumField
from .potential import Potential
from .tension import TensionTable, interpolate

_DT_FLOOR_REL = 1e-18


@dataclass
class PdeConfig:
    kind: str
    K: float
    tension: TensionTable | Potential | Callable
    t_end: float
    snapshot_times: Sequence[float] | None = None
    coefficient: str = "with_2d_inverse"
    rough_include_K: bool = True
    error_tol: float = 1e-8
    dt_safety: float = 0.9
    dt_init: float | None = None

    def __post_init__(self):
        if self.kind not in ("smooth", "rough"):
            raise ValueError(f"kind must be smooth or rough, got {self.kind}")
        if self.coefficient not in ("with_2d_inverse", "bare"):
            raise ValueError(f"unknown coefficient convention "
                             f"{self.coefficient}")
        if not (self.K > 0.0):
            raise ValueError("K must be positive")
        if not (self.t_end >= 0.0):
            raise ValueError("t_end must be nonnegative")
        if not (0.0 < self.error_tol < 1.0):
            raise ValueError("error_tol out of range")
        if not (0.0 < self.dt_safety <= 1.0):
            raise ValueError("dt_safety out of range")

    def c(self, d: int) -> float:
        return 1.0 / (2.0 * d) if self.coefficient == "with_2d_inverse" \
            else 1.0

    def keff(self) -> float:
        return self.K if self.rough_include_K else 1.0


class _Blow(Exception):
    def __init__(self, cell_flat: int):
        self.cell_flat = cell_flat


def _sigma_callable(tension) -> Callable:
    if isinstance(tension, TensionTable):
        return lambda z: interpolate(tension, z)
    if isinstance(tension, Potential):
        return tension.grad
    if callable(tension):
        return tension
    raise TypeError(f"cannot evaluate a tension of type {type(tension)!r}")


def div_tension(h: ContinuumField, tension) -> ContinuumField:
    """Backward divergence of sigma applied to the forward gradient."""
    fn = _sigma_callable(tension)
    v = h.values
    Mf = float(h.M)
    out = np.zeros_like(v)
    for ax in range(h.d):
        g = (np.roll(v, -1, axis=ax) - v) * Mf
        f = np.asarray(fn(g), dtype=np.float64)
        out = out + (f - np.roll(f, 1, axis=ax)) * Mf
    return ContinuumField(h.d, h.M, out)


def _laplacian_values(w: np.ndarray, d: int, Mf: float) -> np.ndarray:
    # flux form: per-axis cell sums telescope exactly, which keeps the
    # mean intact to rounding of the local result even at exp scales
    lap = np.zeros_like(w)
    for ax in range(d):
        flux = (np.roll(w, -1, axis=ax) - w) * Mf
        lap = lap + (flux - np.roll(flux, 1, axis=ax)) * Mf
    return lap


def rhs_smooth(h: ContinuumField, cfg: PdeConfig) -> ContinuumField:
    w = div_tension(h, cfg.tension).values
    cc = cfg.c(h.d) * cfg.K
    return ContinuumField(h.d, h.M,
                          -cc * _laplacian_values(w, h.d, float(h.M)))


def rhs_rough(h: ContinuumField, cfg: PdeConfig) -> ContinuumField:
    """Exponential flow; raises BlowUpError when exp would overflow."""
    w = div_tension(h, cfg.tension).values
    arg = -cfg.keff() * w
    flat = arg.ravel()
    over = flat > _pk.EXP_ARG_LIMIT
    if np.any(over):
        cell_flat = int(np.argmax(over))
        cell = np.unravel_index(cell_flat, arg.shape)
        raise BlowUpError(
            f"exponential argument {flat[cell_flat]:.3g} exceeds "
            f"{_pk.EXP_ARG_LIMIT:g} at cell {tuple(int(c) for c in cell)}",
            cell=tuple(int(c) for c in cell))
    E = np.exp(arg)
    cc = cfg.c(h.d)
    return ContinuumField(h.d, h.M,
                          cc * _laplacian_values(E, h.d, float(h.M)))


class EvolveResult(list):
    """Snapshot list [(time, field), ...] with solve metadata.

    blowup is None or (time, cell_tuple); snapshots after the blow-up
    time are absent.  stats holds step counts and the final dt.
    """

    def __init__(self, snaps, blowup=None, stats=None):
        super().__init__(snaps)
        self.blowup = blowup
        self.stats = dict(stats or {})


def _grad_max(v: np.ndarray, d: int, Mf: float) -> float:
    gm = 0.0
    for ax in range(d):
        gm = max(gm, float(np.max(np.abs(np.roll(v, -1, axis=ax) - v))) * Mf)
    return gm


def _callable_max_slope(fn, span: float) -> float:
    span = max(span, 1e-3)
    z = np.linspace(-span, span, 2001)
    s = np.asarray(fn(z), dtype=np.float64)
    return float(np.max(np.abs(np.diff(s) / np.diff(z))))


def _power_slope(p: float, gmax: float) -> float:
    if p == 2.0:
        return 2.0
    if p < 2.0:
        # slope of |z|^(p-2) z diverges at 0; floor keeps the bound finite
        return p * (p - 1.0) * 1e-6 ** (p - 2.0)
    return p * (p - 1.0) * max(gmax, 1e-300) ** (p - 2.0)


def _slope_bound(cfg: PdeConfig, gmax: float) -> float:
    if isinstance(cfg.tension, TensionTable):
        return cfg.tension.max_slope()
    if isinstance(cfg.tension, Potential):
        return _power_slope(cfg.tension.p, gmax)
    return _callable_max_slope(cfg.tension, gmax)


def _exp_max(h: ContinuumField, cfg: PdeConfig) -> float:
    w = div_tension(h, cfg.tension).values
    a = float(np.max(-cfg.keff() * w))
    return math.exp(min(a, _pk.EXP_ARG_LIMIT))


def evolve(h0: ContinuumField, cfg: PdeConfig,
           use_kernel: bool | None = None) -> EvolveResult:
    """Integrate h0 to cfg.t_end, returning requested snapshots.

    Snapshot values are linear time interpolations within the accepted
    step that crosses each requested time.  The jitted d=1 path and the
    array path produce matching results; use_kernel forces one of them.
    """
    d, M = h0.d, h0.M
    Mf = float(M)
    t_end = float(cfg.t_end)
    snap_req = list(cfg.snapshot_times) if cfg.snapshot_times is not None \
        else [t_end]
    snap_req = [float(s) for s in snap_req]
    if snap_req != sorted(snap_req):
        raise ValueError("snapshot times must be sorted")
    if snap_req and (snap_req[0] < 0.0 or snap_req[-1] > t_end):
        raise ValueError("snapshot times must lie within [0, t_end]")

    out: list[tuple[float, ContinuumField]] = []
    si = 0
    while si < len(snap_req) and snap_req[si] <= 0.0:
        out.append((snap_req[si], h0.copy()))
        si += 1
    rest = np.asarray(snap_req[si:], dtype=np.float64)

    if t_end == 0.0:
        return EvolveResult(out, stats={"accepted": 0, "rejected": 0})

    kind_rough = cfg.kind == "rough"
    c = cfg.c(d)
    cc = c * cfg.K if not kind_rough else c
    keff = cfg.keff() if kind_rough else 0.0
    cc2 = c * cfg.K if not kind_rough else c * cfg.keff()
    dx = 1.0 / Mf
    bound_num = dx ** 4 / (8.0 * cc2 * d * d)

    v0 = h0.values.copy()
    gmax0 = _grad_max(v0, d, Mf)
    s_max0 = _slope_bound(cfg, gmax0)
    if kind_rough:
        try:
            e_max0 = _exp_max(h0, cfg)
        except BlowUpError as e:
            return EvolveResult(out, blowup=(0.0, e.cell),
                                stats={"accepted": 0, "rejected": 0})
    else:
        e_max0 = 1.0
    denom0 = s_max0 * e_max0
    dt0 = cfg.dt_init if cfg.dt_init is not None else (
        cfg.dt_safety * bound_num / denom0 if denom0 > 0.0 else t_end)
    dt0 = min(dt0, t_end)
    if not (dt0 > 0.0):
        raise ValueError("initial step size is not positive")

    can_kernel = (d == 1
                  and isinstance(cfg.tension, (TensionTable, Potential)))
    if use_kernel is None:
        use_kernel = can_kernel
    elif use_kernel and not can_kernel:
        raise ValueError("jitted path needs d=1 and a table or power "
                         "tension")

    if use_kernel:
        res = _evolve_kernel_d1(v0, cfg, rest, dt0, bound_num, cc, keff)
    else:
        res = _evolve_python(v0, d, M, cfg, rest, dt0, bound_num, cc, keff)
    snaps, blowup, stats = res
    for i, (ts, arr) in enumerate(snaps):
        out.append((ts, ContinuumField(d, M,
                                       arr.reshape((M,) * d))))
    final_ok = [f for _, f in out]
    if final_ok and blowup is None:
        drift = abs(final_ok[-1].mean() - h0.mean())
        if drift > 1e-12:
            raise NumericalError(f"mean drifted by {drift:.3e} > 1e-12")
    return EvolveResult(out, blowup=blowup, stats=stats)


def _evolve_kernel_d1(v, cfg, snap_times, dt0, bound_num, cc, keff):
    M = v.shape[0]
    kind = _pk.KIND_ROUGH if cfg.kind == "rough" else _pk.KIND_SMOOTH
    if isinstance(cfg.tension, TensionTable):
        mode = _pk.MODE_TABLE
        tbl = cfg.tension
        u0, du = tbl.u0, tbl.du
        ys, ds = tbl.sigma, tbl.slopes
        nk = tbl.u.size
        pp = 0.0
        s_fixed = tbl.max_slope()
    else:
        mode = _pk.MODE_POWER
        u0 = du = 0.0
        ys = ds = np.zeros(2)
        nk = 2
        pp = cfg.tension.p
        s_fixed = 2.0 if pp == 2.0 else -1.0
    n_snap = snap_times.size
    snap_out = np.zeros((n_snap, M))
    t_state = np.array([0.0, dt0, 0.0])
    i_state = np.zeros(5, dtype=np.int64)
    scratch = [np.zeros(M) for _ in range(12)]
    aux = np.array([-1e300, 0.0, 0.0])
    comp = np.zeros(M)
    status = _pk.evolve_d1(v, comp, M, float(cfg.t_end), cfg.error_tol,
                           cfg.dt_safety, bound_num, s_fixed, kind, cc,
                           keff, mode, pp, u0, du,
                           np.ascontiguousarray(ys),
                           np.ascontiguousarray(ds), nk,
                           snap_times, snap_out, t_state, i_state,
                           *scratch, aux)
    stats = {"accepted": int(i_state[0]), "rejected": int(i_state[1]),
             "dt_final": float(t_state[1])}
    got = int(i_state[2])
    snaps = [(float(snap_times[i]), snap_out[i].copy())
             for i in range(got)]
    if status == _pk.EVOLVE_STIFF:
        raise StiffnessError(
            f"step size collapsed at t={t_state[0]:.6g} "
            f"(dt={t_state[1]:.3g}, err={t_state[2]:.3g})")
    if status == _pk.EVOLVE_MASS:
        raise NumericalError(f"mean drifted by {t_state[2]:.3e} during "
                             "the solve")
    if status == _pk.EVOLVE_BLOWUP:
        return snaps, (float(t_state[0]), (int(i_state[4]),)), stats
    return snaps, None, stats


def _evolve_python(v, d, M, cfg, snap_times, dt0, bound_num, cc, keff):
    Mf = float(M)
    kind_rough = cfg.kind == "rough"
    fn = _sigma_callable(cfg.tension)

    def rhs(x):
        out = np.zeros_like(x)
        for ax in range(d):
            g = (np.roll(x, -1, axis=ax) - x) * Mf
            f = np.asarray(fn(g), dtype=np.float64)
            out = out + (f - np.roll(f, 1, axis=ax)) * Mf
        if not kind_rough:
            return -cc * _laplacian_values(out, d, Mf)
        arg = -keff * out
        flat = arg.ravel()
        over = flat > _pk.EXP_ARG_LIMIT
        if np.any(over):
            raise _Blow(int(np.argmax(over)))
        E = np.exp(arg)
        return cc * _laplacian_values(E, d, Mf)

    def rk4_inc(x, h):
        # increment only; the caller owns the field-scale addition
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        return h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0

    t_end = float(cfg.t_end)
    tol = cfg.error_tol

    def cap_now(x):
        s_max = _slope_bound(cfg, _grad_max(x, d, Mf))
        e_max = 1.0
        if kind_rough:
            w = np.zeros_like(x)
            for ax in range(d):
                g = (np.roll(x, -1, axis=ax) - x) * Mf
                f = np.asarray(fn(g), dtype=np.float64)
                w = w + (f - np.roll(f, 1, axis=ax)) * Mf
            e_max = math.exp(min(float(np.max(-keff * w)),
                                 _pk.EXP_ARG_LIMIT))
        denom = s_max * e_max
        return cfg.dt_safety * bound_num / denom if denom > 0.0 else 1e300

    t = 0.0
    dt = dt0
    acc = rej = since = 0
    si = 0
    snaps = []
    # comp carries the rounding residue of each field update (Neumaier
    # two-sum), so the conservation check stays meaningful over millions
    # of accepted steps
    comp = np.zeros_like(v)
    mean0 = float(np.mean(v + comp))
    while t < t_end:
        last = dt >= t_end - t
        dt_eff = t_end - t if last else dt
        try:
            incf = rk4_inc(v, dt_eff)
            incm = rk4_inc(v, 0.5 * dt_eff)
            inch = incm + rk4_inc(v + incm, 0.5 * dt_eff)
        except _Blow as e:
            cell = tuple(int(x) for x in
                         np.unravel_index(e.cell_flat, v.shape))
            return snaps, (t, cell), {"accepted": acc, "rejected": rej,
                                      "dt_final": dt}
        diff = float(np.max(np.abs(incf - inch)))
        scale = max(float(np.max(np.abs(v + inch))), 1e-30)
        err = diff / scale
        if err > tol:
            dt = 0.5 * dt_eff
            rej += 1
            since = 0
            # stagnation means error control forced dt far below the
            # stability bound; a stiff transient riding the bound is fine
            if dt < _DT_FLOOR_REL * t_end and dt < 0.01 * cap_now(v):
                raise StiffnessError(
                    f"step size collapsed at t={t:.6g} "
                    f"(dt={dt:.3g}, err={err:.3g})")
            continue
        t_new = t_end if last else t + dt_eff
        while si < snap_times.size and snap_times[si] <= t_new:
            theta = min((snap_times[si] - t) / dt_eff, 1.0)
            snaps.append((float(snap_times[si]), v + theta * inch))
            si += 1
        y = inch + comp
        s = v + y
        big = np.abs(v) >= np.abs(y)
        comp = np.where(big, (v - s) + y, (y - s) + v)
        v = s
        t = t_new
        acc += 1
        since += 1
        drift = abs(float(np.mean(v + comp)) - mean0)
        if drift > 1e-12:
            raise NumericalError(f"mean drifted by {drift:.3e} during "
                                 "the solve")
        if since >= 20:
            dt = min(dt * 2.0, cap_now(v))
            since = 0
    return snaps, None, {"accepted": acc, "rejected": rej, "dt_final": dt}
