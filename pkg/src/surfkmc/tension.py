"""Surface tensions of the gradient model.

The discrete tension sigma_d inverts the tilted lattice mean

    m(s) = sum_z z exp(-K V(z) + K s z) / sum_z exp(-K V(z) + K s z),

its continuous counterpart sigma_c inverts the same expression with the
sum replaced by an integral, and bar_sigma is the bare gradient V'.
Sums and integrals are evaluated peak-shifted so only O(1)-sized
exponents ever reach exp.  For p = 1 the tilt is confined to |s| < 1;
outside, the sum diverges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from .errors import ConvergenceError, DivergenceError
from .potential import Potential

_MAX_TERMS = 10_000_000
_MAX_EXPAND = 200


@dataclass(frozen=True)
class TensionSpec:
    """Parameters a tension evaluation needs: temperature, potential,
    and the relative tolerance of sums and solves."""

    K: float
    V: Potential
    tol: float = 1e-12

    def __post_init__(self):
        if not (self.K > 0.0 and math.isfinite(self.K)):
            raise ValueError(f"K must be positive, got {self.K}")
        if not (0.0 < self.tol < 1e-2):
            raise ValueError(f"tol out of range: {self.tol}")


def _peak(sigma: float, p: float) -> float:
    """Maximizer of s z - |z|^p over the reals (0 for p = 1, |s| < 1)."""
    if p == 1.0:
        return 0.0
    return math.copysign(abs(sigma / p) ** (1.0 / (p - 1.0)), sigma)


def _discrete_moments(sigma: float, K: float, p: float,
                      tol: float) -> tuple[float, float, float]:
    """log Z, mean and variance of the tilted lattice distribution.

    Terms are accumulated outward from the integer nearest the
    continuous peak; both tails are geometric-dominated, so summation
    stops once the estimated remainder is below tol relative to the
    running sum.
    """
    if p == 1.0 and abs(sigma) >= 1.0:
        raise DivergenceError(
            f"tilted sum diverges for |sigma| >= 1 when p = 1 "
            f"(sigma = {sigma})")
    zc = int(round(_peak(sigma, p)))

    def logw(z: int) -> float:
        az = abs(float(z))
        return K * (sigma * z - az ** p)

    fc = logw(zc)
    S = 1.0
    M1 = 0.0
    M2 = 0.0
    for direction in (1, -1):
        prev = 1.0
        for k in range(1, _MAX_TERMS):
            z = zc + direction * k
            t = math.exp(logw(z) - fc)
            dz = float(z - zc)
            S += t
            M1 += t * dz
            M2 += t * dz * dz
            if t == 0.0:
                break
            ratio = t / prev
            if ratio < 1.0:
                tail = t * ratio / (1.0 - ratio)
                if tail * (dz * dz + 2.0 * abs(dz) + 1.0) <= tol * S:
                    break
            prev = t
        else:
            raise ConvergenceError(
                f"tilted sum did not converge within {_MAX_TERMS} terms "
                f"(sigma={sigma}, K={K}, p={p})")
    mean = M1 / S
    var = M2 / S - mean * mean
    return fc + math.log(S), zc + mean, max(var, 0.0)


def _continuous_moments(sigma: float, K: float, p: float,
                        tol: float) -> tuple[float, float]:
    """Mean and variance of the tilted continuum distribution."""
    if p == 1.0 and abs(sigma) >= 1.0:
        raise DivergenceError(
            f"tilted integral diverges for |sigma| >= 1 when p = 1 "
            f"(sigma = {sigma})")
    wc = _peak(sigma, p)

    def logw(w: float) -> float:
        return K * (sigma * w - abs(w) ** p)

    fc = logw(wc)
    # expand until the integrand has dropped by e^-40 on both sides
    drop = 40.0
    a = wc - 1.0
    step = 1.0
    for _ in range(_MAX_EXPAND):
        if logw(a) - fc <= -drop:
            break
        step *= 2.0
        a -= step
    else:
        raise ConvergenceError("left integration bound not found")
    b = wc + 1.0
    step = 1.0
    for _ in range(_MAX_EXPAND):
        if logw(b) - fc <= -drop:
            break
        step *= 2.0
        b += step
    else:
        raise ConvergenceError("right integration bound not found")

    def g(w):
        return math.exp(logw(w) - fc)

    # |w|^p has a kink at 0 for p < 2; give quad the breakpoint
    pts = [0.0] if (a < 0.0 < b and p < 2.0) else None
    eps = min(tol, 1e-10)
    I0, e0 = quad(g, a, b, epsabs=0.0, epsrel=eps, limit=200, points=pts)
    if I0 <= 0.0 or e0 > 1e-6 * I0:
        raise ConvergenceError("tilted integral quadrature failed")
    # centered moments can vanish by symmetry, so a pure relative
    # target is unreachable; anchor the absolute tolerance to I0
    floor = 0.1 * eps * I0
    I1, _ = quad(lambda w: (w - wc) * g(w), a, b,
                 epsabs=floor * (1.0 + abs(wc)), epsrel=eps, limit=200,
                 points=pts)
    I2, _ = quad(lambda w: (w - wc) ** 2 * g(w), a, b, epsabs=floor,
                 epsrel=eps, limit=200, points=pts)
    mean = wc + I1 / I0
    var = I2 / I0 - (I1 / I0) ** 2
    return mean, max(var, 0.0)


def tilted_mean_discrete(sigma: float, K: float, V: Potential,
                         tol: float = 1e-12) -> float:
    """Mean slope of the lattice model under tilt sigma."""
    return _discrete_moments(float(sigma), K, V.p, tol)[1]


def tilted_mean_continuous(sigma: float, K: float, V: Potential,
                           tol: float = 1e-12) -> float:
    """Mean slope of the continuum model under tilt sigma."""
    return _continuous_moments(float(sigma), K, V.p, tol)[0]


def _invert_mean(moments, u: float, K: float, p: float,
                 tol: float) -> float:
    """Solve mean(s) = u for s >= 0, given u >= 0.

    moments(s) -> (mean, var); the mean is strictly increasing with
    derivative K var, so a bracketed Newton iteration is safe.  For
    p = 1 the bracket approaches the asymptote s = 1 from below.
    """
    if u == 0.0:
        return 0.0
    lo = 0.0
    if p == 1.0:
        gap = 0.5
        hi = 1.0 - gap
        for _ in range(_MAX_EXPAND):
            m, _ = moments(hi)
            if m >= u:
                break
            lo = hi
            gap *= 0.5
            hi = 1.0 - gap
        else:
            raise ConvergenceError(f"no bracket below the p=1 asymptote "
                                   f"for u={u}")
    else:
        hi = 1.0
        for _ in range(_MAX_EXPAND):
            m, _ = moments(hi)
            if m >= u:
                break
            lo = hi
            hi *= 2.0
        else:
            raise ConvergenceError(f"no upper bracket found for u={u}")
    s = 0.5 * (lo + hi)
    for _ in range(200):
        m, var = moments(s)
        if abs(m - u) <= tol * max(1.0, abs(u)):
            return s
        if m < u:
            lo = s
        else:
            hi = s
        deriv = K * var
        s_new = s + (u - m) / deriv if deriv > 0.0 else 0.5 * (lo + hi)
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        s = s_new
    raise ConvergenceError(f"tension solve stalled at u={u} "
                           f"(last mean {m}, target {u})")


def sigma_d(u: float, spec: TensionSpec) -> float:
    """Discrete tension: the tilt whose lattice mean slope is u.

    Odd in u by construction (the solve runs on |u| and the sign is
    reattached), so sigma_d(-u) == -sigma_d(u) exactly.
    """
    u = float(u)
    if u == 0.0:
        return 0.0
    K, p, tol = spec.K, spec.V.p, spec.tol

    def mom(s):
        _, m, v = _discrete_moments(s, K, p, tol)
        return m, v

    return math.copysign(_invert_mean(mom, abs(u), K, p, tol), u)


def sigma_c(u: float, spec: TensionSpec) -> float:
    """Continuous tension: the tilt whose continuum mean slope is u."""
    u = float(u)
    if u == 0.0:
        return 0.0
    K, p, tol = spec.K, spec.V.p, spec.tol

    def mom(s):
        return _continuous_moments(s, K, p, tol)

    return math.copysign(_invert_mean(mom, abs(u), K, p, tol), u)


def bar_sigma(u, V: Potential):
    """Bare tension V' applied componentwise; scalar in, scalar out."""
    if np.isscalar(u):
        return float(V.grad(float(u)))
    arr = np.asarray(u, dtype=np.float64)
    return tuple(float(x) for x in V.grad(arr))


def free_energy_d(u: float, spec: TensionSpec) -> float:
    """Legendre transform K^-1 (s* u K - log Z(s*)) at s* = sigma_d(u)."""
    u = float(u)
    s = sigma_d(u, spec)
    log_z, _, _ = _discrete_moments(s, spec.K, spec.V.p, spec.tol)
    return s * u - log_z / spec.K


@dataclass
class TensionTable:
    """Monotone C1 interpolant of a tension on a uniform grid.

    Node slopes come from a shape-preserving cubic fit, so the
    interpolant is monotone wherever the data is.  Outside the grid the
    end slope continues linearly; callers who care should re-tabulate a
    wider range instead of trusting the extension far out.
    """

    u: np.ndarray
    sigma: np.ndarray
    slopes: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.slopes = np.asarray(self.slopes, dtype=np.float64)
        n = self.u.size
        if n < 8:
            raise ValueError(f"table needs at least 8 points, got {n}")
        if self.sigma.shape != (n,) or self.slopes.shape != (n,):
            raise ValueError("table arrays must have equal length")
        du = np.diff(self.u)
        if not np.all(du > 0.0):
            raise ValueError("table abscissae must be strictly increasing")
        if not np.allclose(du, du[0], rtol=1e-9, atol=0.0):
            raise ValueError("table grid must be uniform")
        if np.any(np.diff(self.sigma) <= 0.0):
            raise ValueError("tabulated tension is not strictly increasing")

    @property
    def u0(self) -> float:
        return float(self.u[0])

    @property
    def du(self) -> float:
        return float(self.u[1] - self.u[0])

    def max_slope(self) -> float:
        """Upper bound on the interpolant's derivative, from a dense
        sample of each cubic piece plus the end slopes."""
        worst = max(abs(self.slopes[0]), abs(self.slopes[-1]))
        ss = np.linspace(0.0, 1.0, 9)
        h = self.du
        for j in range(self.u.size - 1):
            y0, y1 = self.sigma[j], self.sigma[j + 1]
            d0, d1 = self.slopes[j], self.slopes[j + 1]
            # derivative of the Hermite cubic on [0, 1] in s, then / h
            dv = ((6 * ss * ss - 6 * ss) * (y0 - y1) / h
                  + (3 * ss * ss - 4 * ss + 1) * d0
                  + (3 * ss * ss - 2 * ss) * d1)
            worst = max(worst, float(np.max(np.abs(dv))))
        return worst

    def write_csv(self, path) -> None:
        import json as _json
        with open(path, "w") as fh:
            fh.write(f"# {_json.dumps(self.meta, sort_keys=True)}\n")
            fh.write("u,sigma,slope\n")
            for i in range(self.u.size):
                # float() first: numpy scalar repr is not a plain number
                fh.write(f"{float(self.u[i])!r},{float(self.sigma[i])!r},"
                         f"{float(self.slopes[i])!r}\n")

    @classmethod
    def read_csv(cls, path) -> "TensionTable":
        import json as _json
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    meta = _json.loads(line[1:].strip())
                    continue
                if line.startswith("u,"):
                    continue
                rows.append([float(x) for x in line.split(",")])
        arr = np.asarray(rows)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], meta)


def tabulate(fn, u_min: float, u_max: float, n_points: int,
             meta: dict | None = None) -> TensionTable:
    """Sample fn on a uniform grid and build its monotone interpolant.

    fn must be strictly increasing over [u_min, u_max]; a table that
    fails that check refuses to build.
    """
    if n_points < 8:
        raise ValueError(f"need at least 8 points, got {n_points}")
    if not (u_max > u_min):
        raise ValueError("need u_max > u_min")
    u = np.linspace(u_min, u_max, n_points)
    sig = np.asarray([float(fn(x)) for x in u])
    if np.any(np.diff(sig) <= 0.0):
        raise ValueError("sampled tension is not strictly increasing; "
                         "refusing to build an invertible table")
    pch = PchipInterpolator(u, sig)
    slopes = pch.derivative()(u)
    return TensionTable(u, sig, slopes, dict(meta or {}))


def interpolate(table: TensionTable, u):
    """Evaluate the table's Hermite interpolant; linear beyond the ends.

    The same closed-form cubic is used here and in the grid solvers, so
    both paths see one tension function.
    """
    scalar = np.isscalar(u)
    x = np.atleast_1d(np.asarray(u, dtype=np.float64))
    n = table.u.size
    t = (x - table.u0) / table.du
    j = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
    s = t - j
    y0 = table.sigma[j]
    y1 = table.sigma[j + 1]
    d0 = table.slopes[j]
    d1 = table.slopes[j + 1]
    h = table.du
    h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
    h10 = s * (1.0 - s) ** 2
    h01 = s * s * (3.0 - 2.0 * s)
    h11 = s * s * (s - 1.0)
    val = h00 * y0 + h * h10 * d0 + h01 * y1 + h * h11 * d1
    below = x < table.u[0]
    above = x > table.u[-1]
    if np.any(below):
        val[below] = table.sigma[0] + table.slopes[0] * (x[below]
                                                        - table.u[0])
    if np.any(above):
        val[above] = table.sigma[-1] + table.slopes[-1] * (x[above]
                                                          - table.u[-1])
    return float(val[0]) if scalar else val
