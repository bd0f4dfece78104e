"""Conserved Langevin dynamics on the periodic lattice.

Euler-Maruyama discretization of

    dh = -L (V' o grad+ - V' o grad-)(h) dt + noise_scale sqrt(-L) dW

with L the lattice Laplacian.  The drift is the H^{-1} gradient flow of
the gradient energy, the noise lives in the mean-zero subspace, and with
noise_scale = sqrt(2/K) the invariant measure is proportional to
exp(-K H).  sqrt(-L) is applied spectrally; -L is diagonal in the DFT
basis with eigenvalues sum_i 4 sin^2(pi k_i / N).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import StabilityError
from .grid import ContinuumField
from .kmc import ModelParams
from .rng import RandomSource
from .surface import HeightField


def _as_array(h0, shape) -> np.ndarray:
    if isinstance(h0, HeightField):
        if h0.shape != shape:
            raise ValueError("initial field does not match params lattice")
        return h0.heights.astype(np.float64).reshape((shape.N,) * shape.d)
    if isinstance(h0, ContinuumField):
        if h0.d != shape.d or h0.M != shape.N:
            raise ValueError("initial field does not match params lattice")
        return h0.values.copy()
    arr = np.asarray(h0, dtype=np.float64)
    if arr.shape != (shape.N,) * shape.d:
        raise ValueError(f"initial array shape {arr.shape} does not match "
                         f"lattice {(shape.N,) * shape.d}")
    return arr.copy()


def _neg_lap_eigs_rfft(d: int, N: int) -> np.ndarray:
    """Eigenvalues of -L laid out for rfft/rfftn coefficients."""
    half = 4.0 * np.sin(np.pi * np.arange(N // 2 + 1) / N) ** 2
    if d == 1:
        return half
    k = np.fft.fftfreq(N) * N
    full = 4.0 * np.sin(np.pi * k / N) ** 2
    return full[:, None] + half[None, :]


def _lattice_laplacian(v: np.ndarray, d: int) -> np.ndarray:
    out = -2.0 * d * v
    for ax in range(d):
        out = out + np.roll(v, -1, axis=ax) + np.roll(v, 1, axis=ax)
    return out


def _drift(v: np.ndarray, d: int, grad_fn) -> np.ndarray:
    w = np.zeros_like(v)
    for ax in range(d):
        w = w + grad_fn(np.roll(v, -1, axis=ax) - v) \
              - grad_fn(v - np.roll(v, 1, axis=ax))
    return -_lattice_laplacian(w, d)


def langevin_run(h0, params: ModelParams, noise_scale: float | None,
                 dt: float, t_end: float, rng: RandomSource,
                 snapshot_times=None) -> list[tuple[float, ContinuumField]]:
    """Integrate the SDE from h0 and return (time, field) snapshots.

    noise_scale=None means sqrt(2/K).  Each requested snapshot time is
    reported at the first step boundary reaching it.  Fails fast with
    StabilityError when dt is beyond the linearized explicit limit at
    the initial state.
    """
    shape = params.shape
    p = params.V.p
    if p <= 1.0:
        raise ValueError("langevin drift needs a differentiable "
                         "potential (p > 1)")
    if not (dt > 0.0 and t_end >= 0.0):
        raise ValueError("need dt > 0 and t_end >= 0")
    if noise_scale is None:
        noise_scale = math.sqrt(2.0 / params.K)
    v = _as_array(h0, shape)
    d, N = shape.d, shape.N

    # explicit-step limit from the linearization -s L^2 at t = 0;
    # stiffest mode has (-L) eigenvalue 4d
    if p == 2.0:
        s_max = 2.0
    else:
        g = []
        for ax in range(d):
            g.append(np.abs(np.roll(v, -1, axis=ax) - v))
        za = np.maximum(np.concatenate([x.ravel() for x in g]), 1.0)
        s_max = float(np.max(p * (p - 1.0) * za ** (p - 2.0))) if p > 2.0 \
            else float(p * (p - 1.0))
    lam_max = 4.0 * d
    if dt * s_max * lam_max ** 2 > 2.0:
        raise StabilityError(
            f"dt={dt:g} exceeds the explicit limit "
            f"{2.0 / (s_max * lam_max ** 2):g} for the linearized drift")

    if snapshot_times is None:
        snapshot_times = [t_end]
    snap = sorted(float(t) for t in snapshot_times)
    if snap and (snap[0] < 0.0 or snap[-1] > t_end * (1.0 + 1e-12) + 1e-300):
        raise ValueError("snapshot times must lie within [0, t_end]")

    n_steps = max(0, math.ceil(t_end / dt - 1e-12))
    sqrt_lam = np.sqrt(_neg_lap_eigs_rfft(d, N))
    grad_fn = params.V.grad
    out: list[tuple[float, ContinuumField]] = []
    si = 0
    t = 0.0
    eps = 1e-12 * max(t_end, 1.0)
    while si < len(snap) and snap[si] <= t + eps:
        out.append((t, ContinuumField(d, N, v.copy())))
        si += 1

    # noise is drawn in chunks of whole steps; rows of one chunk are the
    # same variates, in the same order, as per-step draws would be
    chunk = max(1, min(1024, 4_000_000 // max(1, shape.n_sites)))
    buf = None
    buf_i = 0
    for k in range(n_steps):
        step_dt = dt if k < n_steps - 1 else t_end - dt * (n_steps - 1)
        if noise_scale != 0.0:
            if buf is None or buf_i == len(buf):
                m = min(chunk, n_steps - k)
                buf = rng.normal_block((m,) + (N,) * d)
                buf_i = 0
            xi = buf[buf_i]
            buf_i += 1
            if d == 1:
                w = np.fft.irfft(np.fft.rfft(xi) * sqrt_lam, n=N)
            else:
                w = np.fft.irfftn(np.fft.rfftn(xi) * sqrt_lam, s=(N, N))
            v = v + step_dt * _drift(v, d, grad_fn) \
                  + noise_scale * math.sqrt(step_dt) * w
        else:
            v = v + step_dt * _drift(v, d, grad_fn)
        t = dt * (k + 1) if k < n_steps - 1 else t_end
        while si < len(snap) and snap[si] <= t + eps:
            out.append((t, ContinuumField(d, N, v.copy())))
            si += 1
    while si < len(snap):
        out.append((t, ContinuumField(d, N, v.copy())))
        si += 1
    return out
