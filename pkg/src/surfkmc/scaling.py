"""Projections from the lattice to the unit torus and field comparison.

The smooth regime rescales heights by N^-1 and time by N^-4; the rough
regime uses the conjugate exponent a = p/(p-1) (heights) and a+2
(time).  Lattice site alpha maps to the cell centered at alpha/N, so a
projected field lives on the M = N grid of ContinuumField.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ContinuumField
from .surface import HeightField


@dataclass(frozen=True)
class ScalingKind:
    kind: str
    p: float | None = None

    def __post_init__(self):
        if self.kind not in ("smooth", "rough"):
            raise ValueError(f"kind must be smooth or rough, got {self.kind}")
        if self.kind == "rough":
            if self.p is None or not (self.p > 1.0):
                raise ValueError("rough scaling needs the potential "
                                 "exponent p > 1")

    @property
    def a(self) -> float:
        """Height exponent: heights shrink by N^-a."""
        if self.kind == "smooth":
            return 1.0
        return self.p / (self.p - 1.0)

    @property
    def b(self) -> float:
        """Time exponent: micro time tau maps to tau N^-b."""
        if self.kind == "smooth":
            return 4.0
        return self.a + 2.0


def project(h: HeightField, kind: ScalingKind,
            tau: float = 0.0) -> tuple[float, ContinuumField]:
    """Rescale a lattice state at micro time tau to macro variables."""
    N = h.shape.N
    vals = h.heights.astype(np.float64).reshape((N,) * h.shape.d)
    vals = vals * float(N) ** (-kind.a)
    return tau * float(N) ** (-kind.b), ContinuumField(h.shape.d, N, vals)


def _overlap_matrix(Mc: int, Mf: int) -> np.ndarray:
    """Row-stochastic matrix averaging an Mf grid onto an Mc grid.

    Cell i of an M grid is the interval [(i-1/2)/M, (i+1/2)/M) on the
    periodic torus.  Overlaps are computed in integer units of
    1/(2 Mc Mf), so exact grid ratios give exact weights.
    """
    W = np.zeros((Mc, Mf))
    for i in range(Mc):
        lo = (2 * i - 1) * Mf
        hi = (2 * i + 1) * Mf
        j0 = lo // (2 * Mc) - 1
        j1 = hi // (2 * Mc) + 2
        for j in range(j0, j1):
            ov = min(hi, (2 * j + 1) * Mc) - max(lo, (2 * j - 1) * Mc)
            if ov > 0:
                W[i, j % Mf] += ov / (2.0 * Mf)
    return W


def cell_average(field: ContinuumField, M_target: int) -> ContinuumField:
    """Average a field onto a coarser grid, respecting periodic cells."""
    if M_target == field.M:
        return field.copy()
    if M_target > field.M:
        raise ValueError(f"target grid {M_target} is finer than the "
                         f"field's {field.M}")
    W = _overlap_matrix(M_target, field.M)
    if field.d == 1:
        return ContinuumField(1, M_target, W @ field.values)
    return ContinuumField(2, M_target, W @ field.values @ W.T)


@dataclass(frozen=True)
class CompareResult:
    l_inf: float
    l2: float
    argmax_cell: tuple[int, ...]
    argmax_x: tuple[float, ...]
    M: int


def compare(a: ContinuumField, b: ContinuumField) -> CompareResult:
    """Distances between two fields, on the coarser of the two grids.

    The finer field is cell-averaged down first; L2 is the root mean
    square over cells (grid-size independent), L-infinity comes with
    the cell where it is attained.
    """
    if a.d != b.d:
        raise ValueError(f"cannot compare d={a.d} with d={b.d}")
    Mc = min(a.M, b.M)
    av = cell_average(a, Mc)
    bv = cell_average(b, Mc)
    diff = av.values - bv.values
    absd = np.abs(diff)
    flat = int(np.argmax(absd))
    cell = tuple(int(c) for c in np.unravel_index(flat, absd.shape))
    return CompareResult(
        l_inf=float(absd.ravel()[flat]),
        l2=float(np.sqrt(np.mean(diff * diff))),
        argmax_cell=cell,
        argmax_x=tuple(c / Mc for c in cell),
        M=Mc)
