"""Integer height fields on a periodic lattice.

Sites live on the d-dimensional discrete torus of side N (d in {1, 2}) and
carry integer heights.  Single events move one atom from a site to a nearest
neighbor, so total mass is conserved exactly.  Sites are addressed by flat
row-major index throughout; the neighbor table fixes the axis convention
(columns 2*i and 2*i + 1 are the +e_i and -e_i neighbors).
"""

from dataclasses import dataclass, field
import csv
import json

import numpy as np

from .potential import Potential


@dataclass(frozen=True)
class LatticeShape:
    """Periodic lattice geometry.

    d : spatial dimension, 1 or 2.
    N : sites per axis, at least 3 so that the two neighbors of a site are
        distinct.
    """

    d: int
    N: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.N < 3:
            raise ValueError(f"lattice side must be >= 3, got {self.N}")

    @property
    def n_sites(self):
        return self.N ** self.d

    def index(self, *coords):
        """Flat index of a site given per-axis coordinates (mod N)."""
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates, got {len(coords)}")
        idx = 0
        for c in coords:
            idx = idx * self.N + (int(c) % self.N)
        return idx

    def coords(self, site):
        """Per-axis coordinates of a flat site index."""
        site = int(site)
        if not 0 <= site < self.n_sites:
            raise ValueError(f"site {site} out of range")
        if self.d == 1:
            return (site,)
        return (site // self.N, site % self.N)

    def neighbor_table(self):
        """(n_sites, 2d) int64 array; columns alternate +e_i, -e_i.

        Built once per shape and cached.  Branch-free lookups in the hot
        loops index into this table instead of recomputing moduli.
        """
        cached = _NBR_CACHE.get((self.d, self.N))
        if cached is not None:
            return cached
        n, N = self.n_sites, self.N
        sites = np.arange(n, dtype=np.int64)
        cols = []
        if self.d == 1:
            cols = [(sites + 1) % N, (sites - 1) % N]
        else:
            r, c = sites // N, sites % N
            cols = [((r + 1) % N) * N + c, ((r - 1) % N) * N + c,
                    r * N + (c + 1) % N, r * N + (c - 1) % N]
        table = np.stack(cols, axis=1)
        table.setflags(write=False)
        _NBR_CACHE[(self.d, self.N)] = table
        return table


_NBR_CACHE = {}


@dataclass
class HeightField:
    """Integer heights over a LatticeShape, flat row-major storage."""

    shape: LatticeShape
    heights: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.heights)
        if not np.issubdtype(h.dtype, np.integer):
            if not np.array_equal(h, np.round(h)):
                raise ValueError("heights must be integers")
        h = h.astype(np.int64).reshape(-1)
        if h.size != self.shape.n_sites:
            raise ValueError(
                f"expected {self.shape.n_sites} heights, got {h.size}")
        self.heights = h

    @classmethod
    def flat(cls, shape, level=0):
        return cls(shape, np.full(shape.n_sites, level, dtype=np.int64))

    @property
    def mass(self):
        """Total height, conserved by every event."""
        return int(self.heights.sum())

    def copy(self):
        return HeightField(self.shape, self.heights.copy())

    def __eq__(self, other):
        if not isinstance(other, HeightField):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(
            self.heights, other.heights)

    # serialization

    def to_json(self):
        return json.dumps({"d": self.shape.d, "N": self.shape.N,
                           "heights": self.heights.tolist()})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        shape = LatticeShape(int(doc["d"]), int(doc["N"]))
        return cls(shape, np.array(doc["heights"], dtype=np.int64))

    def write_csv(self, fh):
        w = csv.writer(fh)
        if self.shape.d == 1:
            w.writerow(["site", "height"])
            for s, h in enumerate(self.heights):
                w.writerow([s, int(h)])
        else:
            w.writerow(["row", "col", "height"])
            N = self.shape.N
            for s, h in enumerate(self.heights):
                w.writerow([s // N, s % N, int(h)])


@dataclass(frozen=True)
class SiteMove:
    """One atom hop: height drops by 1 at source, rises by 1 at target."""

    source: int
    target: int


def gradient(h, site, axis, direction):
    """Forward or backward height difference along an axis.

    direction +1 gives h(site + e_axis) - h(site), direction -1 gives
    h(site) - h(site - e_axis).
    """
    if axis < 0 or axis >= h.shape.d:
        raise ValueError(f"axis {axis} out of range for d = {h.shape.d}")
    nbr = h.shape.neighbor_table()
    if direction == 1:
        return int(h.heights[nbr[site, 2 * axis]] - h.heights[site])
    if direction == -1:
        return int(h.heights[site] - h.heights[nbr[site, 2 * axis + 1]])
    raise ValueError("direction must be +1 or -1")


def apply_move(h, move):
    """Return a new field with the move applied.

    The target must be a nearest neighbor of the source; anything else is a
    usage error, not a physics question.
    """
    nbr = h.shape.neighbor_table()
    if move.target not in nbr[move.source]:
        raise ValueError(
            f"target {move.target} is not a neighbor of site {move.source}")
    out = h.copy()
    out.heights[move.source] -= 1
    out.heights[move.target] += 1
    return out


def lower_site(h, site):
    """Return a new field with h(site) lowered by 1 (mass not conserved).

    This is the half-move entering the coordination number and the energy
    relation; full events pair it with a raise at a neighbor.
    """
    out = h.copy()
    out.heights[site] -= 1
    return out


def energy(h, V):
    """H(h) = sum over sites and axes of V(forward gradient)."""
    total = 0.0
    nbr = h.shape.neighbor_table()
    hh = h.heights
    for axis in range(h.shape.d):
        diffs = hh[nbr[:, 2 * axis]] - hh
        total += float(np.sum(V(diffs)))
    return total


def coordination_number(h, site, V):
    """Generalized coordination number of a site.

    n(site) is half the energy change of lowering the site by 1, written
    with local differences only:

        n = 1/2 sum_i [ V(g+_i + 1) - V(g+_i) + V(g-_i - 1) - V(g-_i) ]

    where g+_i, g-_i are the forward and backward gradients along axis i.
    Lowering the site raises each forward gradient by 1 and lowers each
    backward gradient by 1.  Only the site and its 2d neighbors are read.

    For V(z) = |z| this counts neighbors at least as high, minus d.  For
    V(z) = z^2 it equals the discrete Laplacian plus d.
    """
    n = 0.0
    for axis in range(h.shape.d):
        gp = gradient(h, site, axis, +1)
        gm = gradient(h, site, axis, -1)
        n += (V(gp + 1) - V(gp) + V(gm - 1) - V(gm))
    return 0.5 * n
