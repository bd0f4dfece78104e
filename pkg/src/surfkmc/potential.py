"""Bond potentials for the height model.

The energy of a surface is a sum of V over forward height differences.  The
family used throughout is the power potential V(z) = |z|^p with p >= 1, which
covers the solid-on-solid case (p = 1) and the discrete Gaussian (p = 2).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Potential:
    """Even convex bond potential V(z) = |z|^p.

    Parameters
    ----------
    p : float
        Power, must be >= 1.  p = 1 is solid-on-solid, p = 2 discrete
        Gaussian.
    """

    p: float = 1.0

    def __post_init__(self):
        if not self.p >= 1.0:
            raise ValueError(f"potential power must be >= 1, got {self.p}")

    def __call__(self, z):
        """V(z), elementwise on arrays."""
        z = np.asarray(z, dtype=float)
        if self.p == 1.0:
            out = np.abs(z)
        elif self.p == 2.0:
            out = z * z
        else:
            out = np.abs(z) ** self.p
        if out.ndim == 0:
            return float(out)
        return out

    def grad(self, z):
        """V'(z) = p |z|^(p-2) z.

        Undefined at the kink for p = 1, so that case is rejected outright.
        For 1 < p < 2 the derivative at z = 0 is 0 by continuity.
        """
        if self.p == 1.0:
            raise ValueError("V(z) = |z| has no derivative at z = 0; "
                             "grad is unsupported for p = 1")
        z = np.asarray(z, dtype=float)
        if self.p == 2.0:
            out = 2.0 * z
        else:
            # |z|^(p-2) blows up at 0 for p < 2; the z factor wins, so the
            # limit is 0, but both where-branches get evaluated
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(z == 0.0, 0.0,
                               self.p * np.abs(z) ** (self.p - 2.0) * z)
        if out.ndim == 0:
            return float(out)
        return out

    def conjugate_power(self):
        """q = p / (p - 1), the Hoelder conjugate.  Infinite for p = 1."""
        if self.p == 1.0:
            raise ValueError("conjugate power diverges for p = 1")
        return self.p / (self.p - 1.0)
