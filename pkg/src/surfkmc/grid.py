"""Real-valued periodic fields on the unit torus."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class ContinuumField:
    """Cell-centered samples of a function on [0,1)^d.

    Cell i holds the value at x = i/M; with M cells the spacing is 1/M
    along each axis.  values has shape (M,) for d=1 and (M, M) for d=2.
    """

    d: int
    M: int
    values: np.ndarray

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.M < 3:
            raise ValueError(f"grid must have at least 3 cells, got {self.M}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.M,) * self.d:
            raise ValueError(f"values shape {v.shape} does not match "
                             f"M={self.M}, d={self.d}")
        object.__setattr__(self, "values", v)

    @property
    def dx(self) -> float:
        return 1.0 / self.M

    def mean(self) -> float:
        return float(np.mean(self.values))

    def copy(self) -> "ContinuumField":
        return ContinuumField(self.d, self.M, self.values.copy())

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.M) / self.M

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContinuumField):
            return NotImplemented
        return (self.d == other.d and self.M == other.M
                and np.array_equal(self.values, other.values))

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "M": self.M,
                           "values": self.values.ravel().tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ContinuumField":
        obj = json.loads(text)
        v = np.asarray(obj["values"], dtype=np.float64)
        return cls(int(obj["d"]), int(obj["M"]),
                   v.reshape((int(obj["M"]),) * int(obj["d"])))

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            # float() strips the numpy scalar type, whose repr is not a
            # plain number
            if self.d == 1:
                fh.write("x,value\n")
                for i in range(self.M):
                    fh.write(f"{i / self.M!r},{float(self.values[i])!r}\n")
            else:
                fh.write("x,y,value\n")
                for i in range(self.M):
                    for j in range(self.M):
                        fh.write(f"{i / self.M!r},{j / self.M!r},"
                                 f"{float(self.values[i, j])!r}\n")
