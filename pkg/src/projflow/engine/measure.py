import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd

from projflow.engine.errors import DimensionError

NormKind = Literal["L2", "Linf"]


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Partition:
    """
    Finite measure space as m cells with positive weights.

    `centers` are only needed when closed-form functions are sampled on the cells.
    """

    weights: np.ndarray
    centers: Optional[np.ndarray]
    tag: str

    # ---------- construction ----------

    @classmethod
    def from_weights(cls, weights, centers=None) -> "Partition":

        w = _frozen(weights)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D array")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("every cell weight must be finite and > 0")

        c = None
        if centers is not None:
            c = _frozen(centers)
            if c.shape != w.shape:
                raise DimensionError(f"{c.size} centers for {w.size} cells")

        digest = hashlib.sha1(w.tobytes())
        if c is not None:
            digest.update(c.tobytes())

        return cls(weights=w, centers=c, tag=digest.hexdigest()[:16])

    @classmethod
    def uniform(cls, m: int) -> "Partition":
        """Uniform cells on [0, 1] with midpoints (i + 0.5)/m."""
        if m < 1:
            raise ValueError(f"cell count must be >= 1, got {m}")
        return cls.from_weights(np.full(m, 1.0 / m), (np.arange(m) + 0.5) / m)

    # ---------- properties ----------

    @property
    def m(self) -> int:
        return self.weights.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def field(self, values) -> "Field":
        return Field(values, self)

    def constant(self, value: float) -> "Field":
        return Field(np.full(self.m, float(value)), self)

    # ---------- export ----------

    def to_frame(self, u: Optional["Field"] = None) -> pd.DataFrame:

        df = pd.DataFrame({
            "index": np.arange(self.m),
            "weight": self.weights,
            "center": self.centers if self.centers is not None else np.nan,
        })
        if u is not None:
            check_partition(u, self)
            df["value"] = u.values
        return df

    def to_csv(self, path: Union[str, Path], u: Optional["Field"] = None):
        self.to_frame(u).to_csv(path, index=False, float_format="%.17g")


class Field:
    """Simple function on a Partition: one finite value per cell."""

    __slots__ = ("values", "tag")

    def __init__(self, values, partition: Partition):

        arr = _frozen(values)
        if arr.shape != (partition.m,):
            raise DimensionError(f"field of shape {arr.shape} on a partition of {partition.m} cells")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")

        self.values = arr
        self.tag = partition.tag

    @classmethod
    def _like(cls, values: np.ndarray, tag: str) -> "Field":
        out = cls.__new__(cls)
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        out.values = arr
        out.tag = tag
        return out

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"Field(m={self.values.size}, min={self.values.min():.6g}, max={self.values.max():.6g})"

    # ---------- arithmetic ----------

    def _other(self, other) -> Union[np.ndarray, float]:
        if isinstance(other, Field):
            if other.tag != self.tag:
                raise DimensionError("fields live on different partitions")
            return other.values
        if isinstance(other, (int, float, np.floating)):
            return float(other)
        return NotImplemented

    def __add__(self, other):
        v = self._other(other)
        return NotImplemented if v is NotImplemented else Field._like(self.values + v, self.tag)

    __radd__ = __add__

    def __sub__(self, other):
        v = self._other(other)
        return NotImplemented if v is NotImplemented else Field._like(self.values - v, self.tag)

    def __rsub__(self, other):
        v = self._other(other)
        return NotImplemented if v is NotImplemented else Field._like(v - self.values, self.tag)

    def __mul__(self, other):
        v = self._other(other)
        return NotImplemented if v is NotImplemented else Field._like(self.values * v, self.tag)

    __rmul__ = __mul__

    def __truediv__(self, other):
        v = self._other(other)
        return NotImplemented if v is NotImplemented else Field._like(self.values / v, self.tag)

    def __neg__(self):
        return Field._like(-self.values, self.tag)


def check_partition(u: Field, p: Partition):
    if u.tag != p.tag or u.values.size != p.m:
        raise DimensionError("field does not live on the given partition")


def inner(u: Field, v: Field, p: Partition) -> float:
    check_partition(u, p)
    check_partition(v, p)
    return float(np.sum(p.weights * u.values * v.values))


def norm(u: Field, p: Partition, which: NormKind = "L2") -> float:
    check_partition(u, p)
    if which == "L2":
        return float(np.sqrt(np.sum(p.weights * u.values ** 2)))
    if which == "Linf":
        return float(np.max(np.abs(u.values)))
    raise ValueError(f"unknown norm: {which}")


def ess_inf(u: Field) -> float:
    # on a partition the essential infimum is the minimum over cells
    return float(u.values.min())


def ess_sup(u: Field) -> float:
    return float(u.values.max())


def sample(f: Callable[[np.ndarray], np.ndarray], m: int) -> Tuple[Partition, Field]:
    """Midpoint-rule sampling of a closed-form f on a uniform partition of [0, 1]."""
    if m < 1:
        raise ValueError(f"cell count must be >= 1, got {m}")
    p = Partition.uniform(m)
    values = np.broadcast_to(np.asarray(f(p.centers), dtype=np.float64), (m,))
    return p, Field(values, p)
