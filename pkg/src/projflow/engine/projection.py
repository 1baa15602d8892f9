from dataclasses import dataclass

import numpy as np

from projflow.engine.errors import ConeViolationError, DegenerateFieldError
from projflow.engine.measure import Field, Partition, check_partition, ess_inf, inner, norm


@dataclass(frozen=True, eq=False)
class Projector:
    """
    Orthogonal projection P = I - n (n, .) whose null space is spanned by a
    strictly positive unit field n. Applied matrix-free in O(m).
    """

    n: Field
    partition: Partition

    # ---------- array kernels (used by the integrators) ----------

    @property
    def weighted_n(self) -> np.ndarray:
        return self.partition.weights * self.n.values

    def project_values(self, z: np.ndarray) -> np.ndarray:
        """P applied to raw cell values; z may be (m,) or (k, m)."""
        wn = self.weighted_n
        coef = z @ wn
        return z - np.multiply.outer(coef, self.n.values)

    # ---------- public interface ----------

    def project(self, z: Field) -> Field:
        check_partition(z, self.partition)
        return z - inner(z, self.n, self.partition) * self.n

    def complement(self, z: Field) -> Field:
        check_partition(z, self.partition)
        return inner(self.n, z, self.partition) * self.n

    def coefficient(self, z: Field) -> float:
        """(z, n): the null-space coordinate of z."""
        return inner(z, self.n, self.partition)


def make_projector(n_raw: Field, p: Partition) -> Projector:

    check_partition(n_raw, p)

    bad = np.flatnonzero(n_raw.values <= 0)
    if np.all(n_raw.values == 0):
        raise DegenerateFieldError("direction field is identically zero")
    if bad.size:
        raise ConeViolationError("n", bad)

    n = n_raw / norm(n_raw, p, "L2")
    # a second pass absorbs the rounding of the first
    n = n / np.sqrt(inner(n, n, p))

    assert ess_inf(n) > 0
    return Projector(n=n, partition=p)
