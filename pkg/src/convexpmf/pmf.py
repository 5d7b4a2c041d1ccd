"""Finitely supported pmfs on the nonnegative integers.

Masses are stored densely on ``{0, ..., S}``; any index past ``S`` reads
as zero.  The triangular pmfs ``T_k`` are the extreme points of the set
of convex pmfs, so every convex pmf is a mixture of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.stats import poisson

__all__ = [
    "Pmf",
    "Sample",
    "TriangularMixture",
    "ShapeError",
    "KNOT_TOL",
    "triangular",
    "triangular_basis",
    "delta",
    "second_differences",
    "knots",
    "is_convex",
    "mixture_to_pmf",
    "pmf_to_mixture",
    "empirical_pmf",
    "truncated_poisson",
    "perturbed_triangular",
    "sample_from",
    "benchmark_pmfs",
]

KNOT_TOL = 1e-10
_SUM_TOL = 1e-12
_NEG_CLIP = 1e-14

ArrayLike = Union[Sequence[float], np.ndarray]


class ShapeError(ValueError):
    """A pmf violates the convexity constraint required by an operation."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probability mass function on ``{0, ..., support_end}``.

    Trailing zeros are trimmed on construction so ``support_end`` is the
    largest index with positive mass.  Roundoff negatives above ``-1e-14``
    are clipped to zero.
    """

    mass: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.mass, dtype=float).ravel()
        if m.size == 0:
            raise ValueError("pmf needs at least one mass value")
        if not np.all(np.isfinite(m)):
            raise ValueError("pmf masses must be finite")
        if np.any(m < -_NEG_CLIP):
            raise ValueError(f"negative mass {m.min():.3g}")
        m = np.where(m < 0.0, 0.0, m)
        if abs(m.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"masses sum to {m.sum()!r}, not 1")
        nz = np.flatnonzero(m)
        m = m[: nz[-1] + 1] if nz.size else m[:1]
        object.__setattr__(self, "mass", _frozen(m))

    @property
    def support_end(self) -> int:
        return self.mass.size - 1

    def __len__(self) -> int:
        return self.mass.size

    def __getitem__(self, j: int) -> float:
        if j < 0:
            raise IndexError("pmf indices are nonnegative")
        return float(self.mass[j]) if j < self.mass.size else 0.0

    def padded(self, length: int) -> np.ndarray:
        """Masses on ``{0, ..., length - 1}``, zero past the support."""
        out = np.zeros(max(length, 0))
        k = min(length, self.mass.size)
        out[:k] = self.mass[:k]
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Pmf):
            return NotImplemented
        return np.array_equal(self.mass, other.mass)

    def __repr__(self) -> str:
        return f"Pmf({np.array2string(self.mass, precision=6, separator=', ')})"


@dataclass(frozen=True, eq=False)
class Sample:
    """Observations ``X_1, ..., X_n`` as nonnegative integers."""

    values: np.ndarray
    n: int = field(init=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("sample must be a nonempty 1-d sequence")
        if v.dtype.kind == "f":
            if not np.all(v == np.floor(v)):
                raise ValueError("sample values must be integers")
        elif v.dtype.kind not in "iu":
            raise ValueError("sample values must be integers")
        v = v.astype(np.int64)
        if v.min() < 0:
            raise ValueError("sample values must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "n", int(v.size))

    @classmethod
    def from_counts(cls, counts: ArrayLike) -> "Sample":
        """Rebuild a sample (sorted) from per-value counts."""
        c = np.asarray(counts, dtype=np.int64)
        if np.any(c < 0):
            raise ValueError("counts must be nonnegative")
        return cls(np.repeat(np.arange(c.size), c))

    def counts(self) -> np.ndarray:
        return np.bincount(self.values)

    @property
    def max(self) -> int:
        return int(self.values.max())


@dataclass(frozen=True, eq=False)
class TriangularMixture:
    """Weights ``pi_1, ..., pi_K`` on the triangular pmfs ``T_1, ..., T_K``.

    ``weights[k - 1]`` multiplies ``T_k``.
    """

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0:
            raise ValueError("mixture needs at least one weight")
        if np.any(w < -_NEG_CLIP) or np.any(w > 1.0 + _SUM_TOL):
            raise ValueError("mixture weights must lie in [0, 1]")
        w = np.clip(w, 0.0, None)
        if abs(w.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"mixture weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _frozen(w))

    def __getitem__(self, k: int) -> float:
        """Weight of ``T_k`` (1-based), zero beyond the stored range."""
        if k < 1:
            raise IndexError("triangular pmfs are indexed from 1")
        return float(self.weights[k - 1]) if k <= self.weights.size else 0.0

    @property
    def support(self) -> list[int]:
        return [int(k) + 1 for k in np.flatnonzero(self.weights)]


def _triangular_mass(k: int) -> np.ndarray:
    i = np.arange(k)
    return 2.0 * (k - i) / (k * (k + 1))


def triangular(k: int) -> Pmf:
    """Triangular pmf ``T_k(i) = 2 (k - i)_+ / (k (k + 1))``."""
    if int(k) != k or k < 1:
        raise ValueError(f"triangular pmf needs k >= 1, got {k!r}")
    return Pmf(_triangular_mass(int(k)))


def triangular_basis(K: int, length: int | None = None) -> np.ndarray:
    """Matrix whose column ``k - 1`` is ``T_k`` on ``{0, ..., length - 1}``."""
    length = K if length is None else length
    i = np.arange(length)[:, None]
    k = np.arange(1, K + 1)[None, :]
    return 2.0 * np.clip(k - i, 0, None) / (k * (k + 1))


def _as_vector(p: Pmf | ArrayLike) -> np.ndarray:
    return p.mass if isinstance(p, Pmf) else np.asarray(p, dtype=float)


def delta(p: Pmf | ArrayLike, k: int) -> float:
    """Second difference ``p(k+1) - 2 p(k) + p(k-1)``; out-of-range reads 0."""
    if k < 1:
        raise ValueError(f"second difference is defined for k >= 1, got {k}")
    v = _as_vector(p)

    def at(j: int) -> float:
        return float(v[j]) if j < v.size else 0.0

    return at(k + 1) - 2.0 * at(k) + at(k - 1)


def second_differences(v: ArrayLike, upto: int | None = None) -> np.ndarray:
    """Vector ``(delta(v, 1), ..., delta(v, upto))``; default ``upto = len(v)``."""
    v = np.asarray(v, dtype=float)
    upto = v.size if upto is None else upto
    w = np.zeros(upto + 2)
    m = min(v.size, upto + 2)
    w[:m] = v[:m]
    return w[2:] - 2.0 * w[1:-1] + w[:-2]


def knots(p: Pmf, tol: float = KNOT_TOL) -> set[int]:
    """Indices ``k`` in ``{1, ..., S}`` where ``delta(p, k) > tol``."""
    d = second_differences(p.mass, p.support_end)
    return {int(k) + 1 for k in np.flatnonzero(d > tol)}


def is_convex(p: Pmf | ArrayLike, tol: float = 1e-12) -> bool:
    v = _as_vector(p)
    return bool(np.all(second_differences(v, v.size) >= -tol))


def mixture_to_pmf(m: TriangularMixture) -> Pmf:
    K = m.weights.size
    return Pmf(triangular_basis(K) @ m.weights)


def pmf_to_mixture(p: Pmf, tol: float = 1e-12) -> TriangularMixture:
    """Invert ``mixture_to_pmf``: ``pi_k = k (k + 1) delta(p, k) / 2``.

    The sum runs to ``k = S + 1``, the last index where a finitely
    supported pmf can have a nonzero second difference.
    """
    K = p.support_end + 1
    d = second_differences(p.mass, K)
    if np.any(d < -tol):
        bad = int(np.argmin(d)) + 1
        raise ShapeError(f"pmf is not convex: delta at {bad} is {d.min():.3g}")
    k = np.arange(1, K + 1)
    w = np.clip(k * (k + 1) * d / 2.0, 0.0, None)
    return TriangularMixture(w / w.sum())


def empirical_pmf(s: Sample) -> Pmf:
    if s.n < 1:
        raise ValueError("empirical pmf of an empty sample")
    return Pmf(s.counts() / s.n)


def truncated_poisson(rate: float, upper: int) -> Pmf:
    """Poisson(rate) restricted to ``{0, ..., upper}`` and renormalized."""
    if not rate > 0:
        raise ValueError(f"Poisson rate must be positive, got {rate!r}")
    if upper < 0:
        raise ValueError(f"upper must be >= 0, got {upper}")
    m = poisson.pmf(np.arange(upper + 1), rate)
    return Pmf(m / m.sum())


def perturbed_triangular(eps: float = 0.008) -> Pmf:
    """``T_6`` with ``eps`` of mass moved from index 1 to index 0.

    The result has a concave kink of size ``-eps`` at index 2.
    """
    m = _triangular_mass(6).copy()
    m[0] += eps
    m[1] -= eps
    return Pmf(m)


def sample_from(p: Pmf, n: int, rng: np.random.Generator) -> Sample:
    """``n`` i.i.d. draws by inverse-CDF lookup on the cumulative masses."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    cdf = np.cumsum(p.mass)
    cdf[-1] = 1.0
    u = rng.random(n)
    return Sample(np.searchsorted(cdf, u, side="right"))


def benchmark_pmfs() -> dict[str, Pmf]:
    """The four pmfs on ``{0, ..., 5}`` used in the simulation study.

    ``p0_1`` and ``p0_2`` are convex (null); ``p1_1`` and ``p1_2`` are not.
    """
    w = np.array([0.0, 1 / 6, 1 / 6, 0.0, 1 / 3, 1 / 3])
    return {
        "p0_1": triangular(6),
        "p0_2": mixture_to_pmf(TriangularMixture(w)),
        "p1_1": truncated_poisson(1.5, 5),
        "p1_2": perturbed_triangular(),
    }
