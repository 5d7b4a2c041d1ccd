"""Least-squares projections onto convex pmfs and second-difference cones.

Two problems live here:

* ``convex_lse`` projects a pmf onto the convex pmfs.  It works in the
  triangular-mixture parameterization, where the feasible set is the
  probability simplex over ``T_1, ..., T_K``, and solves the resulting
  simplex-constrained least squares with a support-reduction active set.
* ``cone_project`` projects a vector onto ``{h : delta(h, x) >= 0 for x in A}``
  with a primal active-set method.  ``ConeProjector`` projects many vectors
  onto the same cone at once by enumerating faces, which is what the Monte
  Carlo calibration uses.

Every result can be certified with the matching KKT residual function.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .pmf import Pmf, TriangularMixture, delta, is_convex, pmf_to_mixture, triangular_basis

__all__ = [
    "KKT_TOL",
    "FEAS_TOL",
    "PSD_TOL",
    "NotPSDError",
    "ConeSpec",
    "ConvexLseResult",
    "DispersionMatrix",
    "GaussianFactor",
    "ConeProjector",
    "convex_lse",
    "lse_kkt_residual",
    "cone_project",
    "cone_kkt_residual",
    "dispersion_matrix",
    "factor_psd",
    "sample_gaussian",
    "second_difference_matrix",
    "rank_diagnostic",
]

KKT_TOL = 1e-8
FEAS_TOL = 1e-10
PSD_TOL = 1e-10
_NOT_PSD = 1e-8
# Above this many constrained positions the batch projector stops
# enumerating faces and falls back to the active-set solver per vector.
MAX_ENUM_CONSTRAINTS = 8


class NotPSDError(ValueError):
    """Matrix has an eigenvalue clearly below zero."""


# ---------------------------------------------------------------------------
# cones


@dataclass(frozen=True)
class ConeSpec:
    """Cone ``{h in R^dim : delta(h, x) >= 0 for every x in constrained}``.

    Vectors are indexed ``0, ..., dim - 1`` and constraints live in
    ``{1, ..., dim - 2}``.  An empty constraint set gives all of ``R^dim``.
    """

    dim: int
    constrained: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"cone dimension must be >= 1, got {self.dim}")
        c = tuple(sorted({int(x) for x in self.constrained}))
        if c and (c[0] < 1 or c[-1] > self.dim - 2):
            raise ValueError(
                f"constrained positions must lie in 1..{self.dim - 2}, got {c}"
            )
        object.__setattr__(self, "constrained", c)

    @classmethod
    def full(cls, dim: int) -> "ConeSpec":
        """Convex vectors: every interior position constrained."""
        return cls(dim, tuple(range(1, dim - 1)))

    def matrix(self) -> np.ndarray:
        """Rows are the second-difference functionals at constrained positions."""
        return second_difference_matrix(self.dim, self.constrained)

    def contains(self, g: np.ndarray, tol: float = FEAS_TOL) -> bool:
        return bool(np.all(self.matrix() @ g >= -tol))


def second_difference_matrix(dim: int, positions: Iterable[int]) -> np.ndarray:
    pos = list(positions)
    D = np.zeros((len(pos), dim))
    for i, x in enumerate(pos):
        D[i, x - 1 : x + 2] = (1.0, -2.0, 1.0)
    return D


def cone_project(g: np.ndarray, cone: ConeSpec, max_iter: int | None = None) -> np.ndarray:
    """Euclidean projection of ``g`` onto ``cone`` (primal active set).

    Starts from the origin, which lies on every face, with all
    constraints in the working set.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (cone.dim,):
        raise ValueError(f"vector of length {g.size} does not match cone dim {cone.dim}")
    D = cone.matrix()
    m = D.shape[0]
    if m == 0:
        return g.copy()
    scale = max(1.0, float(np.abs(g).max()))
    lam_tol = 1e-13 * scale
    h = np.zeros_like(g)
    work = list(range(m))
    max_iter = max_iter or 20 * (m + 1) ** 2
    for _ in range(max_iter):
        if work:
            Dw = D[work]
            mu = np.linalg.solve(Dw @ Dw.T, Dw @ g)
            target = g - Dw.T @ mu
        else:
            mu = np.zeros(0)
            target = g.copy()
        step = target - h
        Dstep = D @ step
        Dh = D @ h
        alpha, block = 1.0, -1
        inactive = np.ones(m, dtype=bool)
        inactive[work] = False
        # roundoff-level decreases cannot block the step
        for i in np.flatnonzero(inactive & (Dstep < -1e-14 * scale)):
            a = max(Dh[i], 0.0) / -Dstep[i]
            if a < alpha:
                alpha, block = a, int(i)
        h = h + alpha * step
        if block >= 0:
            work.append(block)
            continue
        # full step: h solves the working-set subproblem; multipliers are -mu
        if mu.size == 0 or mu.max() <= lam_tol:
            return h
        work.pop(int(np.argmax(mu)))
    raise RuntimeError("cone projection did not converge")


def cone_kkt_residual(
    g: np.ndarray, h: np.ndarray, cone: ConeSpec
) -> np.ndarray | float:
    """Largest violation of the projection optimality conditions.

    Checks (i) feasibility ``delta(h, x) >= 0`` on constrained positions,
    (ii) orthogonality ``<g - h, h> = 0``, (iii) ``<g - h, r> <= 0`` for
    every extreme ray ``r`` of the cone and ``<g - h, v> = 0`` on its
    lineality space.  Accepts a single vector or a batch of rows.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    single = g.ndim == 1
    G = np.atleast_2d(g)
    H = np.atleast_2d(h)
    R = G - H
    D, rays, lineal = _certificate(cone)
    res = np.abs(np.einsum("bi,bi->b", R, H))
    if D.shape[0]:
        res = np.maximum(res, np.clip(-(H @ D.T), 0.0, None).max(axis=1))
        res = np.maximum(res, np.clip(R @ rays, 0.0, None).max(axis=1))
    if lineal.shape[1]:
        res = np.maximum(res, np.abs(R @ lineal).max(axis=1))
    return float(res[0]) if single else res


@functools.lru_cache(maxsize=256)
def _certificate(cone: ConeSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # rays: columns r_i with D r_i = e_i orthogonal to ker D; lineal: basis of ker D
    D = cone.matrix()
    if D.shape[0] == 0:
        return D, np.zeros((cone.dim, 0)), np.eye(cone.dim)
    _, s, vt = np.linalg.svd(D)
    rank = int(np.sum(s > 1e-12 * s.max()))
    return D, np.linalg.pinv(D), vt[rank:].T


class ConeProjector:
    """Batch projection onto one fixed cone.

    For few constraints every face ``{D_W h = 0}`` is enumerated up front;
    a batch is projected onto all faces and each row keeps the face whose
    primal and dual feasibility conditions hold (the KKT point is unique).
    Use ``ConeProjector.for_cone`` to share the precomputation.
    """

    def __init__(self, cone: ConeSpec):
        self.cone = cone
        self.D = cone.matrix()
        m, d = self.D.shape
        self.enumerate = m <= MAX_ENUM_CONSTRAINTS
        if not self.enumerate:
            return
        faces = [
            w for r in range(m + 1) for w in itertools.combinations(range(m), r)
        ]
        F = len(faces)
        self.proj = np.empty((F, d, d))
        # Row (f, i) maps g to the signed violation of constraint i on face f:
        # minus the multiplier if i is active there, minus the slack otherwise.
        viol = np.empty((F, m, d))
        eye = np.eye(d)
        for f, w in enumerate(faces):
            on = np.zeros(m, dtype=bool)
            on[list(w)] = True
            if w:
                Dw = self.D[on]
                M = np.linalg.solve(Dw @ Dw.T, Dw)
                self.proj[f] = eye - Dw.T @ M
                viol[f, on] = M
            else:
                self.proj[f] = eye
            viol[f, ~on] = -(self.D[~on] @ self.proj[f])
        self._faces = F
        self._viol = viol.reshape(F * m, d).T.copy()

    @staticmethod
    @functools.lru_cache(maxsize=256)
    def for_cone(cone: ConeSpec) -> "ConeProjector":
        return ConeProjector(cone)

    def project(self, G: np.ndarray) -> np.ndarray:
        """Project each row of ``G``."""
        G = np.atleast_2d(np.asarray(G, dtype=float))
        if G.shape[1] != self.cone.dim:
            raise ValueError(f"rows of length {G.shape[1]} do not match cone dim {self.cone.dim}")
        if self.D.shape[0] == 0:
            return G.copy()
        if not self.enumerate:
            return np.array([cone_project(g, self.cone) for g in G])
        m = self.D.shape[0]
        viol = (G @ self._viol).reshape(G.shape[0], self._faces, m).max(axis=2)
        best = np.argmin(viol, axis=1)
        return np.einsum("bij,bj->bi", self.proj[best], G)

    def sq_distances(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Projections of the rows of ``G`` and their squared distances."""
        H = self.project(G)
        return H, np.sum((G - H) ** 2, axis=1)


# ---------------------------------------------------------------------------
# convex least squares over pmfs


@dataclass(frozen=True, eq=False)
class ConvexLseResult:
    """Projection of a pmf onto the convex pmfs.

    ``fit`` equals ``sum_k weights[k] T_k``.  ``data_support_end`` is the
    support end of the projected pmf.
    """

    fit: Pmf
    weights: TriangularMixture
    sq_distance: float
    kkt_residual: float
    data_support_end: int

    def fit_delta(self, x: int) -> float:
        """``delta(fit, x)`` evaluated on the fitted masses.

        Slope changes that vanish in exact arithmetic come out as roundoff
        of either sign; callers comparing against a threshold see that.
        """
        return delta(self.fit, x)


def _lse_gradients(p: np.ndarray, T: np.ndarray, pi: np.ndarray) -> np.ndarray:
    r = p - T @ pi
    return T.T @ r - r @ (T @ pi)


def lse_kkt_residual(p: Pmf | np.ndarray, weights: np.ndarray, K: int | None = None) -> float:
    """Largest violation of ``<p - q, T_k - q> <= 0`` (equality on the support).

    ``q = sum_k weights[k-1] T_k``; the check runs over ``k = 1..K``.
    """
    pv = p.mass if isinstance(p, Pmf) else np.asarray(p, dtype=float)
    w = np.asarray(weights, dtype=float)
    K = max(K or 0, w.size, pv.size + 1)
    T = triangular_basis(K)
    pi = np.zeros(K)
    pi[: w.size] = w
    pp = np.zeros(K)
    pp[: pv.size] = pv
    grad = _lse_gradients(pp, T, pi)
    res = max(0.0, float(grad.max()))
    on = pi > 0
    if on.any():
        res = max(res, float(np.abs(grad[on]).max()))
    res = max(res, float(-pi.min()), abs(float(pi.sum()) - 1.0))
    return res


def _simplex_lsq(p: np.ndarray, T: np.ndarray, pi: np.ndarray, tol: float) -> np.ndarray:
    """Support reduction for ``min ||p - T pi||^2`` over the simplex."""
    K = T.shape[1]
    gram = T.T @ T
    tp = T.T @ p
    for _ in range(50 * K + 50):
        grad = _lse_gradients(p, T, pi)
        k = int(np.argmax(grad))
        if grad[k] <= tol:
            return pi
        support = [int(j) for j in np.flatnonzero(pi > 0)]
        if k in support:
            return pi  # roundoff: no new direction left
        support.append(k)
        while True:
            s = len(support)
            A = np.zeros((s + 1, s + 1))
            A[:s, :s] = gram[np.ix_(support, support)]
            A[:s, s] = A[s, :s] = 1.0
            w = np.linalg.solve(A, np.append(tp[support], 1.0))[:s]
            if np.all(w > 0):
                pi = np.zeros(K)
                pi[support] = w
                break
            cur = pi[support]
            neg = w <= 0
            if support[-1] == k and neg[-1] and cur[-1] == 0.0:
                return pi  # the new atom is not a descent direction after all
            ratio = np.full(s, np.inf)
            ratio[neg] = cur[neg] / (cur[neg] - w[neg])
            drop = int(np.argmin(ratio))
            new = cur + ratio[drop] * (w - cur)
            keep = new > 0
            keep[drop] = False
            pi = np.zeros(K)
            pi[np.asarray(support)[keep]] = new[keep]
            pi /= pi.sum()
            support = [j for j, kp in zip(support, keep) if kp]
    raise RuntimeError("convex LSE did not converge")


def convex_lse(p: Pmf, window: int | None = None) -> ConvexLseResult:
    """Closest convex pmf to ``p`` in squared Euclidean distance.

    Mixture components ``T_1, ..., T_K`` are searched with
    ``K = S + 2`` by default, so the fit may put mass on ``S + 1``.  If the
    optimality check fails on ``k`` up to ``2K`` the window doubles.
    A pmf that is already convex (to roundoff) is returned unchanged.
    """
    S = p.support_end
    if is_convex(p, tol=1e-15):
        weights = pmf_to_mixture(p, tol=1e-15)
        kkt = lse_kkt_residual(p, weights.weights)
        return ConvexLseResult(
            fit=p, weights=weights, sq_distance=0.0, kkt_residual=kkt, data_support_end=S
        )
    K = max(window or S + 2, S + 2)
    pi = None
    while True:
        T = triangular_basis(K)
        pp = p.padded(K)
        start = np.zeros(K)
        if pi is not None:
            start[: pi.size] = pi
        else:
            # best single triangle
            start[int(np.argmin(np.sum((T - pp[:, None]) ** 2, axis=0)))] = 1.0
        pi = _simplex_lsq(pp, T, start, tol=1e-14)
        T2 = triangular_basis(2 * K)
        full = np.zeros(2 * K)
        full[:K] = pi
        if _lse_gradients(p.padded(2 * K), T2, full).max() <= KKT_TOL:
            break
        K *= 2
    pi = np.where(pi > 0, pi, 0.0)
    pi /= pi.sum()
    last = int(np.flatnonzero(pi)[-1]) + 1
    weights = TriangularMixture(pi[:last])
    q = triangular_basis(last) @ weights.weights
    fit = Pmf(q)
    L = max(fit.mass.size, p.mass.size)
    sq = float(np.sum((p.padded(L) - fit.padded(L)) ** 2))
    kkt = lse_kkt_residual(p, weights.weights, K=2 * K)
    return ConvexLseResult(
        fit=fit, weights=weights, sq_distance=sq, kkt_residual=kkt, data_support_end=S
    )


# ---------------------------------------------------------------------------
# Gaussian limit


@dataclass(frozen=True, eq=False)
class DispersionMatrix:
    """Multinomial covariance ``1{i=j} p(i) - p(i) p(j)`` on ``0..dim-1``."""

    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class GaussianFactor:
    """Matrix ``L`` with ``L @ L.T`` equal to a dispersion matrix."""

    factor: np.ndarray

    @property
    def dim(self) -> int:
        return self.factor.shape[0]


def dispersion_matrix(p: Pmf, dim: int) -> DispersionMatrix:
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    v = p.padded(dim)
    m = np.diag(v) - np.outer(v, v)
    m.setflags(write=False)
    return DispersionMatrix(m)


def factor_psd(m: DispersionMatrix | np.ndarray) -> GaussianFactor:
    """Symmetric square root; roundoff-negative eigenvalues become zero."""
    a = m.entries if isinstance(m, DispersionMatrix) else np.asarray(m, dtype=float)
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    if vals.size and vals.min() < -_NOT_PSD:
        raise NotPSDError(f"smallest eigenvalue {vals.min():.3g}")
    vals = np.where(vals > PSD_TOL * max(1.0, vals.max(initial=0.0)), vals, 0.0)
    L = (vecs * np.sqrt(vals)) @ vecs.T
    return GaussianFactor(L)


def sample_gaussian(f: GaussianFactor, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """``L z`` with ``z`` standard normal; with ``size``, one draw per row."""
    if size is None:
        return f.factor @ rng.standard_normal(f.dim)
    return rng.standard_normal((size, f.dim)) @ f.factor.T


def rank_diagnostic(p: Pmf, rel_tol: float = 1e-10) -> int:
    """Numerical rank of the covariance of ``(delta g(1), ..., delta g(S))``.

    ``g`` is the Gaussian limit with ``g(S + 1) = 0``, so the covariance is
    ``B Sigma B^T`` where ``Sigma`` is the dispersion on ``0..S`` and ``B``
    maps ``g(0..S)`` to the second differences.  Full rank ``S`` holds
    whenever ``p`` is positive on its support.
    """
    S = p.support_end
    if S < 1:
        raise ValueError("rank diagnostic needs support_end >= 1")
    B = second_difference_matrix(S + 2, range(1, S + 1))[:, : S + 1]
    V = B @ dispersion_matrix(p, S + 1).entries @ B.T
    ev = np.linalg.eigvalsh(V)
    return int(np.sum(ev > rel_tol * ev.max()))
