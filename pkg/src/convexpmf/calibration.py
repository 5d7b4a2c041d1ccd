"""Convexity tests for a pmf and their Monte Carlo calibration.

The statistic is ``n * ||p_n - p_hat_n||^2`` with ``p_hat_n`` the convex
least-squares fit.  Its null law is approximated by projecting draws
``g ~ N(0, Gamma_n)`` onto a cone of second-difference constraints and
recording ``||g - proj(g)||^2``:

* ``method="knot"`` constrains only the positions ``x`` where the fitted
  slope change ``delta(p_hat_n, x)`` is at most ``v_n``;
* ``method="lfh"`` constrains every position (least favorable case,
  conservative unless the pmf is triangular).

Both sides of the comparison are on the squared scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Union

import numpy as np

from .pmf import Pmf, Sample, empirical_pmf
from .projection import (
    KKT_TOL,
    ConeProjector,
    ConeSpec,
    ConvexLseResult,
    cone_kkt_residual,
    convex_lse,
    dispersion_matrix,
    factor_psd,
)

__all__ = [
    "DegenerateSupportError",
    "VnRule",
    "CalibrationConfig",
    "TestReport",
    "vn_value",
    "test_statistic",
    "knot_constraint_set",
    "calibration_draws",
    "calibration_cone",
    "calibrate",
    "calibrate_draws",
    "empirical_quantile",
    "mc_p_value",
]

METHODS = ("knot", "lfh")


class DegenerateSupportError(ValueError):
    """The sample has a single observed value; the test is undefined."""


@dataclass(frozen=True)
class VnRule:
    """Threshold sequence ``v_n`` separating estimated knots from non-knots.

    ``kind`` is ``"zero"``, ``"loglog"`` (``sqrt(log log n) / sqrt(n)``),
    ``"quarter"`` (``n ** -0.25``) or ``"custom"``, in which case ``value``
    is a nonnegative constant or a callable of ``n``.
    """

    kind: str = "quarter"
    value: Union[float, Callable[[int], float], None] = None

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "loglog", "quarter", "custom"):
            raise ValueError(f"unknown v_n rule {self.kind!r}")
        if self.kind == "custom":
            if self.value is None:
                raise ValueError("custom v_n rule needs a value")
            if not callable(self.value) and not self.value >= 0:
                raise ValueError(f"v_n constant must be >= 0, got {self.value!r}")

    @classmethod
    def parse(cls, text: str) -> "VnRule":
        """``zero``, ``loglog``, ``quarter`` or a nonnegative number."""
        t = text.strip().lower()
        if t in ("zero", "loglog", "quarter"):
            return cls(t)
        try:
            v = float(t)
        except ValueError:
            raise ValueError(f"cannot parse v_n rule {text!r}") from None
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"v_n constant must be finite and >= 0, got {text!r}")
        return cls("custom", v)

    @property
    def label(self) -> str:
        if self.kind != "custom":
            return self.kind
        if callable(self.value):
            return getattr(self.value, "__name__", "custom")
        return repr(float(self.value))

    def __call__(self, n: int) -> float:
        return vn_value(self, n)


def vn_value(rule: VnRule, n: int) -> float:
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    if rule.kind == "zero":
        return 0.0
    if rule.kind == "quarter":
        return n ** -0.25
    if rule.kind == "loglog":
        if n < 3:
            raise ValueError(f"loglog v_n rule needs n >= 3, got {n}")
        return math.sqrt(math.log(math.log(n)) / n)
    v = rule.value(n) if callable(rule.value) else rule.value
    if not v >= 0:
        raise ValueError(f"v_n evaluated to {v!r}")
    return float(v)


@dataclass(frozen=True)
class CalibrationConfig:
    alpha: float = 0.05
    B: int = 1000
    method: str = "lfh"
    vn: VnRule | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"B must be a positive integer, got {self.B!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "knot" and self.vn is None:
            object.__setattr__(self, "vn", VnRule("quarter"))
        if self.seed is not None and not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit nonnegative integer")


@dataclass(frozen=True, eq=False)
class TestReport:
    """Outcome of one calibrated convexity test."""

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    critical_value: float
    p_value: float
    reject: bool
    n: int
    s_n: int
    method: str
    alpha: float
    B: int
    vn: str | None
    vn_value: float | None
    constrained_positions: tuple[int, ...]
    seed: int
    kkt_residual: float
    mc_statistics: np.ndarray = field(repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "n": self.n,
            "s_n": self.s_n,
            "method": self.method,
            "alpha": self.alpha,
            "B": self.B,
            "vn": self.vn,
            "vn_value": self.vn_value,
            "constrained_positions": list(self.constrained_positions),
            "seed": self.seed,
            "kkt_residual": self.kkt_residual,
            "mc_statistics": self.mc_statistics.tolist(),
        }


def test_statistic(s: Sample) -> tuple[float, ConvexLseResult]:
    """``n`` times the squared distance from ``p_n`` to its convex fit."""
    lse = convex_lse(empirical_pmf(s))
    return s.n * lse.sq_distance, lse


test_statistic.__test__ = False  # type: ignore[attr-defined]


def knot_constraint_set(
    lse: ConvexLseResult, vn_value: float, s_n: int | None = None
) -> ConeSpec:
    """Cone on ``{0, ..., S_n + 1}`` constraining ``x`` with ``delta(p_hat, x) <= v_n``."""
    if not vn_value >= 0:
        raise ValueError(f"v_n must be >= 0, got {vn_value!r}")
    s_n = lse.data_support_end if s_n is None else s_n
    pos = [x for x in range(1, s_n + 1) if lse.fit_delta(x) <= vn_value]
    return ConeSpec(s_n + 2, tuple(pos))


def calibration_draws(pn: Pmf, B: int, seed: int | np.random.SeedSequence) -> np.ndarray:
    """``B`` rows drawn from ``N(0, Gamma_n)`` on ``{0, ..., S_n + 1}``.

    The standard normal block is generated in one call so row ``b``
    depends only on the seed, not on how rows are consumed afterwards.
    """
    dim = pn.support_end + 2
    L = factor_psd(dispersion_matrix(pn, dim)).factor
    Z = np.random.default_rng(seed).standard_normal((B, dim))
    return Z @ L.T


def calibration_cone(
    lse: ConvexLseResult, n: int, method: str, vn: VnRule | None = None
) -> tuple[ConeSpec, float | None]:
    s_n = lse.data_support_end
    if method == "lfh":
        return ConeSpec.full(s_n + 2), None
    if method == "knot":
        v = vn_value(vn or VnRule("quarter"), n)
        return knot_constraint_set(lse, v, s_n), v
    raise ValueError(f"unknown method {method!r}")


def empirical_quantile(sorted_values: np.ndarray, level: float) -> float:
    """The ``ceil(level * B)``-th order statistic (1-based)."""
    B = sorted_values.size
    k = math.ceil(round(level * B, 9))
    return float(sorted_values[min(max(k, 1), B) - 1])


def mc_p_value(statistic: float, sorted_values: np.ndarray) -> float:
    """``(1 + #{b : T_b >= statistic}) / (B + 1)``."""
    B = sorted_values.size
    above = B - int(np.searchsorted(sorted_values, statistic, side="left"))
    return (1 + above) / (B + 1)


def calibrate_draws(
    statistic: float,
    lse: ConvexLseResult,
    n: int,
    draws: np.ndarray,
    cfg: CalibrationConfig,
    seed: int = 0,
) -> TestReport:
    """Finish a test from precomputed Gaussian draws.

    Lets several methods share one sample and one set of draws.
    """
    cone, v = calibration_cone(lse, n, cfg.method, cfg.vn)
    proj = ConeProjector.for_cone(cone)
    H = proj.project(draws)
    mc = np.sort(np.sum((draws - H) ** 2, axis=1))
    kkt = max(float(cone_kkt_residual(draws, H, cone).max()), lse.kkt_residual)
    crit = empirical_quantile(mc, 1.0 - cfg.alpha)
    return TestReport(
        statistic=float(statistic),
        critical_value=crit,
        p_value=mc_p_value(statistic, mc),
        reject=bool(statistic > crit),
        n=n,
        s_n=lse.data_support_end,
        method=cfg.method,
        alpha=cfg.alpha,
        B=int(cfg.B),
        vn=cfg.vn.label if cfg.method == "knot" else None,
        vn_value=v,
        constrained_positions=cone.constrained,
        seed=seed,
        kkt_residual=kkt,
        mc_statistics=mc,
    )


def calibrate(s: Sample, cfg: CalibrationConfig) -> TestReport:
    """Run one convexity test on a sample.

    Raises ``DegenerateSupportError`` when every observation is 0.
    """
    if s.max == 0:
        raise DegenerateSupportError("all observations equal 0; a point mass is convex")
    seed = cfg.seed
    if seed is None:
        seed = int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
    pn = empirical_pmf(s)
    lse = convex_lse(pn)
    draws = calibration_draws(pn, cfg.B, seed)
    report = calibrate_draws(s.n * lse.sq_distance, lse, s.n, draws, cfg, seed=seed)
    if report.kkt_residual > KKT_TOL:
        raise RuntimeError(f"projection optimality check failed ({report.kkt_residual:.3g})")
    return report

