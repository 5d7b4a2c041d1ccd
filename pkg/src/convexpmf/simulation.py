"""Monte Carlo estimates of rejection probabilities.

A plan crosses pmfs, sample sizes and test methods.  All methods for one
``(pmf, n)`` pair see the same samples and the same Gaussian draws
(common random numbers), so method comparisons within a row are paired.
Seeds are derived from the master seed and the ``(pmf, n)`` coordinates,
which makes every cell reproducible on its own.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .calibration import (
    CalibrationConfig,
    DegenerateSupportError,
    VnRule,
    calibrate_draws,
    calibration_draws,
)
from .pmf import Pmf, benchmark_pmfs, empirical_pmf, sample_from
from .projection import KKT_TOL, convex_lse

__all__ = [
    "Method",
    "ExperimentPlan",
    "Cell",
    "SimTable",
    "PUBLISHED_TABLE_1",
    "PUBLISHED_TABLE_2",
    "preset",
    "run_cell",
    "run_plan",
    "emit_table",
    "parse_csv",
    "published_tolerance",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = ["pmf", "n", "method", "vn", "rate", "se", "N"]
BENCHMARK_SIZES = (500, 5000, 50000)
BENCHMARK_PMFS = ("p0_1", "p0_2", "p1_1", "p1_2")

# Published rejection rates, N = 500 replications, B = 1000, alpha = 0.05.
PUBLISHED_TABLE_1 = {
    ("p0_1", 500): {"zero": 0.226, "loglog": 0.106, "quarter": 0.054},
    ("p0_1", 5000): {"zero": 0.286, "loglog": 0.092, "quarter": 0.062},
    ("p0_1", 50000): {"zero": 0.256, "loglog": 0.086, "quarter": 0.050},
    ("p0_2", 500): {"zero": 0.190, "loglog": 0.046, "quarter": 0.020},
    ("p0_2", 5000): {"zero": 0.310, "loglog": 0.066, "quarter": 0.018},
    ("p0_2", 50000): {"zero": 0.344, "loglog": 0.054, "quarter": 0.016},
    ("p1_1", 500): {"zero": 1.0, "loglog": 1.0, "quarter": 1.0},
    ("p1_1", 5000): {"zero": 1.0, "loglog": 1.0, "quarter": 1.0},
    ("p1_1", 50000): {"zero": 1.0, "loglog": 1.0, "quarter": 1.0},
    ("p1_2", 500): {"zero": 0.234, "loglog": 0.102, "quarter": 0.038},
    ("p1_2", 5000): {"zero": 0.354, "loglog": 0.166, "quarter": 0.082},
    ("p1_2", 50000): {"zero": 0.932, "loglog": 0.816, "quarter": 0.630},
}
PUBLISHED_TABLE_2 = {
    ("p0_1", 500): 0.048, ("p0_1", 5000): 0.044, ("p0_1", 50000): 0.058,
    ("p0_2", 500): 0.014, ("p0_2", 5000): 0.032, ("p0_2", 50000): 0.020,
    ("p1_1", 500): 1.0, ("p1_1", 5000): 1.0, ("p1_1", 50000): 1.0,
    ("p1_2", 500): 0.042, ("p1_2", 5000): 0.060, ("p1_2", 50000): 0.678,
}
PUBLISHED_N = 500


@dataclass(frozen=True)
class Method:
    """A test method as it appears in a table column."""

    name: str
    vn: VnRule | None = None

    def __post_init__(self) -> None:
        if self.name not in ("knot", "lfh"):
            raise ValueError(f"unknown method {self.name!r}")
        if self.name == "knot" and self.vn is None:
            object.__setattr__(self, "vn", VnRule("quarter"))
        if self.name == "lfh" and self.vn is not None:
            raise ValueError("the lfh method takes no v_n rule")

    @property
    def vn_label(self) -> str:
        return self.vn.label if self.vn is not None else ""

    def config(self, alpha: float, B: int) -> CalibrationConfig:
        return CalibrationConfig(alpha=alpha, B=B, method=self.name, vn=self.vn)


@dataclass
class ExperimentPlan:
    pmfs: dict[str, Pmf]
    sample_sizes: list[int]
    methods: list[Method]
    N: int = 500
    B: int = 1000
    alpha: float = 0.05
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if any(n < 3 for n in self.sample_sizes):
            raise ValueError("sample sizes must be >= 3")
        if not self.pmfs or not self.sample_sizes or not self.methods:
            raise ValueError("plan needs at least one pmf, sample size and method")

    def to_dict(self) -> dict[str, Any]:
        bench = benchmark_pmfs()
        pmfs: list[Any] = []
        for name, p in self.pmfs.items():
            if name in bench and bench[name] == p:
                pmfs.append(name)
            else:
                pmfs.append({"name": name, "mass": p.mass.tolist()})
        return {
            "pmfs": pmfs,
            "sample_sizes": list(self.sample_sizes),
            "methods": [
                {"method": m.name, **({"vn": m.vn_label} if m.vn else {})}
                for m in self.methods
            ],
            "N": self.N,
            "B": self.B,
            "alpha": self.alpha,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentPlan":
        """Build a plan from a parsed config document (see ``to_dict``)."""
        bench = benchmark_pmfs()
        pmfs: dict[str, Pmf] = {}
        for entry in d["pmfs"]:
            if isinstance(entry, str):
                if entry not in bench:
                    raise ValueError(f"unknown benchmark pmf {entry!r}")
                pmfs[entry] = bench[entry]
            else:
                pmfs[str(entry["name"])] = Pmf(entry["mass"])
        methods = []
        for m in d["methods"]:
            if isinstance(m, str):
                m = {"method": m}
            vn = VnRule.parse(str(m["vn"])) if m.get("vn") not in (None, "") else None
            methods.append(Method(m["method"], vn))
        return cls(
            pmfs=pmfs,
            sample_sizes=[int(n) for n in d["sample_sizes"]],
            methods=methods,
            N=int(d.get("N", 500)),
            B=int(d.get("B", 1000)),
            alpha=float(d.get("alpha", 0.05)),
            master_seed=int(d.get("master_seed", 0)),
        )


@dataclass
class Cell:
    rejections: int
    N: int
    error: str | None = None
    kkt_violations: int = 0
    max_kkt_residual: float = 0.0

    @property
    def rate(self) -> float:
        return self.rejections / self.N if self.error is None else math.nan

    @property
    def se(self) -> float:
        r = self.rate
        return math.sqrt(r * (1.0 - r) / self.N)


CellKey = tuple[str, int, str, str]


@dataclass
class SimTable:
    """Rejection counts keyed by ``(pmf, n, method, vn_label)``."""

    cells: dict[CellKey, Cell] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def rate(self, pmf: str, n: int, method: str, vn: str = "") -> float:
        return self.cells[(pmf, n, method, vn)].rate

    @property
    def kkt_violations(self) -> int:
        return sum(c.kkt_violations for c in self.cells.values())

    def same_cells(self, other: "SimTable") -> bool:
        if self.cells.keys() != other.cells.keys():
            return False
        return all(
            (a.rejections, a.N, a.error is None) == (b.rejections, b.N, b.error is None)
            for a, b in ((self.cells[k], other.cells[k]) for k in self.cells)
        )


def preset(name: str, N: int = 500, B: int = 1000, seed: int = 0) -> ExperimentPlan:
    """``table1`` (knot test, three v_n rules), ``table2`` (lfh) or ``both``."""
    knot = [Method("knot", VnRule(k)) for k in ("zero", "loglog", "quarter")]
    lfh = [Method("lfh")]
    methods = {"table1": knot, "table2": lfh, "both": knot + lfh}
    if name not in methods:
        raise ValueError(f"unknown preset {name!r}; choose table1, table2 or both")
    bench = benchmark_pmfs()
    return ExperimentPlan(
        pmfs={k: bench[k] for k in BENCHMARK_PMFS},
        sample_sizes=list(BENCHMARK_SIZES),
        methods=methods[name],
        N=N,
        B=B,
        alpha=0.05,
        master_seed=seed,
    )


def cell_seed(master_seed: int, pmf_name: str, n: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(zlib.crc32(pmf_name.encode()), n))
    return int(ss.generate_state(1, np.uint64)[0])


def _replication_seeds(seed: int, r: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence(seed, spawn_key=(r,)).generate_state(2, np.uint64)
    return int(a), int(b)


def run_methods(
    pmf: Pmf,
    n: int,
    methods: Sequence[Method],
    N: int,
    seed: int,
    alpha: float = 0.05,
    B: int = 1000,
) -> list[Cell]:
    """Rejection counts for several methods sharing samples and draws."""
    cfgs = [m.config(alpha, B) for m in methods]
    cells = [Cell(0, N) for _ in methods]
    for r in range(N):
        sample_seed, draw_seed = _replication_seeds(seed, r)
        s = sample_from(pmf, n, np.random.default_rng(sample_seed))
        pn = empirical_pmf(s)
        if pn.support_end == 0:
            raise DegenerateSupportError(f"replication {r} observed a single value")
        lse = convex_lse(pn)
        draws = calibration_draws(pn, B, draw_seed)
        stat = n * lse.sq_distance
        for cell, cfg in zip(cells, cfgs):
            rep = calibrate_draws(stat, lse, n, draws, cfg, seed=draw_seed)
            cell.rejections += rep.reject
            cell.max_kkt_residual = max(cell.max_kkt_residual, rep.kkt_residual)
            if rep.kkt_residual > KKT_TOL:
                cell.kkt_violations += 1
    return cells


def run_cell(
    pmf: Pmf, n: int, cfg: CalibrationConfig, N: int, seed: int
) -> tuple[float, float]:
    """Rejection rate and its binomial standard error over ``N`` replications."""
    cell = run_methods(pmf, n, [Method(cfg.method, cfg.vn)], N, seed, cfg.alpha, cfg.B)[0]
    return cell.rate, cell.se


def run_plan(plan: ExperimentPlan) -> SimTable:
    table = SimTable(metadata={"plan": plan.to_dict()})
    start = time.perf_counter()
    for name, pmf in plan.pmfs.items():
        for n in plan.sample_sizes:
            seed = cell_seed(plan.master_seed, name, n)
            t0 = time.perf_counter()
            try:
                cells = run_methods(pmf, n, plan.methods, plan.N, seed, plan.alpha, plan.B)
            except Exception as exc:  # recorded per cell, the run continues
                log.warning("cell %s n=%d failed: %s", name, n, exc)
                cells = [Cell(0, plan.N, error=f"{type(exc).__name__}: {exc}") for _ in plan.methods]
            for m, c in zip(plan.methods, cells):
                table.cells[(name, n, m.name, m.vn_label)] = c
            log.info("%s n=%d done in %.1fs", name, n, time.perf_counter() - t0)
    table.metadata["wall_clock_seconds"] = time.perf_counter() - start
    table.metadata["kkt_violations"] = table.kkt_violations
    return table


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_table(t: SimTable, format: str = "csv") -> bytes:
    """Serialize a table as ``csv``, ``json`` or table-style ``text``."""
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for (pmf, n, method, vn), c in t.cells.items():
            w.writerow([pmf, n, method, vn, _fmt(c.rate), _fmt(c.se), c.N])
        return buf.getvalue().encode()
    if format == "json":
        doc = {
            "metadata": t.metadata,
            "cells": [
                {
                    "pmf": pmf, "n": n, "method": method, "vn": vn,
                    "rate": None if c.error else c.rate,
                    "se": None if c.error else c.se,
                    "N": c.N, "rejections": c.rejections, "error": c.error,
                    "kkt_violations": c.kkt_violations,
                    "max_kkt_residual": c.max_kkt_residual,
                }
                for (pmf, n, method, vn), c in t.cells.items()
            ],
        }
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()
    if format == "text":
        return _text_table(t).encode()
    raise ValueError(f"unknown format {format!r}; choose csv, json or text")


def _text_table(t: SimTable) -> str:
    pmfs = list(dict.fromkeys(k[0] for k in t.cells))
    sizes = sorted({k[1] for k in t.cells})
    lines = []
    for method in dict.fromkeys(k[2] for k in t.cells):
        vns = list(dict.fromkeys(k[3] for k in t.cells if k[2] == method))
        cols = [(n, vn) for n in sizes for vn in vns]
        title = "knot test, v_n rules per sample size" if method == "knot" else "least favorable hypothesis test"
        lines.append(title)
        head = ["pmf".ljust(6)] + [
            (f"n={n}" + (f" {vn}" if vn else "")).rjust(16) for n, vn in cols
        ]
        lines.append(" ".join(head))
        for p in pmfs:
            row = [p.ljust(6)]
            for n, vn in cols:
                c = t.cells.get((p, n, method, vn))
                row.append(("-" if c is None else "error" if c.error else f"{c.rate:.3f}").rjust(16))
            lines.append(" ".join(row))
        lines.append("")
    return "\n".join(lines)


def parse_csv(data: bytes | str) -> SimTable:
    """Inverse of ``emit_table(t, "csv")`` for the cell contents."""
    text = data.decode() if isinstance(data, bytes) else data
    rows = list(csv.DictReader(io.StringIO(text)))
    cells: dict[CellKey, Cell] = {}
    for row in rows:
        N = int(row["N"])
        rate = float(row["rate"])
        key = (row["pmf"], int(row["n"]), row["method"], row["vn"])
        if math.isnan(rate):
            cells[key] = Cell(0, N, error="error")
        else:
            cells[key] = Cell(int(round(rate * N)), N)
    return SimTable(cells=cells)


def published_tolerance(rate: float, published: float, N: int, published_N: int = PUBLISHED_N) -> float:
    """Three combined binomial standard errors of ours and the published estimate."""
    return 3.0 * math.sqrt(rate * (1 - rate) / N + published * (1 - published) / published_N)


def published_value(pmf: str, n: int, method: str, vn: str = "") -> float:
    if method == "lfh":
        return PUBLISHED_TABLE_2[(pmf, n)]
    return PUBLISHED_TABLE_1[(pmf, n)][vn]


def compare_to_published(t: SimTable) -> Iterable[tuple[CellKey, float, float, float, bool]]:
    """Yield ``(key, ours, published, tolerance, ok)`` for every published cell."""
    for key, c in t.cells.items():
        pmf, n, method, vn = key
        try:
            ref = published_value(pmf, n, method, vn)
        except KeyError:
            continue
        tol = published_tolerance(c.rate, ref, c.N)
        yield key, c.rate, ref, tol, abs(c.rate - ref) <= tol
