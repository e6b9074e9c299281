"""Convergence experiments on coupled particle systems, and log-log rate fits."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .drivers import DriverBundle, SeedPlan, couple
from .measure import EmpiricalMeasure, wasserstein_p
from .model import InitialLaw, MarkMeasure, ModelSpec
from .solver import SimGrid, pool_law_flow, simulate_interacting, simulate_limit_coupled

log = logging.getLogger(__name__)

POOL_FACTOR = 64
_NO_MARKS = MarkMeasure.zero()


class RateFitError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorSample:
    param: float
    R: int
    estimate: float
    se: float
    p: float = 2

    def __post_init__(self):
        if self.R < 2:
            raise ValueError("an error sample needs R >= 2 replications")
        if self.estimate < 0 or self.se < 0:
            raise ValueError("estimate and standard error must be non-negative")

    @classmethod
    def from_replications(cls, param: float, values: Sequence[float], p: float) -> ErrorSample:
        v = np.asarray(values, dtype=np.float64)
        if v.size < 2:
            raise ValueError("R=1 leaves the standard error undefined; use R >= 2")
        return cls(float(param), int(v.size), float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), p)


@dataclass
class RateReport:
    samples: list[ErrorSample]
    slope: float
    intercept: float
    residual: float
    theory_slope: float | None = None
    theory_note: str = ""
    notes: list[str] = field(default_factory=list)

    def to_csv(self, path) -> Path:
        return write_samples_csv(path, self.samples)

    def manifest_line(self, **extra) -> str:
        payload = {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "theory_slope": self.theory_slope,
            "theory_note": self.theory_note,
            "notes": self.notes,
            **extra,
        }
        return json.dumps(payload, sort_keys=True)


def write_samples_csv(path, samples: Sequence[ErrorSample]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "estimate", "se", "R"])
        for s in samples:
            w.writerow([repr(float(s.param)), repr(float(s.estimate)), repr(float(s.se)), int(s.R)])
    return path


def fit_rate(samples: Sequence[ErrorSample], theory_slope: float | None = None, theory_note: str = "") -> RateReport:
    """Least squares of log(estimate) on log(param); zero estimates are dropped."""
    kept, notes = [], []
    for s in samples:
        if s.estimate > 0:
            kept.append(s)
        else:
            notes.append(f"excluded param={s.param:g}: zero estimate")
    if len(kept) < 3:
        raise RateFitError(f"a rate fit needs at least 3 positive estimates, got {len(kept)}")
    x = np.log([s.param for s in kept])
    y = np.log([s.estimate for s in kept])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return RateReport(list(samples), float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))),
                      theory_slope, theory_note, notes)


def _replicate(fn: Callable[[int], object], R: int, threads: int) -> list:
    # results are gathered in replication order whatever the schedule
    if threads <= 1 or R <= 1:
        return [fn(r) for r in range(R)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(R)))


def _sup_gap(a: np.ndarray, b: np.ndarray, p: float) -> float:
    """Particle average of sup over the recorded times of |a - b|^p."""
    return float(np.mean(np.max(np.abs(a - b), axis=0) ** p))


def _check_p(p: float) -> None:
    if p not in (1, 2):
        raise ValueError("error moments are only defined for p in {1, 2}")


def chaos_replicate(model: ModelSpec, N: int, grid: SimGrid, seedplan: SeedPlan, initial: InitialLaw,
                    r: int, p: float = 2, pool_size: int | None = None, tag: str = "chaos") -> float:
    M = pool_size or POOL_FACTOR * N
    bundle = DriverBundle.for_model(seedplan, f"{tag}/N={N}/rep={r}", grid.T, model, initial)
    pool = DriverBundle.for_model(seedplan, f"{tag}/N={N}/rep={r}/pool", grid.T, model, initial)
    law = pool_law_flow(model, M, grid, pool)
    drivers = couple(bundle, [("interacting", grid.T), ("limit", grid.T)])
    inter = simulate_interacting(model, N, grid, drivers, "continuous")
    limit = simulate_limit_coupled(model, N, grid, drivers, law)
    return _sup_gap(inter.positions, limit.positions, p)


def chaos_error(model: ModelSpec, N: int, grid_fine: SimGrid, R: int, p: float, seedplan: SeedPlan,
                initial: InitialLaw | None = None, *, pool_size: int | None = None,
                threads: int = 1) -> ErrorSample:
    """E sup_t |X^{N,i} - X^i|^p for the interacting system against the limit.

    Both systems share drivers particle by particle; the limit system reads
    its law from an independent pool of ``64 N`` interacting particles.
    """
    _check_p(p)
    if R < 2:
        raise ValueError("R=1 leaves the standard error undefined; use R >= 2")
    initial = initial or InitialLaw()
    vals = _replicate(lambda r: chaos_replicate(model, N, grid_fine, seedplan, initial, r, p, pool_size), R, threads)
    return ErrorSample.from_replications(N, vals, p)


def _nesting(h_list: Sequence[float], h_ref: float) -> list[int]:
    factors = []
    for h in h_list:
        ratio = h / h_ref
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > 1e-9 * ratio or k & (k - 1):
            raise ValueError(f"h={h:g} is not a dyadic multiple of h_ref={h_ref:g}")
        factors.append(k)
    if min(factors) < 4:
        log.warning("h_ref=%g is not below min(h)/4; the reference error is not negligible", h_ref)
    return factors


def euler_error(model: ModelSpec, N: int, h_list: Sequence[float], h_ref: float, R: int, p: float,
                seedplan: SeedPlan, initial: InitialLaw | None = None, *, T: float = 1.0,
                ref_mode: str = "continuous", threads: int = 1) -> list[ErrorSample]:
    """E sup_t |X^{h,N,i} - X^{ref,N,i}|^p for each step h.

    Each frozen scheme is written out on the reference grid, so the sup runs
    over every reference step.
    """
    _check_p(p)
    if R < 2:
        raise ValueError("R=1 leaves the standard error undefined; use R >= 2")
    _nesting(h_list, h_ref)
    initial = initial or InitialLaw()
    ref_grid = SimGrid(T, h_ref)

    def one(r: int) -> list[float]:
        bundle = DriverBundle.for_model(seedplan, f"euler/N={N}/rep={r}", T, model, initial)
        drivers = couple(bundle, [ref_grid] + [SimGrid(T, h) for h in h_list])
        ref = simulate_interacting(model, N, ref_grid, drivers, ref_mode)
        out = []
        for h in h_list:
            approx = simulate_interacting(model, N, SimGrid(T, h), drivers, "frozen", resolution=h_ref)
            out.append(_sup_gap(approx.positions, ref.positions, p))
        return out

    per_rep = np.array(_replicate(one, R, threads))
    return [ErrorSample.from_replications(h, per_rep[:, j], p) for j, h in enumerate(h_list)]


def fg_samples(initial: InitialLaw, N_list: Sequence[int], R: int, seedplan: SeedPlan,
               threads: int = 1) -> list[ErrorSample]:
    """Estimates of E W2(mu, mu_N)^2 from pairs of independent size-N clouds.

    For independent clouds the squared distance between them is, to leading
    order, twice the squared distance of either to the law, hence the half.
    """
    if R < 2:
        raise ValueError("R=1 leaves the standard error undefined; use R >= 2")
    out = []
    for N in N_list:
        def one(r: int, N=N) -> float:
            a = DriverBundle(seedplan, f"fg/N={N}/rep={r}/a", 1.0, _NO_MARKS, _NO_MARKS, initial)
            b = DriverBundle(seedplan, f"fg/N={N}/rep={r}/b", 1.0, _NO_MARKS, _NO_MARKS, initial)
            keys = np.arange(N)
            return 0.5 * wasserstein_p(EmpiricalMeasure(a.initial(keys)), EmpiricalMeasure(b.initial(keys)), 2) ** 2

        out.append(ErrorSample.from_replications(N, _replicate(one, R, threads), 2))
    return out


def fg_rate(initial: InitialLaw, N_list: Sequence[int], R: int, seedplan: SeedPlan,
            threads: int = 1) -> RateReport:
    if len(N_list) < 3:
        raise RateFitError("a rate fit needs at least 3 values of N")
    samples = fg_samples(initial, N_list, R, seedplan, threads)
    return fit_rate(samples, -0.5, "upper envelope N^(-1/2) for E W2^2 in one dimension")


def picard_is_contracting(distances: Sequence[float], burn_in: int = 2) -> bool:
    """Strict decrease of successive distances after ``burn_in`` iterations."""
    tail = list(distances[burn_in - 1:])
    return all(b < a for a, b in zip(tail, tail[1:]))


def non_increasing_within(samples: Sequence[ErrorSample], k_se: float = 2.0) -> bool:
    return all(b.estimate <= a.estimate + k_se * max(a.se, b.se) for a, b in zip(samples, samples[1:]))

