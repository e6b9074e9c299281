"""Particle time-stepping: interacting system, coupled limit system, Picard flow.

All schemes share one update.  Over a block of ``stride`` output steps
starting at grid time ``t*`` the coefficients are evaluated once at
``(X_{t*}, mu_{t*})`` and each output point ``t`` in the block receives::

    X_t = X_{t*} + (b - comp)(X_{t*}, mu_{t*}) (t - t*) + sigma(X_{t*}) (W_t - W_{t*})
          + sum over jumps in (t*, t] of f(X_{t*}, mu_{t*}, mark)

``frozen`` mode uses blocks of one coarse step ``h`` while writing the path at
a possibly finer resolution; ``continuous`` mode re-evaluates at every output
step.  With ``h`` equal to the output step both modes run the same code on
the same numbers, hence produce identical paths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drivers import couple, grid_level
from .measure import EmpiricalMeasure
from .model import ModelSpec, compensator_integral

BLOWUP_LIMIT = 1e12
MODES = ("frozen", "continuous")


class BlowUpError(RuntimeError):
    def __init__(self, particle: int, time: float, value: float):
        super().__init__(f"particle {particle} left the finite range at t={time:.6g} (value {value!r})")
        self.particle = particle
        self.time = time
        self.value = value


class CoverageError(ValueError):
    pass


class PicardWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimGrid:
    """Uniform grid ``k h`` on ``[0, T]`` with ``T / h`` a power of two."""

    T: float
    h: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if not 0 < self.h < 1:
            raise ValueError(f"step h must lie in (0, 1), got {self.h}")
        ratio = self.T / self.h
        m = round(math.log2(ratio)) if ratio >= 1 else -1
        if m < 0 or abs(ratio - 2**m) > 1e-9 * ratio:
            raise ValueError(f"T/h = {ratio:g} must be a power of two (dyadic grids only)")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.h))

    @property
    def level(self) -> int:
        return int(round(math.log2(self.n_steps)))

    @property
    def times(self) -> np.ndarray:
        return self.T * np.arange(self.n_steps + 1) / self.n_steps

    def project(self, t):
        """t_h = floor(t / h) h."""
        return np.floor(np.asarray(t, dtype=np.float64) / self.h) * self.h

    def refine(self, factor: int) -> SimGrid:
        return SimGrid(self.T, self.h / factor)


@dataclass(frozen=True)
class ParticleSystemState:
    time: float
    positions: np.ndarray
    measure: EmpiricalMeasure

    @classmethod
    def at(cls, time: float, positions) -> ParticleSystemState:
        pos = np.array(positions, dtype=np.float64)
        if pos.size < 1:
            raise ValueError("a particle system needs N >= 1")
        return cls(float(time), pos, EmpiricalMeasure(pos))

    @property
    def N(self) -> int:
        return self.positions.size


@dataclass
class ParticlePath:
    times: np.ndarray
    positions: np.ndarray  # (len(times), N)
    particles: np.ndarray
    mode: str
    h: float
    jump_times: np.ndarray
    snapshots: dict[int, EmpiricalMeasure] = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return self.positions.shape[1]

    @property
    def sup_abs(self) -> np.ndarray:
        """Running sup of |X| over the recorded grid, per particle."""
        return np.max(np.abs(self.positions), axis=0)

    def sup_moment(self, p: float) -> float:
        return float(np.mean(self.sup_abs**p))

    def state(self, k: int) -> ParticleSystemState:
        snap = self.snapshots.get(k)
        pos = self.positions[k].copy()
        return ParticleSystemState(float(self.times[k]), pos, snap if snap is not None else EmpiricalMeasure(pos))

    @property
    def final(self) -> ParticleSystemState:
        return self.state(len(self.times) - 1)


class LawFlow:
    """Equal-size empirical measures at checkpoint times (nearest lookup)."""

    def __init__(self, times, atoms):
        self.times = np.asarray(times, dtype=np.float64)
        atoms = np.asarray(atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[0] != self.times.size:
            raise ValueError("need one row of atoms per checkpoint")
        self.atoms = np.sort(atoms, axis=1)
        self.atoms.flags.writeable = False
        self._spacing = float(np.max(np.diff(self.times))) if self.times.size > 1 else 0.0

    @classmethod
    def constant(cls, measure: EmpiricalMeasure, times) -> LawFlow:
        times = np.asarray(times, dtype=np.float64)
        return cls(times, np.broadcast_to(measure.atoms, (times.size, measure.n)))

    @classmethod
    def from_path(cls, path: ParticlePath) -> LawFlow:
        return cls(path.times, path.positions)

    @property
    def M(self) -> int:
        return self.atoms.shape[1]

    def covers(self, T: float) -> bool:
        slack = 0.5 * self._spacing + 1e-12
        return self.times[0] <= slack and self.times[-1] >= T - slack

    def index(self, t: float) -> int:
        k = int(np.clip(np.searchsorted(self.times, t), 0, self.times.size - 1))
        if k > 0 and abs(self.times[k - 1] - t) <= abs(self.times[k] - t):
            k -= 1
        if abs(self.times[k] - t) > 0.5 * self._spacing + 1e-12:
            raise CoverageError(f"no law checkpoint near t={t:.6g}")
        return k

    def at(self, t: float) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_sorted(self.atoms[self.index(t)])

    def w2_to(self, other: LawFlow) -> np.ndarray:
        """W2 between the two flows at each common checkpoint."""
        if self.atoms.shape != other.atoms.shape:
            raise ValueError("flows differ in shape")
        return np.sqrt(np.mean((self.atoms - other.atoms) ** 2, axis=1))


# ---------------------------------------------------------------------------
# core update


@dataclass(frozen=True)
class _BinnedJumps:
    bins: np.ndarray  # output step containing the jump time
    owner: np.ndarray
    marks: np.ndarray
    times: np.ndarray

    @classmethod
    def build(cls, flat, T_out: float, n_out: int) -> _BinnedJumps:
        bins = np.ceil(flat.times / T_out * n_out).astype(np.int64) - 1
        keep = (bins < n_out) & (flat.times <= T_out)
        bins = np.maximum(bins[keep], 0)
        order = np.argsort(bins, kind="stable")
        return cls(bins[order], flat.owner[keep][order], flat.marks[keep][order], flat.times[keep][order])

    def window(self, lo: int, hi: int) -> slice:
        return slice(int(np.searchsorted(self.bins, lo)), int(np.searchsorted(self.bins, hi)))


def _advance_block(model: ModelSpec, xs: np.ndarray, mu: EmpiricalMeasure, sub_dt: np.ndarray,
                   dW: np.ndarray, jumps: tuple, k0: int) -> np.ndarray:
    """Positions at the ``len(sub_dt)`` output points following ``xs``.

    ``dW`` holds W_t - W_{t*} with shape (stride, N).  ``jumps`` pairs each
    jump coefficient with the binned jumps falling in this block.
    """
    drift = model.drift(xs, mu) - compensator_integral(model, xs, mu)
    sig = model.sigma(xs)
    block = xs[None, :] + drift[None, :] * sub_dt[:, None] + sig[None, :] * dW
    stride = sub_dt.size
    acc = None
    for f, bj, window in jumps:
        if window.stop <= window.start:
            continue
        owner = bj.owner[window]
        vals = f(xs[owner], mu, bj.marks[window])
        if acc is None:
            acc = np.zeros((stride, xs.size))
        np.add.at(acc, (bj.bins[window] - k0, owner), vals)
    if acc is not None:
        block += np.cumsum(acc, axis=0)
    return block


def _guard(block: np.ndarray, times: np.ndarray, particles: np.ndarray) -> None:
    bad = ~np.isfinite(block) | (np.abs(block) > BLOWUP_LIMIT)
    if bad.any():
        k, i = np.argwhere(bad)[0]
        raise BlowUpError(int(particles[i]), float(times[k]), float(block[k, i]))


def _integrate(model: ModelSpec, drivers, particles: np.ndarray, T: float, out_level: int, stride: int,
               measure_at: Callable[[int, np.ndarray], EmpiricalMeasure], x0: np.ndarray | None = None,
               record: bool = False) -> ParticlePath:
    n = 2**out_level
    times = T * np.arange(n + 1) / n
    level_b = grid_level(times, drivers.T, drivers.depth)
    idx = np.round(times / drivers.T * 2**level_b).astype(np.int64)
    W = np.ascontiguousarray(drivers.brownian_path(particles, level_b)[:, idx].T)  # (n+1, N)
    x = drivers.initial(particles) if x0 is None else np.asarray(x0, dtype=np.float64)
    X = np.empty((n + 1, particles.size))
    X[0] = x
    b0 = _BinnedJumps.build(drivers.flat_jumps(0, particles), T, n)
    b1 = _BinnedJumps.build(drivers.flat_jumps(1, particles), T, n)
    dt = T / n
    sub_dt = dt * np.arange(1, stride + 1)
    snapshots = {}
    for k0 in range(0, n, stride):
        xs = X[k0]
        mu = measure_at(k0, xs)
        if record:
            snapshots[k0] = mu
        dW = W[k0 + 1:k0 + stride + 1] - W[k0]
        jumps = ((model.f0, b0, b0.window(k0, k0 + stride)), (model.f1, b1, b1.window(k0, k0 + stride)))
        block = _advance_block(model, xs, mu, sub_dt, dW, jumps, k0)
        _guard(block, times[k0 + 1:k0 + stride + 1], particles)
        X[k0 + 1:k0 + stride + 1] = block
    if record:
        snapshots[n] = measure_at(n, X[n])
    jt = np.unique(np.concatenate([b0.times, b1.times]))
    return ParticlePath(times, X, particles, "", T / n * stride, jt, snapshots)


def _particles(N: int, particles) -> np.ndarray:
    if N < 1:
        raise ValueError("need at least one particle")
    if particles is None:
        return np.arange(N, dtype=np.int64)
    particles = np.asarray(particles, dtype=np.int64).reshape(-1)
    if particles.size != N:
        raise ValueError(f"got {particles.size} particle keys for N={N}")
    return particles


def _resolve(grid: SimGrid, mode: str, resolution: float | None, drivers) -> tuple[int, int]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if grid.T > drivers.T * (1 + 1e-12):
        raise ValueError(f"grid horizon {grid.T} exceeds the driver horizon {drivers.T}")
    if resolution is None:
        factor = 1
    else:
        ratio = grid.h / resolution
        factor = int(round(ratio))
        if factor < 1 or abs(ratio - factor) > 1e-9 * ratio or factor & (factor - 1):
            raise ValueError("resolution must be h / 2**k")
    out_level = grid.level + int(round(math.log2(factor)))
    stride = factor if mode == "frozen" else 1
    return out_level, stride


def _interacting_measure(k: int, xs: np.ndarray) -> EmpiricalMeasure:
    return EmpiricalMeasure(xs)


def step_interacting(model: ModelSpec, state: ParticleSystemState, grid: SimGrid, bundle,
                     mode: str = "frozen", particles=None) -> ParticleSystemState:
    """Advance all particles by one step of ``grid``.

    A single step freezes coefficients at its left end in both modes, so the
    result agrees bit-for-bit with the corresponding step of
    :func:`simulate_interacting`.
    """
    particles = _particles(state.N, particles)
    _resolve(grid, mode, None, bundle)
    k = state.time / grid.h
    if abs(k - round(k)) > 1e-9 or not 0 <= round(k) < grid.n_steps:
        raise ValueError(f"state time {state.time} is not a grid point before T")
    k = int(round(k))
    n = grid.n_steps
    times = grid.times
    level_b = grid_level(times, bundle.T, bundle.depth)
    idx = np.round(times[k:k + 2] / bundle.T * 2**level_b).astype(np.int64)
    W = bundle.brownian_path(particles, level_b)[:, idx]
    dW = (W[:, 1] - W[:, 0])[None, :]
    b0 = _BinnedJumps.build(bundle.flat_jumps(0, particles), grid.T, n)
    b1 = _BinnedJumps.build(bundle.flat_jumps(1, particles), grid.T, n)
    xs = np.asarray(state.positions, dtype=np.float64)
    jumps = ((model.f0, b0, b0.window(k, k + 1)), (model.f1, b1, b1.window(k, k + 1)))
    block = _advance_block(model, xs, state.measure, np.array([grid.T / n]), dW, jumps, k)
    _guard(block, times[k + 1:k + 2], particles)
    return ParticleSystemState.at(times[k + 1], block[0])


def simulate_interacting(model: ModelSpec, N: int, grid: SimGrid, bundle, mode: str = "frozen", *,
                         particles=None, resolution: float | None = None,
                         record_snapshots: bool = False) -> ParticlePath:
    """Run the N-particle system with the empirical measure fed back each step.

    ``resolution`` (a dyadic refinement of ``grid.h``) sets where the path is
    written; in frozen mode coefficients stay fixed on each coarse step.
    Initial positions are drawn from the bundle.
    """
    particles = _particles(N, particles)
    out_level, stride = _resolve(grid, mode, resolution, bundle)
    path = _integrate(model, bundle, particles, grid.T, out_level, stride, _interacting_measure,
                      record=record_snapshots)
    path.mode = mode
    path.h = grid.h
    return path


def simulate_limit_coupled(model: ModelSpec, N: int, grid_fine: SimGrid, bundle, law: LawFlow, *,
                           particles=None, mode: str = "continuous",
                           resolution: float | None = None) -> ParticlePath:
    """Independent particles whose measure argument is read from ``law``.

    Particle ``i`` consumes exactly the noise of interacting particle ``i``
    when both runs use the same bundle.
    """
    particles = _particles(N, particles)
    if not law.covers(grid_fine.T):
        raise CoverageError(f"law checkpoints [{law.times[0]:g}, {law.times[-1]:g}] do not cover [0, {grid_fine.T:g}]")
    out_level, stride = _resolve(grid_fine, mode, resolution, bundle)
    n = 2**out_level
    times = grid_fine.T * np.arange(n + 1) / n
    path = _integrate(model, bundle, particles, grid_fine.T, out_level, stride,
                      lambda k, xs: law.at(times[k]))
    path.mode = mode
    path.h = grid_fine.h
    return path


def pool_law_flow(model: ModelSpec, M: int, grid: SimGrid, bundle) -> LawFlow:
    """Surrogate for the true law: an independent interacting pool of size M."""
    path = simulate_interacting(model, M, grid, bundle, "continuous")
    return LawFlow.from_path(path)


@dataclass
class PicardDiagnostics:
    distances: list[float]
    converged: bool
    warning: str | None = None

    @property
    def iterations(self) -> int:
        return len(self.distances)


def picard_flow(model: ModelSpec, M: int, grid: SimGrid, bundle, k_max: int, tol: float):
    """Distribution-iterated flow: freeze the law, solve, update the law.

    Starts from the constant-in-time cloud of initial draws and stops once
    the sup over checkpoints of W2 between successive flows drops below
    ``tol`` or after ``k_max`` iterations.  Returns ``(flow, diagnostics)``.
    """
    if M < 2:
        raise ValueError("Picard pool needs M >= 2")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    drivers = couple(bundle, [grid])
    particles = np.arange(M, dtype=np.int64)
    flow = LawFlow.constant(EmpiricalMeasure(drivers.initial(particles)), grid.times)
    distances: list[float] = []
    for _ in range(k_max):
        path = simulate_limit_coupled(model, M, grid, drivers, flow, particles=particles)
        new = LawFlow.from_path(path)
        distances.append(float(np.max(new.w2_to(flow))))
        flow = new
        if distances[-1] < tol:
            return flow, PicardDiagnostics(distances, True)
    msg = f"Picard iteration did not reach tol={tol:g} in {k_max} steps (last distance {distances[-1]:.3e})"
    warnings.warn(msg, PicardWarning, stacklevel=2)
    return flow, PicardDiagnostics(distances, False, msg)
