"""Reproducible noise: Brownian paths, Poisson jump schedules, initial draws.

Every random number is addressed by a key ``(master seed, experiment,
particle, kind, draw)`` and generated by a counter-based bijection, so a
particle's noise does not depend on how many particles are simulated, in
which order, or on how many threads are used.

Brownian paths are built by midpoint bridging on a dyadic skeleton of
``[0, T]``: draw ``0`` fixes ``W_T`` and draw ``2**(l-1) + j`` fixes the
``j``-th midpoint of level ``l``.  A path at level ``L`` uses draws
``0 .. 2**L - 1`` and contains every coarser level bit-for-bit, which is what
makes schemes with different step sizes exactly coupled.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import philox
from .model import InitialLaw, MarkMeasure

SKELETON_DEPTH = 20
KEYING_SCHEME = "philox4x32-10/experiment-particle-kind-draw/v1"

BROWNIAN, INITIAL, JUMPS0, JUMPS1 = "brownian", "initial", "jumps0", "jumps1"
_KIND_CODE = {BROWNIAN: 1, INITIAL: 2, JUMPS0: 3, JUMPS1: 4}
_SUB_COUNT, _SUB_TIMES, _SUB_MARKS = 0, 1, 2


class GridError(ValueError):
    pass


class CouplingError(ValueError):
    pass


def _kind_word(kind: str, sub: int = 0) -> int:
    return _KIND_CODE[kind] * 4 + sub


@dataclass(frozen=True)
class SeedPlan:
    master_seed: int
    version: str = KEYING_SCHEME

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def key(self) -> tuple[int, int]:
        s = int(self.master_seed)
        return s & 0xFFFFFFFF, s >> 32

    @staticmethod
    def experiment_id(name: str) -> int:
        return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=4).digest(), "little")

    def stream(self, experiment: str, particle: int, kind: str) -> KeyedStream:
        return KeyedStream(self, self.experiment_id(experiment), int(particle), kind)

    def to_dict(self) -> dict:
        return {"master_seed": int(self.master_seed), "keying": self.version}


@dataclass(frozen=True)
class KeyedStream:
    plan: SeedPlan
    experiment: int
    particle: int
    kind: str

    def uniforms(self, draws, sub: int = 0) -> np.ndarray:
        return philox.uniforms(self.plan.key, (self.experiment, self.particle),
                               _kind_word(self.kind, sub), np.asarray(draws))

    def normals(self, draws, sub: int = 0) -> np.ndarray:
        return philox.normals(self.plan.key, (self.experiment, self.particle),
                              _kind_word(self.kind, sub), np.asarray(draws))


@dataclass(frozen=True)
class JumpSchedule:
    times: np.ndarray
    marks: np.ndarray

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class FlatJumps:
    """Jumps of many particles, ordered by (owner, time).

    ``owner`` indexes the particle array the jumps were generated for.
    """

    owner: np.ndarray
    times: np.ndarray
    marks: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def for_owner(self, k: int) -> JumpSchedule:
        sel = self.owner == k
        return JumpSchedule(self.times[sel], self.marks[sel])


def _jumps(plan: SeedPlan, experiment: int, particles: np.ndarray, kind: str,
           measure: MarkMeasure, T: float) -> FlatJumps:
    particles = np.asarray(particles, dtype=np.int64).reshape(-1)
    rate = T * measure.total_mass
    if rate == 0 or particles.size == 0:
        empty = np.empty(0)
        return FlatJumps(np.empty(0, dtype=np.int64), empty, empty)
    key = plan.key
    u = philox.uniforms(key, (experiment, particles), _kind_word(kind, _SUB_COUNT), 0)
    counts = stats.poisson.ppf(u, rate).astype(np.int64)
    owner = np.repeat(np.arange(particles.size), counts)
    starts = np.cumsum(counts) - counts
    draw = np.arange(owner.size) - np.repeat(starts, counts)
    times = T * philox.uniforms(key, (experiment, particles[owner]), _kind_word(kind, _SUB_TIMES), draw)
    marks = measure.sample(philox.uniforms(key, (experiment, particles[owner]), _kind_word(kind, _SUB_MARKS), draw))
    order = np.lexsort((times, owner))
    return FlatJumps(owner[order], times[order], marks[order])


def sample_jump_schedule(measure: MarkMeasure, T: float, stream: KeyedStream) -> JumpSchedule:
    """Poisson(T * mass) many jumps, uniform times on (0, T), i.i.d. marks."""
    if not T > 0:
        raise ValueError("horizon T must be positive")
    flat = _jumps(stream.plan, stream.experiment, np.array([stream.particle]), stream.kind, measure, T)
    return JumpSchedule(flat.times, flat.marks)


def grid_level(grid, T: float, depth: int = SKELETON_DEPTH) -> int:
    """Smallest dyadic level whose points contain every grid time."""
    g = np.asarray(grid, dtype=np.float64)
    if np.any(g < 0) or np.any(g > T * (1 + 1e-12)):
        raise GridError(f"grid leaves [0, {T}]")
    if g.size > 1 and np.any(np.diff(g) <= 0):
        raise GridError("grid must be strictly increasing")
    scaled = g / T
    for level in range(depth + 1):
        k = scaled * 2**level
        if np.all(np.abs(k - np.round(k)) <= 1e-9 * max(1.0, 2**level)):
            return level
    raise GridError(f"grid times are not on the dyadic skeleton of depth {depth} over [0, {T}]")


def _bridge(plan: SeedPlan, experiment: int, particles: np.ndarray, level: int, T: float) -> np.ndarray:
    n = 2**level
    draws = np.arange(n)
    W = np.zeros((particles.size, n + 1))
    block = max(1, (1 << 20) // n)
    for lo in range(0, particles.size, block):
        rows = slice(lo, lo + block)
        z = philox.normals(plan.key, (experiment, particles[rows, None]), _kind_word(BROWNIAN), draws[None, :])
        Wb = W[rows]
        Wb[:, n] = math.sqrt(T) * z[:, 0]
        for lev in range(1, level + 1):
            half = n >> lev
            mids = np.arange(half, n, 2 * half)
            node = 2 ** (lev - 1) + np.arange(mids.size)
            Wb[:, mids] = 0.5 * (Wb[:, mids - half] + Wb[:, mids + half]) + math.sqrt(T / 2 ** (lev + 1)) * z[:, node]
    return W


@dataclass(frozen=True)
class DriverBundle:
    """All noise of one experiment: Brownian paths, jump schedules, initial draws."""

    plan: SeedPlan
    experiment: str
    T: float
    nu0: MarkMeasure
    nu1: MarkMeasure
    initial_law: InitialLaw
    depth: int = SKELETON_DEPTH

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    @classmethod
    def for_model(cls, plan: SeedPlan, experiment: str, T: float, model, initial_law: InitialLaw) -> DriverBundle:
        return cls(plan, experiment, float(T), model.nu0, model.nu1, initial_law)

    @property
    def experiment_id(self) -> int:
        return SeedPlan.experiment_id(self.experiment)

    def stream(self, particle: int, kind: str) -> KeyedStream:
        return KeyedStream(self.plan, self.experiment_id, int(particle), kind)

    def brownian_path(self, particles, level: int) -> np.ndarray:
        """W at the ``2**level + 1`` dyadic points of [0, T], one row per particle."""
        if not 0 <= level <= self.depth:
            raise GridError(f"level {level} outside the skeleton depth {self.depth}")
        particles = np.asarray(particles, dtype=np.int64).reshape(-1)
        return _bridge(self.plan, self.experiment_id, particles, level, self.T)

    def initial(self, particles) -> np.ndarray:
        particles = np.asarray(particles, dtype=np.int64).reshape(-1)
        u = philox.uniforms(self.plan.key, (self.experiment_id, particles), _kind_word(INITIAL), 0)
        return self.initial_law.sample(u)

    def flat_jumps(self, which: int, particles) -> FlatJumps:
        measure, kind = (self.nu0, JUMPS0) if which == 0 else (self.nu1, JUMPS1)
        return _jumps(self.plan, self.experiment_id, np.asarray(particles), kind, measure, self.T)

    def jump_schedule(self, which: int, particle: int) -> JumpSchedule:
        return self.flat_jumps(which, [particle]).for_owner(0)

    def manifest(self) -> dict:
        return {**self.plan.to_dict(), "experiment": self.experiment, "T": self.T, "skeleton_depth": self.depth}


def brownian_increments(bundle, i: int, grid) -> np.ndarray:
    """Increments of particle ``i``'s Brownian path over consecutive grid times."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size < 2:
        return np.empty(0)
    level = grid_level(grid, bundle.T, bundle.depth)
    W = bundle.brownian_path([i], level)[0]
    idx = np.round(grid / bundle.T * 2**level).astype(np.int64)
    return np.diff(W[idx])


@dataclass
class CoupledDrivers:
    """Read-only view of one bundle shared by several schemes.

    Paths and jump arrays are computed once and handed out as the same
    read-only arrays, so every scheme sees byte-identical noise.
    """

    bundle: DriverBundle
    schemes: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def T(self) -> float:
        return self.bundle.T

    @property
    def depth(self) -> int:
        return self.bundle.depth

    def _memo(self, key, make):
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        value = make()
        for arr in (value if isinstance(value, tuple) else (value,)):
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False
        with self._lock:
            return self._cache.setdefault(key, value)

    def brownian_path(self, particles, level: int) -> np.ndarray:
        particles = np.asarray(particles, dtype=np.int64).reshape(-1)
        return self._memo(("W", level, particles.tobytes()), lambda: self.bundle.brownian_path(particles, level))

    def initial(self, particles) -> np.ndarray:
        particles = np.asarray(particles, dtype=np.int64).reshape(-1)
        return self._memo(("xi", particles.tobytes()), lambda: self.bundle.initial(particles))

    def flat_jumps(self, which: int, particles) -> FlatJumps:
        particles = np.asarray(particles, dtype=np.int64).reshape(-1)

        def make():
            fj = self.bundle.flat_jumps(which, particles)
            for a in (fj.owner, fj.times, fj.marks):
                a.flags.writeable = False
            return fj

        return self._memo(("J", which, particles.tobytes()), make)

    def jump_schedule(self, which: int, particle: int) -> JumpSchedule:
        return self.flat_jumps(which, [particle]).for_owner(0)

    def manifest(self) -> dict:
        return {**self.bundle.manifest(), "schemes": [str(s) for s in self.schemes]}


def couple(bundle, schemes) -> CoupledDrivers:
    """Share one bundle between schemes, which must agree on the horizon.

    ``schemes`` holds objects with a ``T`` attribute (e.g. ``SimGrid``) or
    ``(name, T)`` pairs.
    """
    if isinstance(bundle, CoupledDrivers):
        bundle = bundle.bundle
    horizons = []
    for s in schemes:
        horizons.append(float(s[1]) if isinstance(s, tuple) else float(s.T))
    if any(h != horizons[0] for h in horizons):
        raise CouplingError(f"schemes disagree on the horizon: {sorted(set(horizons))}")
    if horizons and horizons[0] > bundle.T:
        raise CouplingError(f"scheme horizon {horizons[0]} exceeds the bundle horizon {bundle.T}")
    return CoupledDrivers(bundle, tuple(schemes))
