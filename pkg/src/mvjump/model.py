"""Jump-type McKean-Vlasov models, mark measures and assumption probes.

Coefficient callables are vectorized: ``x`` (and ``u`` for the jump
coefficients) may be numpy arrays that broadcast against each other, and
``mu`` is an :class:`~mvjump.measure.EmpiricalMeasure`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np
from scipy import special, stats

from .measure import EmpiricalMeasure, distance_to_dirac0, wasserstein_p

DriftFn = Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]
DiffusionFn = Callable[[np.ndarray], np.ndarray]
JumpFn = Callable[[np.ndarray, EmpiricalMeasure, np.ndarray], np.ndarray]


class UnsupportedConfigurationError(ValueError):
    pass


class NonFiniteCoefficientError(ValueError):
    pass


# ---------------------------------------------------------------------------
# mark measures and initial laws


_CONTINUOUS_FAMILIES = {
    "normal": ("loc", "scale"),
    "uniform": ("low", "high"),
}


@dataclass(frozen=True)
class MarkMeasure:
    """A finite measure on a mark space.

    Discrete measures carry ``atoms``/``weights`` with the weights summing to
    ``total_mass``.  Continuous measures name a family from
    ``normal``/``uniform``; they can be integrated only if ``quadrature``
    (a Gauss rule order) is declared.
    """

    total_mass: float
    atoms: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    family: str | None = None
    params: tuple[tuple[str, float], ...] = ()
    quadrature: int | None = None

    def __post_init__(self):
        if not (self.total_mass >= 0 and math.isfinite(self.total_mass)):
            raise ValueError("mark measure needs finite non-negative total mass")
        if self.family is None:
            if len(self.atoms) != len(self.weights):
                raise ValueError("atoms and weights differ in length")
            if any(w <= 0 for w in self.weights):
                raise ValueError("discrete mark weights must be positive")
            if self.weights and not math.isclose(sum(self.weights), self.total_mass, rel_tol=1e-12, abs_tol=1e-15):
                raise ValueError("discrete weights must sum to total_mass")
            if not self.weights and self.total_mass > 0:
                raise ValueError("positive mass needs at least one atom")
        else:
            if self.family not in _CONTINUOUS_FAMILIES:
                raise ValueError(f"unknown mark family {self.family!r}")
            names = _CONTINUOUS_FAMILIES[self.family]
            if tuple(k for k, _ in self.params) != names:
                raise ValueError(f"{self.family} marks need parameters {names}")

    @classmethod
    def discrete(cls, atoms, weights) -> MarkMeasure:
        atoms = tuple(float(a) for a in atoms)
        weights = tuple(float(w) for w in weights)
        return cls(total_mass=float(sum(weights)), atoms=atoms, weights=weights)

    @classmethod
    def symmetric(cls, rate: float, size: float = 1.0) -> MarkMeasure:
        """Marks +size and -size, each with mass rate/2."""
        if rate == 0:
            return cls.zero()
        return cls.discrete([size, -size], [rate / 2, rate / 2])

    @classmethod
    def zero(cls) -> MarkMeasure:
        return cls(total_mass=0.0)

    @classmethod
    def continuous(cls, family: str, total_mass: float, quadrature: int | None = None, **params) -> MarkMeasure:
        names = _CONTINUOUS_FAMILIES.get(family)
        if names is None:
            raise ValueError(f"unknown mark family {family!r}")
        return cls(
            total_mass=float(total_mass),
            family=family,
            params=tuple((k, float(params[k])) for k in names),
            quadrature=quadrature,
        )

    @property
    def is_discrete(self) -> bool:
        return self.family is None

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in (0, 1) to marks of the normalized measure."""
        u = np.asarray(u, dtype=np.float64)
        if self.is_discrete:
            if not self.atoms:
                return np.zeros_like(u)
            cdf = np.cumsum(self.weights) / self.total_mass
            idx = np.searchsorted(cdf, u, side="right")
            return np.asarray(self.atoms)[np.minimum(idx, len(self.atoms) - 1)]
        p = dict(self.params)
        if self.family == "normal":
            return p["loc"] + p["scale"] * special.ndtri(u)
        return p["low"] + (p["high"] - p["low"]) * u

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Points and masses of the exact (discrete) or declared quadrature rule."""
        if self.is_discrete:
            return np.asarray(self.atoms, dtype=np.float64), np.asarray(self.weights, dtype=np.float64)
        return self._rule(self.quadrature)

    def _rule(self, order: int | None) -> tuple[np.ndarray, np.ndarray]:
        if order is None:
            raise UnsupportedConfigurationError(
                f"continuous {self.family} marks need a declared quadrature order"
            )
        p = dict(self.params)
        if self.family == "normal":
            z, w = np.polynomial.hermite_e.hermegauss(order)
            return p["loc"] + p["scale"] * z, self.total_mass * w / math.sqrt(2 * math.pi)
        z, w = np.polynomial.legendre.leggauss(order)
        half = 0.5 * (p["high"] - p["low"])
        return p["low"] + half * (z + 1.0), self.total_mass * 0.5 * w

    def integrate(self, g: Callable[[np.ndarray], np.ndarray]):
        """Integrate ``g(u)`` against the measure; ``g`` returns ``(..., m)`` arrays."""
        u, w = self.nodes()
        return g(u) @ w

    def quadrature_error(self, g) -> float:
        """|Q_n - Q_2n| for continuous marks, 0 for exact discrete sums."""
        if self.is_discrete:
            return 0.0
        u1, w1 = self._rule(self.quadrature)
        u2, w2 = self._rule(2 * self.quadrature)
        return float(np.max(np.abs(g(u1) @ w1 - g(u2) @ w2)))

    def to_dict(self) -> dict:
        if self.is_discrete:
            return {"atoms": list(self.atoms), "weights": list(self.weights)}
        return {"family": self.family, "total_mass": self.total_mass, **dict(self.params), "quadrature": self.quadrature}


_INITIAL_FAMILIES = {"dirac": ("value",), "normal": ("mean", "std"), "uniform": ("low", "high")}


@dataclass(frozen=True)
class InitialLaw:
    family: str = "normal"
    params: tuple[tuple[str, float], ...] = (("mean", 1.0), ("std", 0.5))

    def __post_init__(self):
        names = _INITIAL_FAMILIES.get(self.family)
        if names is None:
            raise ValueError(f"unknown initial law {self.family!r}")
        if tuple(k for k, _ in self.params) != names:
            raise ValueError(f"{self.family} initial law needs parameters {names}")
        p = dict(self.params)
        if self.family == "normal" and p["std"] < 0:
            raise ValueError("std must be non-negative")
        if self.family == "uniform" and not p["low"] < p["high"]:
            raise ValueError("uniform initial law needs low < high")

    @classmethod
    def make(cls, family: str, **params) -> InitialLaw:
        names = _INITIAL_FAMILIES.get(family)
        if names is None:
            raise ValueError(f"unknown initial law {family!r}")
        extra = set(params) - set(names)
        if extra:
            raise ValueError(f"unexpected parameters for {family} law: {sorted(extra)}")
        missing = [k for k in names if k not in params]
        if missing:
            raise ValueError(f"missing parameters for {family} law: {missing}")
        return cls(family, tuple((k, float(params[k])) for k in names))

    @classmethod
    def dirac(cls, value: float = 0.0) -> InitialLaw:
        return cls.make("dirac", value=value)

    def to_dict(self) -> dict:
        return {"family": self.family, **dict(self.params)}

    def sample(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        p = dict(self.params)
        if self.family == "dirac":
            return np.full_like(u, p["value"])
        if self.family == "normal":
            return p["mean"] + p["std"] * special.ndtri(u)
        return p["low"] + (p["high"] - p["low"]) * u

    def moment(self, p: float) -> float | None:
        """E|xi|^p in closed form, or None where no closed form is wired in."""
        q = dict(self.params)
        if self.family == "dirac":
            return abs(q["value"]) ** p
        if self.family == "normal":
            m, s = q["mean"], q["std"]
            if s == 0:
                return abs(m) ** p
            if m == 0:
                return s**p * 2 ** (p / 2) * math.gamma((p + 1) / 2) / math.sqrt(math.pi)
            if float(p).is_integer() and p % 2 == 0:
                return float(stats.norm(m, s).moment(int(p)))
            return None
        a, b = q["low"], q["high"]

        def prim(t):
            return math.copysign(abs(t) ** (p + 1) / (p + 1), t)

        return (prim(b) - prim(a)) / (b - a)


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class Constants:
    K1: float
    K2: float
    K3: float
    M1: float
    M2: float
    M3: float

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"constant {k} must be a positive finite number, got {v}")


@dataclass(frozen=True)
class ModelSpec:
    b1: DriftFn
    b2: DriftFn
    sigma: DiffusionFn
    f0: JumpFn
    f1: JumpFn
    nu0: MarkMeasure
    nu1: MarkMeasure
    alpha: float
    beta: float
    constants: Constants
    name: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.5 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [1/2, 1], got {self.alpha}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def drift(self, x, mu):
        return self.b1(x, mu) + self.b2(x, mu)


def compensator_integral(model: ModelSpec, x, mu: EmpiricalMeasure, *, return_error: bool = False):
    """Integral of f0(x, mu, u) against nu0, the drift removed by compensation.

    Exact finite sum for discrete marks; continuous marks use their declared
    Gauss rule, and ``return_error=True`` additionally returns |Q_n - Q_2n|.
    """
    x = np.asarray(x, dtype=np.float64)

    def g(u):
        return model.f0(x[..., None], mu, u)

    value = model.nu0.integrate(g)
    value = value if np.ndim(value) else float(value)
    if return_error:
        return value, model.nu0.quadrature_error(g)
    return value


# ---------------------------------------------------------------------------
# built-in models


def _positive(v: float) -> float:
    return v if v > 0 else 1.0


def _ou_like(p: dict, b1, b1_holder_const: float, sigma, alpha: float, beta: float, growth_b: float, name: str) -> ModelSpec:
    c, g0, g1 = p["c"], p["g0"], p["g1"]
    nu0 = MarkMeasure.symmetric(p["lam0"])
    nu1 = MarkMeasure.symmetric(p["lam1"])

    def b2(x, mu):
        return np.zeros_like(np.asarray(x, dtype=np.float64)) + c * mu.mean()

    def f0(x, mu, u):
        return g0 * u + np.zeros_like(np.asarray(x, dtype=np.float64))

    def f1(x, mu, u):
        return g1 * u + np.zeros_like(np.asarray(x, dtype=np.float64))

    u0, w0 = nu0.nodes()
    u1, w1 = nu1.nodes()
    a0 = np.abs(g0 * u0)
    m2 = float(np.minimum(a0, a0**2) @ w0) if u0.size else 0.0
    m3 = float(np.abs(g1 * u1) @ w1) if u1.size else 0.0
    consts = Constants(
        K1=_positive(max(b1_holder_const, abs(c))),
        K2=_positive(p["s"]),
        K3=1.0,  # jump coefficients ignore (x, mu): the cross and square jump terms vanish
        M1=_positive(max(growth_b, 2 * c * c, p["s"] ** 2)),
        M2=_positive(m2),
        M3=_positive(m3),
    )
    return ModelSpec(b1=b1, b2=b2, sigma=sigma, f0=f0, f1=f1, nu0=nu0, nu1=nu1,
                     alpha=alpha, beta=beta, constants=consts, name=name, params=p)


_DEFAULTS = {
    "M_OU": {"a": 1.0, "c": 0.5, "s": 0.2, "g0": 0.1, "g1": 0.1, "lam0": 1.0, "lam1": 1.0},
    "M_CHAOS": {"a": 1.0, "c": 1.0, "s": 0.5, "g0": 0.2, "g1": 0.2, "lam0": 1.0, "lam1": 1.0},
    "M_HOLDER": {"alpha": 0.5, "beta": 0.5, "s": 0.2, "c": 0.5, "g0": 0.1, "g1": 0.1,
                 "lam0": 1.0, "lam1": 1.0, "r_clip": 1e6},
}

BUILTIN_MODELS = tuple(_DEFAULTS)


def builtin_model(name: str, params: Mapping[str, float] | None = None) -> ModelSpec:
    """Instantiate one of ``M_OU``, ``M_HOLDER`` or ``M_CHAOS``.

    Unspecified parameters take their defaults; unknown parameter names and
    values outside the admissible range raise ``ValueError``.
    """
    if name not in _DEFAULTS:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(BUILTIN_MODELS)}")
    params = dict(params or {})
    unknown = set(params) - set(_DEFAULTS[name])
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    p = {**_DEFAULTS[name], **{k: float(v) for k, v in params.items()}}
    for k in ("s", "lam0", "lam1"):
        if p[k] < 0:
            raise ValueError(f"{name}: parameter {k} must be non-negative, got {p[k]}")

    if name in ("M_OU", "M_CHAOS"):
        a = p["a"]
        if a < 0:
            raise ValueError(f"{name}: a must be non-negative so that -a*x is non-increasing")
        if name == "M_CHAOS" and p["c"] == 0:
            raise ValueError("M_CHAOS needs c != 0 (genuine measure dependence)")
        s = p["s"]

        def b1(x, mu):
            return -a * np.asarray(x, dtype=np.float64)

        def sigma(x):
            return np.full_like(np.asarray(x, dtype=np.float64), s)

        return _ou_like(p, b1, a, sigma, 1.0, 1.0, 2 * a * a, name)

    alpha, beta, s, r_clip = p["alpha"], p["beta"], p["s"], p["r_clip"]
    if not 0.5 <= alpha <= 1:
        raise ValueError(f"M_HOLDER: alpha must lie in [1/2, 1], got {alpha}")
    if not 0 < beta <= 1:
        raise ValueError(f"M_HOLDER: beta must lie in (0, 1], got {beta}")
    if not r_clip > 0:
        raise ValueError("M_HOLDER: r_clip must be positive")

    def b1(x, mu):
        x = np.asarray(x, dtype=np.float64)
        return -np.sign(x) * np.abs(x) ** beta

    def sigma(x):
        return s * np.minimum(np.abs(np.asarray(x, dtype=np.float64)), r_clip) ** alpha

    # sgn(x)|x|^beta is Holder-beta with constant 2^(1-beta), attained at y = -x
    return _ou_like(p, b1, 2.0 ** (1 - beta), sigma, alpha, beta, 2.0, name)


# ---------------------------------------------------------------------------
# assumption probes


_ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class ProbePlan:
    n_probes: int = 1000
    cloud_size: int = 16
    scale: float = 5.0
    seed: int = 0


@dataclass
class ValidationReport:
    ratios: dict[str, float]
    tol: float
    n_probes: int

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.ratios.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, r in self.ratios.items() if r > self.tol]

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} ({self.n_probes} probes, tol={self.tol:g})"]
        lines += [f"  {k:22s} {v: .3e}" for k, v in self.ratios.items()]
        return "\n".join(lines)


def _probe_points(plan: ProbePlan, rng: np.random.Generator):
    n = plan.n_probes
    x = plan.scale * rng.standard_normal(n)
    gap = 10.0 ** rng.uniform(-6, 1, n) * rng.choice([-1.0, 1.0], n)
    y = x + gap
    # mirrored and origin pairs are the extremal cases for |x|^a-type terms
    k = n // 5
    y[:k] = -x[:k]
    y[k:2 * k] = 0.0
    clouds = []
    for _ in range(n):
        loc, spread = rng.normal(0, plan.scale), rng.uniform(0.0, plan.scale)
        clouds.append(EmpiricalMeasure(loc + spread * rng.standard_normal(plan.cloud_size)))
    perm = rng.permutation(n)
    pairs = [(clouds[i], clouds[j]) for i, j in zip(range(n), perm)]
    # a third of the pairs compare a cloud with itself
    for i in range(0, n, 3):
        pairs[i] = (pairs[i][0], pairs[i][0])
    return x, y, pairs


def _finite(name: str, value, probe) -> np.ndarray:
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteCoefficientError(f"{name} returned a non-finite value at probe {probe}")
    return value


def _ratio(obs: float, bound: float) -> float:
    if bound > 0:
        return obs / (bound * (1 + _ROUNDING_SLACK)) - 1.0
    return math.inf if obs > 0 else -1.0


def validate_assumptions(model: ModelSpec, plan: ProbePlan | None = None, tol: float = 1e-9) -> ValidationReport:
    """Probe the Holder, Lipschitz, monotonicity and growth conditions.

    Each entry of the report is the largest ``observed / bound - 1`` over the
    probes (positive means the declared constant is exceeded).  The two
    branches of the max in the jump condition are probed separately.
    Monotonicity of ``b1`` is checked on sorted probes per measure; its entry
    is the largest increase relative to the probe scale.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    plan = plan or ProbePlan()
    rng = np.random.default_rng(plan.seed)
    xs, ys, pairs = _probe_points(plan, rng)
    K = model.constants
    worst: dict[str, float] = {k: -math.inf for k in (
        "b1_measure", "b1_holder", "b2_lipschitz", "b1_monotone",
        "sigma_holder",
        "f0_cross", "f0_square", "f1_cross", "f1_square",
        "drift_diffusion_growth", "f0_growth", "f1_growth",
    )}

    def bump(key, value):
        if value > worst[key]:
            worst[key] = value

    u0, w0 = model.nu0.nodes()
    u1, w1 = model.nu1.nodes()

    sig_x = _finite("sigma", model.sigma(xs), "x-batch")
    sig_y = _finite("sigma", model.sigma(ys), "y-batch")
    dxy = np.abs(xs - ys)
    with np.errstate(divide="ignore", invalid="ignore"):
        sig_bound = K.K2 * dxy**model.alpha
        for i in range(len(xs)):
            bump("sigma_holder", _ratio(abs(sig_x[i] - sig_y[i]), sig_bound[i]))

    grid = np.sort(xs)
    for i, (x, y, (mu, nu)) in enumerate(zip(xs, ys, pairs)):
        probe = f"#{i} (x={x:.6g}, y={y:.6g})"
        w2 = wasserstein_p(mu, nu, 2)
        d = abs(x - y)
        b1x = float(_finite("b1", model.b1(np.array([x]), mu), probe)[0])
        b1y = float(_finite("b1", model.b1(np.array([y]), mu), probe)[0])
        b1x_nu = float(_finite("b1", model.b1(np.array([x]), nu), probe)[0])
        b2x = float(_finite("b2", model.b2(np.array([x]), mu), probe)[0])
        b2y = float(_finite("b2", model.b2(np.array([y]), nu), probe)[0])
        bump("b1_measure", _ratio(abs(b1x - b1x_nu), K.K1 * w2))
        bump("b1_holder", _ratio(abs(b1x - b1y), K.K1 * d**model.beta))
        bump("b2_lipschitz", _ratio(abs(b2x - b2y), K.K1 * (d + w2)))

        rhs3 = K.K3 * (d * d + w2 * w2)
        for tag, f, u, w in (("f0", model.f0, u0, w0), ("f1", model.f1, u1, w1)):
            if u.size == 0:
                continue
            fx = _finite(tag, f(np.full(u.shape, x), mu, u), probe)
            fy = _finite(tag, f(np.full(u.shape, y), nu, u), probe)
            delta = np.abs(fx - fy)
            bump(f"{tag}_cross", _ratio(float((d * delta) @ w), rhs3))
            bump(f"{tag}_square", _ratio(float((delta**2) @ w), rhs3))

        m_w2 = distance_to_dirac0(mu, 2)
        growth2 = 1 + x * x + m_w2**2
        growth1 = 1 + abs(x) + m_w2
        lhs = max((b1x + b2x) ** 2, sig_x[i] ** 2)
        bump("drift_diffusion_growth", _ratio(lhs, K.M1 * growth2))
        if u0.size:
            f = np.abs(_finite("f0", model.f0(np.full(u0.shape, x), mu, u0), probe))
            bump("f0_growth", _ratio(float(np.minimum(f, f * f) @ w0), K.M2 * growth1))
        if u1.size:
            f = np.abs(_finite("f1", model.f1(np.full(u1.shape, x), mu, u1), probe))
            bump("f1_growth", _ratio(float(f @ w1), K.M3 * growth1))

    # b1 must be non-increasing in x for every fixed measure
    scale = max(1.0, float(np.max(np.abs(grid))))
    for j, (mu, _) in enumerate(pairs[: max(1, min(len(pairs), 50))]):
        vals = _finite("b1", model.b1(grid, mu), f"monotonicity sweep #{j}")
        rise = float(np.max(np.diff(vals), initial=-math.inf))
        bump("b1_monotone", rise / scale if rise > 0 else -1.0)

    ratios = {k: (v if v != -math.inf else -1.0) for k, v in worst.items()}
    return ValidationReport(ratios=ratios, tol=tol, n_probes=plan.n_probes)
