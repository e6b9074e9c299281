"""Yamada-Watanabe smoothing of |x|.

The bump is fixed to ``phi(z) = 1 / (z ln(lam))`` on ``[eps/lam, eps]``,
which integrates to one and gives closed forms for ``V``, ``V'`` and
``V''``.  ``lam`` is carried through its logarithm so that the customary
choice ``lam = exp(1/eps)`` stays finite for small ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class UndefinedPointError(ValueError):
    pass


@dataclass(frozen=True)
class YWFunction:
    eps: float
    log_lambda: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.log_lambda is None:
            object.__setattr__(self, "log_lambda", 1.0 / self.eps)
        if not self.log_lambda > 0:
            raise ValueError("lambda must exceed 1")

    @classmethod
    def with_lambda(cls, eps: float, lam: float) -> YWFunction:
        if not lam > 1:
            raise ValueError("lambda must exceed 1")
        return cls(eps, math.log(lam))

    @property
    def lam(self) -> float:
        return math.exp(self.log_lambda)

    @property
    def lower(self) -> float:
        """Left end of the support, eps / lambda."""
        return self.eps * math.exp(-self.log_lambda)

    @property
    def normalization(self) -> float:
        return 1.0 / self.log_lambda

    def phi_integral(self) -> float:
        # int_{eps/lam}^{eps} dz / (z ln lam) = (ln eps - ln(eps/lam)) / ln lam
        return (math.log(self.eps) - math.log(self.lower)) / self.log_lambda


def _lower(eps, L):
    return eps * np.exp(-L)


def _ramp(r, eps, L):
    # ln(lam r / eps) / ln(lam), written to avoid forming lam
    with np.errstate(divide="ignore"):
        return (L + np.log(r) - np.log(eps)) / L


def _phi(r, eps, L):
    inside = (r >= _lower(eps, L)) & (r <= eps)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(inside, 1.0 / (r * L), 0.0)


def _V(r, eps, L):
    lo = _lower(eps, L)
    mid = np.clip(r, lo, eps)
    ramp_part = (mid * L * _ramp(mid, eps, L) - mid + lo) / L
    return np.where(r <= lo, 0.0, np.where(r <= eps, ramp_part, r - (eps - lo) / L))


def _Vp_mag(r, eps, L):
    lo = _lower(eps, L)
    mid = np.clip(r, lo, eps)
    return np.where(r <= lo, 0.0, np.where(r >= eps, 1.0, np.clip(_ramp(mid, eps, L), 0.0, 1.0)))


def _scalar(out):
    return out if out.ndim else float(out)


def phi(fn: YWFunction, z):
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0):
        raise ValueError("phi is defined on z >= 0")
    return _scalar(_phi(z, fn.eps, fn.log_lambda))


def V(fn: YWFunction, x):
    r = np.abs(np.asarray(x, dtype=np.float64))
    return _scalar(_V(r, fn.eps, fn.log_lambda))


def V_prime(fn: YWFunction, x):
    x = np.asarray(x, dtype=np.float64)
    return _scalar(np.sign(x) * _Vp_mag(np.abs(x), fn.eps, fn.log_lambda))


def V_double_prime(fn: YWFunction, x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x == 0):
        raise UndefinedPointError("V'' is not defined at x = 0")
    return _scalar(_phi(np.abs(x), fn.eps, fn.log_lambda))


def bound_violations(eps, x) -> dict[str, float]:
    """Largest violation of the smoothing inequalities over probe pairs.

    ``eps`` and ``x`` broadcast together and each pair uses
    ``lam = exp(1/eps)``.  An entry is positive only when an inequality
    fails; ``x = 0`` probes are skipped for the ``V''`` checks.
    """
    eps, x = np.broadcast_arrays(np.asarray(eps, dtype=np.float64), np.asarray(x, dtype=np.float64))
    if np.any((eps <= 0) | (eps >= 1)):
        raise ValueError("eps must lie in (0, 1)")
    L = 1.0 / eps
    r = np.abs(x)
    v = _V(r, eps, L)
    vp = _Vp_mag(r, eps, L)  # sgn(x) V'(x)
    nz = r > 0
    rn, en, Ln = r[nz], eps[nz], L[nz]
    vpp = _phi(rn, en, Ln)
    outside = (rn < _lower(en, Ln)) | (rn > en)

    def worst(a):
        return float(np.max(a, initial=-np.inf))

    return {
        "V_lower": worst((r - eps) - v),
        "V_upper": worst(v - r),
        "Vp_range": worst(np.maximum(-vp, vp - 1.0)),
        "Vpp_range": worst(np.maximum(-vpp, vpp - 2.0 / (rn * Ln))),
        "Vpp_support": worst(np.where(outside, np.abs(vpp), -np.inf)),
    }


def probe_points(n: int, rng: np.random.Generator, eps_range=(0.01, 0.5)) -> tuple[np.ndarray, np.ndarray]:
    """Random ``(eps, x)`` pairs; half log-uniform across the ramp, half plain uniform."""
    eps = rng.uniform(eps_range[0], eps_range[1], n)
    L = 1.0 / eps
    m = n // 2
    log_r = np.log(eps[:m]) + rng.uniform(-1.1 * L[:m] - 1.0, 1.0, m)
    x = np.concatenate([np.exp(log_r), rng.uniform(0.0, 2.0, n - m)])
    return eps, x * rng.choice([-1.0, 1.0], n)


def finite_difference_errors(eps, x, rel_step: float = 1e-5, knot_gap: float = 10.0) -> dict[str, float]:
    """Central differences of ``V`` and ``V'`` against the closed forms.

    The step is ``rel_step * |x|`` so the check is scale free down to the
    lower knot, which can sit far below machine epsilon in absolute terms.
    Points within ``knot_gap`` steps of a knot (or at 0) are skipped.  Errors
    are measured as ``|fd - exact| / max(1, |exact|)``.
    """
    eps, x = np.broadcast_arrays(np.asarray(eps, dtype=np.float64), np.asarray(x, dtype=np.float64))
    L = 1.0 / eps
    r = np.abs(x)
    dx = rel_step * r
    lo = _lower(eps, L)
    keep = (r > 0) & (np.abs(r - lo) > knot_gap * dx) & (np.abs(r - eps) > knot_gap * dx)
    e, Lk, xk, hk = eps[keep], L[keep], x[keep], dx[keep]
    s = np.sign(xk)

    def Vs(y):
        return _V(np.abs(y), e, Lk)

    def Vps(y):
        return np.sign(y) * _Vp_mag(np.abs(y), e, Lk)

    # differences taken on the side-consistent pair (x - h, x + h), same sign as x
    fd1 = (Vs(xk + hk) - Vs(xk - hk)) / (2 * hk)
    fd2 = (Vps(xk + hk) - Vps(xk - hk)) / (2 * hk)
    ex1 = s * _Vp_mag(np.abs(xk), e, Lk)
    ex2 = _phi(np.abs(xk), e, Lk)

    def worst(fd, ex):
        return float(np.max(np.abs(fd - ex) / np.maximum(1.0, np.abs(ex)), initial=0.0))

    return {"V_prime": worst(fd1, ex1), "V_double_prime": worst(fd2, ex2), "checked": int(keep.sum())}
