import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvjump.measure import EmpiricalMeasure
from mvjump.model import (BUILTIN_MODELS, Constants, InitialLaw, MarkMeasure, ModelSpec, NonFiniteCoefficientError,
                          ProbePlan, UnsupportedConfigurationError, builtin_model, compensator_integral,
                          validate_assumptions)

CLOUD = EmpiricalMeasure([0.0, 1.0, -2.0])


def _custom(b1=None, f0=None, nu0=None, sigma=None, consts=None):
    zero = lambda x, mu: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    return ModelSpec(
        b1=b1 or zero, b2=zero,
        sigma=sigma or (lambda x: np.zeros_like(np.asarray(x, dtype=float))),
        f0=f0 or (lambda x, mu, u: np.zeros(np.broadcast(np.asarray(x), np.asarray(u)).shape)),
        f1=lambda x, mu, u: np.zeros(np.broadcast(np.asarray(x), np.asarray(u)).shape),
        nu0=nu0 or MarkMeasure.zero(), nu1=MarkMeasure.zero(), alpha=1.0, beta=1.0,
        constants=consts or Constants(1, 1, 1, 1, 1, 1),
    )


def test_builtin_ode_model():
    m = builtin_model("M_OU", {"a": 1, "c": 0, "s": 0, "g0": 0, "g1": 0})
    x = np.array([1.0, -2.0])
    assert np.array_equal(m.drift(x, CLOUD), -x)
    assert np.all(m.sigma(x) == 0)
    assert m.nu0.total_mass == 1.0  # marks exist but the coefficients vanish
    assert np.all(m.f0(x[:, None], CLOUD, np.array([1.0, -1.0])) == 0)


def test_builtin_holder_echo_and_errors():
    m = builtin_model("M_HOLDER", {"alpha": 0.5, "beta": 0.5})
    assert m.alpha == 0.5 and m.beta == 0.5
    assert set(BUILTIN_MODELS) == {"M_OU", "M_CHAOS", "M_HOLDER"}
    with pytest.raises(ValueError):
        builtin_model("M_NOPE", {})
    with pytest.raises(ValueError):
        builtin_model("M_OU", {"zeta": 1})
    with pytest.raises(ValueError):
        builtin_model("M_HOLDER", {"alpha": 0.3})
    with pytest.raises(ValueError):
        builtin_model("M_CHAOS", {"c": 0})
    with pytest.raises(ValueError):
        builtin_model("M_OU", {"s": -1})


@pytest.mark.parametrize("name,params", [
    ("M_OU", {"a": 1, "c": 0.5, "s": 0.2, "g0": 0.1, "g1": 0.1}),
    ("M_CHAOS", {}),
    ("M_HOLDER", {}),
    ("M_HOLDER", {"s": 1.0, "alpha": 0.5, "beta": 1.0}),
])
def test_builtin_models_pass_validation(name, params):
    rep = validate_assumptions(builtin_model(name, params), ProbePlan(n_probes=1000))
    assert rep.passed, rep.summary()
    assert all(r <= 0 for r in rep.ratios.values()), rep.summary()


def test_holder_sqrt_diffusion_constant_is_sharp_enough():
    # ||x|^1/2 - |y|^1/2| <= |x - y|^1/2 with K2 = 1; the probe maximum gets close to 1
    m = builtin_model("M_HOLDER", {"s": 1.0, "alpha": 0.5})
    assert m.constants.K2 == 1.0
    rep = validate_assumptions(m, ProbePlan(n_probes=1000))
    assert -0.05 < rep.ratios["sigma_holder"] <= 0


def test_increasing_drift_fails_monotonicity():
    m = _custom(b1=lambda x, mu: np.asarray(x, dtype=float))
    rep = validate_assumptions(m, ProbePlan(n_probes=200))
    assert not rep.passed
    assert "b1_monotone" in rep.failures
    assert "FAIL" in rep.summary()


def test_non_finite_coefficient_names_probe():
    m = _custom(sigma=lambda x: np.where(np.asarray(x) > 3, np.nan, 0.0))
    with pytest.raises(NonFiniteCoefficientError, match="sigma"):
        validate_assumptions(m, ProbePlan(n_probes=100))


def test_compensator_examples():
    assert compensator_integral(_custom(), 1.0, CLOUD) == 0
    sym = _custom(f0=lambda x, mu, u: u + 0 * x, nu0=MarkMeasure.discrete([1, -1], [0.5, 0.5]))
    assert compensator_integral(sym, 3.0, CLOUD) == 0
    lin = _custom(f0=lambda x, mu, u: x * u, nu0=MarkMeasure.discrete([1, 2], [0.3, 0.2]))
    assert compensator_integral(lin, 2.0, CLOUD) == pytest.approx(1.4, abs=1e-15)
    assert np.allclose(compensator_integral(lin, np.array([1.0, 2.0]), CLOUD), [0.7, 1.4])


def test_continuous_marks_need_quadrature():
    m = _custom(f0=lambda x, mu, u: u**2 + 0 * x, nu0=MarkMeasure.continuous("normal", 2.0, loc=0, scale=1))
    with pytest.raises(UnsupportedConfigurationError):
        compensator_integral(m, 0.0, CLOUD)
    q = _custom(f0=lambda x, mu, u: u**2 + 0 * x,
                nu0=MarkMeasure.continuous("normal", 2.0, quadrature=8, loc=0, scale=1))
    val, err = compensator_integral(q, 0.0, CLOUD, return_error=True)
    assert val == pytest.approx(2.0, rel=1e-12)  # total mass times E u^2
    assert err < 1e-12
    u = _custom(f0=lambda x, mu, u: u + 0 * x, nu0=MarkMeasure.continuous("uniform", 3.0, quadrature=4, low=0, high=2))
    assert compensator_integral(u, 0.0, CLOUD) == pytest.approx(3.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-10, 10))
def test_compensator_linearity(a, b, x):
    nu = MarkMeasure.discrete([1.0, -0.5, 2.0], [0.2, 0.7, 0.1])
    f, g = (lambda x, mu, u: u * x), (lambda x, mu, u: u**2 + 0 * x)
    mf, mg = _custom(f0=f, nu0=nu), _custom(f0=g, nu0=nu)
    mix = _custom(f0=lambda x, mu, u: a * f(x, mu, u) + b * g(x, mu, u), nu0=nu)
    lhs = compensator_integral(mix, x, CLOUD)
    rhs = a * compensator_integral(mf, x, CLOUD) + b * compensator_integral(mg, x, CLOUD)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_mark_measure_sampling_and_validation():
    nu = MarkMeasure.discrete([1, -1], [0.75, 0.25])
    assert list(nu.sample(np.array([0.1, 0.74, 0.76, 0.999]))) == [1, 1, -1, -1]
    with pytest.raises(ValueError):
        MarkMeasure.discrete([1], [-1])
    with pytest.raises(ValueError):
        MarkMeasure.continuous("cauchy", 1.0)
    assert MarkMeasure.symmetric(0) == MarkMeasure.zero()


def test_initial_law_moments():
    assert InitialLaw.dirac(2.0).moment(3) == 8
    assert InitialLaw.make("normal", mean=0, std=1).moment(2) == pytest.approx(1.0)
    assert InitialLaw.make("normal", mean=0, std=1).moment(4) == pytest.approx(3.0)
    assert InitialLaw().moment(2) == pytest.approx(1.25)
    assert InitialLaw.make("uniform", low=-1, high=1).moment(2) == pytest.approx(1 / 3)
    assert InitialLaw.make("normal", mean=1, std=1).moment(1.5) is None
    with pytest.raises(ValueError):
        InitialLaw.make("normal", mean=0)
    with pytest.raises(ValueError):
        InitialLaw.make("gamma", k=1)


def test_constants_positive():
    with pytest.raises(ValueError):
        Constants(1, 1, 0, 1, 1, 1)
    with pytest.raises(ValueError):
        _custom().__class__(**{**_custom().__dict__, "alpha": 0.2})


def test_params_read_only():
    m = builtin_model("M_OU")
    with pytest.raises(TypeError):
        m.params["a"] = 3
    assert math.isclose(m.params["c"], 0.5)
