import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvjump.drivers import SeedPlan
from mvjump.model import InitialLaw, builtin_model
from mvjump.solver import SimGrid
from mvjump.study import (ErrorSample, RateFitError, chaos_error, euler_error, fg_rate, fg_samples, fit_rate,
                          non_increasing_within, picard_is_contracting, write_samples_csv)

PLAN = SeedPlan(99)


def samples(xs, ys):
    return [ErrorSample(x, 4, y, 0.0) for x, y in zip(xs, ys)]


def test_fit_exact_line():
    rep = fit_rate(samples([1, 2, 4], [1, 2, 4]))
    assert rep.slope == pytest.approx(1.0, abs=1e-12)
    assert rep.residual == pytest.approx(0.0, abs=1e-12)


def test_fit_noisy_root():
    rng = np.random.default_rng(5)
    x = np.geomspace(1e-3, 1, 8)
    y = 3 * x**0.5 * (1 + rng.uniform(-0.01, 0.01, x.size))
    assert 0.45 <= fit_rate(samples(x, y)).slope <= 0.55


def test_fit_constant_and_zero_exclusion():
    assert fit_rate(samples([1, 2, 4], [3, 3, 3])).slope == pytest.approx(0.0, abs=1e-12)
    rep = fit_rate(samples([1, 2, 4, 8], [0, 1, 2, 4]))
    assert rep.slope == pytest.approx(1.0)
    assert rep.notes and "param=1" in rep.notes[0]
    with pytest.raises(RateFitError):
        fit_rate(samples([1, 2, 4], [0, 1, 2]))


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_fit_recovers_power_laws(k, c):
    x = np.array([1e-2, 1e-1, 1.0, 3.0])
    rep = fit_rate(samples(x, c * x**k))
    assert rep.slope == pytest.approx(k, abs=1e-9)


def test_error_sample_preconditions():
    with pytest.raises(ValueError):
        ErrorSample.from_replications(8, [0.1], 2)
    s = ErrorSample.from_replications(8, [1.0, 3.0], 2)
    assert s.estimate == 2.0 and s.se == pytest.approx(1.0) and s.R == 2


def test_csv_and_manifest_line(tmp_path):
    ss = samples([1, 2, 4], [1, 2, 4])
    rep = fit_rate(ss, theory_slope=1.0, theory_note="x")
    f = rep.to_csv(tmp_path / "r.csv")
    lines = f.read_text().splitlines()
    assert lines[0] == "param,estimate,se,R"
    assert lines[1] == "1.0,1.0,0.0,4"
    payload = json.loads(rep.manifest_line(seed=3))
    assert payload["theory_slope"] == 1.0 and payload["seed"] == 3
    assert write_samples_csv(tmp_path / "s.csv", ss).read_bytes() == f.read_bytes()


def test_chaos_error_without_interaction_is_exactly_zero():
    m = builtin_model("M_OU", {"c": 0})
    s = chaos_error(m, 16, SimGrid(1.0, 2**-5), 3, 2, PLAN)
    assert s.estimate == 0.0 and s.se == 0.0
    with pytest.raises(ValueError):
        chaos_error(m, 16, SimGrid(1.0, 2**-5), 1, 2, PLAN)
    with pytest.raises(ValueError):
        chaos_error(m, 16, SimGrid(1.0, 2**-5), 2, 3, PLAN)


def test_chaos_error_decreases_with_N():
    m = builtin_model("M_CHAOS")
    g = SimGrid(1.0, 2**-6)
    small = chaos_error(m, 8, g, 8, 2, PLAN)
    big = chaos_error(m, 256, g, 8, 2, PLAN)
    assert big.estimate < small.estimate


def test_euler_error_degenerate_and_trend(caplog):
    m = builtin_model("M_OU")
    with caplog.at_level(logging.WARNING):
        zero = euler_error(m, 16, [2**-6], 2**-6, 2, 2, PLAN, ref_mode="frozen")
    assert zero[0].estimate == 0.0
    assert "h_ref" in caplog.text
    out = euler_error(m, 32, [2**-3, 2**-4, 2**-5], 2**-8, 4, 2, PLAN)
    assert out[0].estimate > out[1].estimate > out[2].estimate


def test_euler_error_zero_noise_matches_ode_gap():
    m = builtin_model("M_OU", {"c": 0, "s": 0, "g0": 0, "g1": 0})
    hs = [2**-3, 2**-4, 2**-5, 2**-6]
    out = euler_error(m, 1, hs, 2**-10, 2, 1, PLAN, InitialLaw.dirac(1.0))
    # gap of two explicit Euler solutions of x' = -x, sup over the reference grid
    t = np.linspace(0, 1, 2**10 + 1)
    ref = (1 - 2**-10) ** np.arange(t.size)
    for s, h in zip(out, hs):
        coarse = (1 - h) ** (np.floor(t / h))
        frozen = coarse * (1 - (t - np.floor(t / h) * h))
        assert s.estimate == pytest.approx(np.max(np.abs(frozen - ref)), rel=1e-9)
    assert fit_rate(out).slope == pytest.approx(1.0, abs=0.1)


def test_euler_error_rejects_non_nested_grids():
    m = builtin_model("M_OU")
    with pytest.raises(ValueError):
        euler_error(m, 4, [3 * 2**-8], 2**-8, 2, 2, PLAN)
    with pytest.raises(ValueError):
        euler_error(m, 4, [2**-9], 2**-8, 2, 2, PLAN)


def test_fg_point_mass_and_preconditions():
    out = fg_samples(InitialLaw.dirac(1.5), [4, 8, 16], 2, PLAN)
    assert all(s.estimate == 0 for s in out)
    with pytest.raises(RateFitError):
        fg_rate(InitialLaw.dirac(1.5), [4, 8, 16], 2, PLAN)
    with pytest.raises(RateFitError):
        fg_rate(InitialLaw(), [16, 64], 4, PLAN)


def test_fg_gaussian_rate():
    rep = fg_rate(InitialLaw.make("normal", mean=0, std=1), [16, 64, 256, 1024], 32, PLAN)
    assert rep.slope <= -0.5
    assert rep.theory_slope == -0.5


def test_threads_do_not_change_results():
    m = builtin_model("M_CHAOS")
    g = SimGrid(1.0, 2**-5)
    a = chaos_error(m, 8, g, 4, 2, PLAN, threads=1)
    b = chaos_error(m, 8, g, 4, 2, PLAN, threads=4)
    assert a == b


def test_trend_helpers():
    assert picard_is_contracting([1.0, 0.5, 0.2, 0.1])
    assert picard_is_contracting([0.1, 0.5, 0.2, 0.1])  # first step is burn-in
    assert not picard_is_contracting([1.0, 0.5, 0.6])
    ok = [ErrorSample(8, 4, 1.0, 0.1), ErrorSample(32, 4, 1.15, 0.1), ErrorSample(128, 4, 0.5, 0.1)]
    assert non_increasing_within(ok)
    assert not non_increasing_within([ErrorSample(8, 4, 1.0, 0.01), ErrorSample(32, 4, 1.5, 0.01)])
