"""Acceptance criteria, each at its stated tolerance and runtime budget.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per criterion
is printed in the terminal summary.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from mvjump import cli
from mvjump.drivers import DriverBundle, SeedPlan, couple
from mvjump.measure import EmpiricalMeasure, wasserstein_oracle, wasserstein_p
from mvjump.model import InitialLaw, builtin_model
from mvjump.solver import BlowUpError, SimGrid, picard_flow, simulate_interacting
from mvjump.study import (chaos_error, euler_error, fg_rate, fit_rate, non_increasing_within,
                          picard_is_contracting)
from mvjump.yamada import bound_violations, finite_difference_errors, probe_points

SEED = SeedPlan(20260101)


class Clock:
    def __init__(self, budget):
        self.budget = budget

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0

    def check(self):
        assert self.elapsed < self.budget, f"took {self.elapsed:.1f}s, budget {self.budget}s"


def note(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.mark.criterion(1, "Wasserstein sorted coupling equals permutation oracle")
def test_c01_wasserstein_oracle(request):
    rng = np.random.default_rng(1)
    worst = 0.0
    with Clock(10) as clock:
        for _ in range(500):
            n = int(rng.integers(1, 7))
            p = float(rng.choice([1.0, 2.0]))
            mu = EmpiricalMeasure(rng.normal(0, 3, n))
            nu = EmpiricalMeasure(rng.standard_cauchy(n))
            worst = max(worst, abs(wasserstein_p(mu, nu, p) - wasserstein_oracle(mu, nu, p)))
    note(request, f"max |diff| {worst:.2e}, {clock.elapsed:.1f}s")
    assert worst <= 1e-12
    clock.check()


@pytest.mark.criterion(2, "Yamada-Watanabe bounds and derivative consistency")
def test_c02_yamada_bounds(request):
    with Clock(10) as clock:
        eps, x = probe_points(100_000, np.random.default_rng(2), (0.01, 0.5))
        viol = bound_violations(eps, x)
        fd = finite_difference_errors(eps, x)
    note(request, f"max violation {max(viol.values()):.2e}, fd error "
                  f"{max(fd['V_prime'], fd['V_double_prime']):.2e}, {clock.elapsed:.1f}s")
    assert all(v <= 1e-12 for v in viol.values()), viol
    assert fd["V_prime"] < 1e-6 and fd["V_double_prime"] < 1e-6
    assert fd["checked"] > 99_000
    clock.check()


@pytest.mark.criterion(3, "Coupling soundness: degenerate errors are exactly zero")
def test_c03_coupling_soundness(request):
    with Clock(60) as clock:
        m = builtin_model("M_OU", {"c": 0})
        chaos = chaos_error(m, 64, SimGrid(1.0, 2**-8), 4, 2, SEED)
        full = builtin_model("M_OU")
        same_frozen = euler_error(full, 64, [2**-8], 2**-8, 4, 2, SEED, ref_mode="frozen")
        same_cont = euler_error(full, 64, [2**-8], 2**-8, 4, 2, SEED, ref_mode="continuous")
    note(request, f"chaos {chaos.estimate!r}, euler {same_frozen[0].estimate!r}/{same_cont[0].estimate!r}, "
                  f"{clock.elapsed:.1f}s")
    assert chaos.estimate == 0.0
    assert same_frozen[0].estimate == 0.0 and same_cont[0].estimate == 0.0
    clock.check()


@pytest.mark.criterion(4, "Deterministic limit: explicit Euler order one")
def test_c04_deterministic_limit(request):
    hs = [2**-4, 2**-6, 2**-8]
    with Clock(10) as clock:
        m = builtin_model("M_OU", {"a": 1, "c": 0, "s": 0, "g0": 0, "g1": 0})
        errs = []
        for h in hs:
            b = DriverBundle.for_model(SEED, "ode", 1.0, m, InitialLaw.dirac(1.0))
            errs.append(abs(simulate_interacting(m, 1, SimGrid(1.0, h), b).positions[-1, 0] - math.exp(-1.0)))
        slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    note(request, f"errors {[f'{e:.2e}' for e in errs]}, slope {slope:.3f}")
    for e, h in zip(errs, hs):
        assert e <= 2 * h
    assert 0.9 <= slope <= 1.1
    clock.check()


@pytest.mark.criterion(5, "Moment bounds stable under step refinement")
def test_c05_moment_bounds(request):
    with Clock(120) as clock:
        m = builtin_model("M_OU")
        b = couple(DriverBundle.for_model(SEED, "moments", 1.0, m, InitialLaw()), [("moments", 1.0)])
        try:
            coarse = simulate_interacting(m, 256, SimGrid(1.0, 2**-6), b)
            fine = simulate_interacting(m, 256, SimGrid(1.0, 2**-8), b)
        except BlowUpError as exc:  # pragma: no cover - reported as failure
            pytest.fail(f"blow-up: {exc}")
        ratios = {p: coarse.sup_moment(p) / fine.sup_moment(p) for p in (2, 4)}
    note(request, ", ".join(f"p={p}: {r:.4f}" for p, r in ratios.items()))
    for r in ratios.values():
        assert 0.5 <= r <= 2
    clock.check()


@pytest.mark.criterion(6, "Propagation of chaos: error decays in N")
def test_c06_propagation_of_chaos(request):
    with Clock(600) as clock:
        m = builtin_model("M_CHAOS")
        samples = [chaos_error(m, N, SimGrid(1.0, 2**-8), 16, 2, SEED) for N in (8, 32, 128, 512)]
        rep = fit_rate(samples)
    note(request, f"estimates {[f'{s.estimate:.2e}' for s in samples]}, slope {rep.slope:.3f}, "
                  f"{clock.elapsed:.0f}s")
    assert non_increasing_within(samples, 2.0)
    assert rep.slope <= -0.25
    clock.check()


@pytest.mark.criterion(7, "Euler rate envelope for the Lipschitz model")
def test_c07_euler_rate(request):
    with Clock(900) as clock:
        m = builtin_model("M_OU")
        samples = euler_error(m, 256, [2.0**-k for k in range(4, 9)], 2**-11, 16, 2, SEED)
        rep = fit_rate(samples)
    note(request, f"slope {rep.slope:.3f}, {clock.elapsed:.0f}s")
    assert rep.slope >= 0.4
    clock.check()


@pytest.mark.criterion(8, "Empirical measure rate for a Gaussian law")
def test_c08_empirical_measure_rate(request):
    with Clock(120) as clock:
        rep = fg_rate(InitialLaw.make("normal", mean=0.0, std=1.0), [16, 64, 256, 1024], 64, SEED)
    note(request, f"slope {rep.slope:.3f}")
    assert rep.slope <= -0.4
    clock.check()


@pytest.mark.criterion(9, "Picard iteration contracts and terminates")
def test_c09_picard(request):
    with Clock(300) as clock:
        m = builtin_model("M_CHAOS")
        b = DriverBundle.for_model(SEED, "picard", 1.0, m, InitialLaw())
        _, diag = picard_flow(m, 512, SimGrid(1.0, 2**-8), b, 10, 1e-3)
    note(request, f"{diag.iterations} iterations, distances {[f'{d:.1e}' for d in diag.distances]}")
    assert picard_is_contracting(diag.distances, burn_in=2)
    assert diag.converged and diag.iterations < 10
    clock.check()


CLI_RUNS = {
    "fg-rate": "experiment: fg-rate\nN_list: [16, 64, 256, 1024]\nR: 64\n",
    "picard": "experiment: picard\nmodel: M_CHAOS\nM: 512\ntol: 1.0e-3\nk_max: 10\n",
    "euler-rate": "experiment: euler-rate\nmodel: M_OU\nN: 256\nR: 16\nh_ref: 0.00048828125\n",
    "chaos": "experiment: chaos\nmodel: M_OU\nparams: {c: 0}\nN_list: [64]\nR: 4\n",
}


@pytest.mark.criterion(10, "Determinism across thread counts")
def test_c10_determinism(request, tmp_path):
    digests = {}
    for name, text in CLI_RUNS.items():
        cfg = tmp_path / f"{name}.yaml"
        cfg.write_text(text)
        per_threads = []
        for threads in (1, 8):
            out = tmp_path / f"{name}-{threads}"
            assert cli.main([name, "--config", str(cfg), "--threads", str(threads), "--out", str(out)]) == 0
            files = sorted(out.glob("*.csv"))
            assert files
            per_threads.append([f.read_bytes() for f in files])
            manifest = json.loads(next(out.glob("*manifest.json")).read_text())
            digests[(name, threads)] = [e["sha256"] for e in manifest["files"]]
        assert per_threads[0] == per_threads[1], name
        assert digests[(name, 1)] == digests[(name, 8)]
    note(request, f"{len(CLI_RUNS)} experiments byte-identical")
