"""Command-line front end: ``mvjump <experiment> [--config PATH] ...``.

Each run writes plot-ready CSV files plus a JSON manifest into the output
directory.  Exit status: 0 on success, 1 on a runtime failure such as a
blow-up, 2 on a bad configuration, 3 when ``--assert`` is set and an
envelope check fails (Picard non-convergence is one of those checks).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, ConfigError, RunConfig, from_mapping, parse_config
from .drivers import DriverBundle
from .measure import EmpiricalMeasure, read_cloud_csv, wasserstein_oracle, wasserstein_p
from .solver import BlowUpError, PicardWarning, SimGrid, picard_flow, simulate_interacting
from .study import (RateFitError, chaos_error, euler_error, fg_samples, fit_rate, non_increasing_within,
                    picard_is_contracting, write_samples_csv)
from .yamada import bound_violations, finite_difference_errors, probe_points

OUT_DIR_ENV = "MVJUMP_OUT_DIR"
DEFAULT_OUT_DIR = "mvjump-out"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_ASSERT = 0, 1, 2, 3

# envelope thresholds asserted with --assert
CHAOS_SLOPE_MAX = -0.25
EULER_SLOPE_MIN = 0.4
FG_SLOPE_MAX = -0.4
YW_TOL = 1e-12
FD_TOL = 1e-6
ORACLE_TOL = 1e-12

log = logging.getLogger("mvjump")


@dataclass
class Outcome:
    """What an experiment produced: summary numbers, envelope checks, CSV files."""

    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)  # name -> True / False / None (not applicable)
    files: list = field(default_factory=list)
    lines: list = field(default_factory=list)


def _stamp() -> str:
    return dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _rate_summary(samples, theory_slope, note, out: Outcome, name: str):
    try:
        rep = fit_rate(samples, theory_slope, note)
    except RateFitError as exc:
        out.summary[name] = {"slope": None, "note": str(exc)}
        return None
    out.summary[name] = json.loads(rep.manifest_line())
    out.lines.append(f"{name}: slope {rep.slope:.4f} (residual {rep.residual:.3g})")
    return rep


def _simulate(cfg: RunConfig, threads: int, prefix: Path) -> Outcome:
    model = cfg.model_spec()
    grid = SimGrid(cfg.T, cfg.h)
    bundle = DriverBundle.for_model(cfg.seed_plan(), "simulate", cfg.T, model, cfg.initial_law())
    path = simulate_interacting(model, cfg.N, grid, bundle, cfg.mode or "frozen")
    times = grid.times
    if cfg.checkpoints is None:
        ks = np.arange(times.size)
    else:
        ks = np.round(np.asarray(cfg.checkpoints) / grid.h).astype(np.int64)
    rows = ((repr(float(times[k])), int(i), repr(float(path.positions[k, i]))) for k in ks for i in range(cfg.N))
    f = _csv(prefix.with_name(prefix.name + "-trajectory.csv"), ["time", "particle", "position"], rows)
    out = Outcome(files=[f])
    out.summary = {
        "model": model.name, "N": cfg.N, "h": cfg.h, "T": cfg.T, "mode": path.mode,
        "sup_moment_2": path.sup_moment(2), "final_mean": float(path.positions[-1].mean()),
        "jumps": int(path.jump_times.size),
    }
    out.lines.append(f"simulate: {cfg.N} particles, {grid.n_steps} steps, final mean {out.summary['final_mean']:.6g}")
    return out


def _chaos(cfg: RunConfig, threads: int, prefix: Path) -> Outcome:
    model = cfg.model_spec()
    grid = SimGrid(cfg.T, cfg.h)
    samples = [chaos_error(model, N, grid, cfg.R, cfg.p, cfg.seed_plan(), cfg.initial_law(),
                           pool_size=cfg.M, threads=threads) for N in cfg.N_list]
    out = Outcome(files=[write_samples_csv(prefix.with_name(prefix.name + "-rates.csv"), samples)])
    rep = _rate_summary(samples, -0.5 if cfg.p == 2 else None, "N^(-1/2) branch for p=2", out, "chaos")
    out.checks["chaos_monotone"] = non_increasing_within(samples)
    out.checks["chaos_slope"] = None if rep is None else rep.slope <= CHAOS_SLOPE_MAX
    return out


def _euler(cfg: RunConfig, threads: int, prefix: Path) -> Outcome:
    model = cfg.model_spec()
    samples = euler_error(model, cfg.N, cfg.h_list, cfg.h_ref, cfg.R, cfg.p, cfg.seed_plan(), cfg.initial_law(),
                          T=cfg.T, ref_mode=cfg.mode or "continuous", threads=threads)
    out = Outcome(files=[write_samples_csv(prefix.with_name(prefix.name + "-rates.csv"), samples)])
    lipschitz = model.alpha == 1 and model.beta == 1 and cfg.p == 2
    theory = min(2 * model.alpha - 1, model.beta) if cfg.p == 2 else None
    rep = _rate_summary(samples, theory, "envelope h^(1/2) asserted for alpha = beta = 1, p = 2", out, "euler")
    out.checks["euler_slope"] = None if rep is None or not lipschitz else rep.slope >= EULER_SLOPE_MIN
    return out


def _fg(cfg: RunConfig, threads: int, prefix: Path) -> Outcome:
    samples = fg_samples(cfg.initial_law(), cfg.N_list, cfg.R, cfg.seed_plan(), threads)
    out = Outcome(files=[write_samples_csv(prefix.with_name(prefix.name + "-rates.csv"), samples)])
    rep = _rate_summary(samples, -0.5, "upper envelope N^(-1/2) for E W2^2 in one dimension", out, "fg")
    out.checks["fg_slope"] = None if rep is None else rep.slope <= FG_SLOPE_MAX
    return out


def _picard(cfg: RunConfig, threads: int, prefix: Path) -> Outcome:
    model = cfg.model_spec()
    grid = SimGrid(cfg.T, cfg.h)
    bundle = DriverBundle.for_model(cfg.seed_plan(), "picard", cfg.T, model, cfg.initial_law())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PicardWarning)
        _, diag = picard_flow(model, cfg.M, grid, bundle, cfg.k_max, cfg.tol)
    rows = ((k + 1, repr(d)) for k, d in enumerate(diag.distances))
    out = Outcome(files=[_csv(prefix.with_name(prefix.name + "-picard.csv"), ["iteration", "distance"], rows)])
    out.summary = {"iterations": diag.iterations, "converged": diag.converged, "warning": diag.warning,
                   "distances": diag.distances}
    out.checks["picard_converged"] = diag.converged
    out.checks["picard_contracting"] = picard_is_contracting(diag.distances)
    out.lines.append(f"picard: {diag.iterations} iterations, last distance {diag.distances[-1]:.3e}")
    return out


def _yw(cfg: RunConfig, threads: int, prefix: Path) -> Outcome:
    rng = np.random.default_rng(cfg.master_seed)
    eps, x = probe_points(cfg.n_probes, rng, tuple(cfg.eps_range))
    bounds = bound_violations(eps, x)
    fd = finite_difference_errors(eps, x)
    rows = [(k, repr(v)) for k, v in bounds.items()]
    rows += [(f"fd_{k}", repr(v)) for k, v in fd.items() if k != "checked"]
    out = Outcome(files=[_csv(prefix.with_name(prefix.name + "-yw.csv"), ["check", "value"], rows)])
    worst = max(bounds.values())
    out.summary = {"max_violation": worst, **bounds, "fd": fd, "n_probes": cfg.n_probes}
    out.checks["yw_bounds"] = worst <= YW_TOL
    out.checks["yw_finite_difference"] = max(fd["V_prime"], fd["V_double_prime"]) <= FD_TOL
    verdict = "PASS" if all(out.checks.values()) else "FAIL"
    out.lines.append(f"{verdict} yw-check: {cfg.n_probes} probes, max bound violation {worst:.3e}, "
                     f"max finite-difference error {max(fd['V_prime'], fd['V_double_prime']):.3e}")
    return out


def _wasserstein(cfg: RunConfig, threads: int, prefix: Path) -> Outcome:
    if cfg.cloud_a is not None:
        a, b = read_cloud_csv(cfg.cloud_a), read_cloud_csv(cfg.cloud_b)
        d = wasserstein_p(a, b, cfg.p)
        out = Outcome(files=[_csv(prefix.with_name(prefix.name + "-wasserstein.csv"), ["p", "distance"],
                                  [(repr(float(cfg.p)), repr(d))])])
        out.summary = {"distance": d, "p": cfg.p, "n": a.n}
        out.lines.append(f"W_{cfg.p:g} = {d!r}")
        return out
    rng = np.random.default_rng(cfg.master_seed)
    rows, worst = [], 0.0
    for k in range(cfg.n_probes):
        n = int(rng.integers(1, cfg.N + 1))
        p = float(rng.choice([1.0, 2.0]))
        mu, nu = EmpiricalMeasure(rng.normal(size=n)), EmpiricalMeasure(rng.normal(size=n) * 2 + 0.5)
        fast, slow = wasserstein_p(mu, nu, p), wasserstein_oracle(mu, nu, p)
        worst = max(worst, abs(fast - slow))
        rows.append((k, n, repr(p), repr(fast), repr(slow)))
    out = Outcome(files=[_csv(prefix.with_name(prefix.name + "-oracle.csv"),
                              ["pair", "n", "p", "sorted", "oracle"], rows)])
    out.summary = {"max_abs_difference": worst, "pairs": cfg.n_probes}
    out.checks["oracle_equivalence"] = worst <= ORACLE_TOL
    out.lines.append(f"wasserstein oracle: {cfg.n_probes} pairs, max |difference| {worst:.3e}")
    return out


_RUNNERS = {
    "simulate": _simulate,
    "chaos": _chaos,
    "euler-rate": _euler,
    "fg-rate": _fg,
    "picard": _picard,
    "yw-check": _yw,
    "wasserstein": _wasserstein,
}


def execute(cfg: RunConfig, threads: int = 1, out_dir=None) -> tuple[Outcome, Path]:
    """Run the experiment and write its CSV files; returns the outcome and the manifest path."""
    out_dir = Path(out_dir or cfg.out_dir or os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR))
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = _stamp()
    prefix = out_dir / f"{cfg.experiment}-{stamp}"
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "seed_plan": cfg.seed_plan().to_dict(),
        "threads": threads,
        "started": dt.datetime.now(dt.timezone.utc).isoformat(),
        "partial": False,
    }
    mpath = prefix.with_name(prefix.name + "-manifest.json")
    try:
        outcome = _RUNNERS[cfg.experiment](cfg, threads, prefix)
    except Exception as exc:
        partial = sorted(str(p) for p in out_dir.glob(f"{prefix.name}-*") if p != mpath)
        manifest.update(partial=True, error=f"{type(exc).__name__}: {exc}", finished=dt.datetime.now(
            dt.timezone.utc).isoformat(), files=[{"path": p, "sha256": _sha256(Path(p))} for p in partial])
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
        raise
    manifest.update(
        finished=dt.datetime.now(dt.timezone.utc).isoformat(),
        summary=outcome.summary,
        checks=outcome.checks,
        files=[{"path": str(f), "sha256": _sha256(f)} for f in outcome.files],
    )
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return outcome, mpath


def run(cfg: RunConfig, threads: int = 1, assert_mode: bool = False, out_dir=None,
        stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        outcome, mpath = execute(cfg, threads, out_dir)
    except BlowUpError as exc:
        print(f"error [solver]: {exc}", file=stderr)
        return EXIT_RUNTIME
    except (RateFitError, ValueError) as exc:
        print(f"error [{cfg.experiment}]: {exc}", file=stderr)
        return EXIT_RUNTIME
    for line in outcome.lines:
        print(line, file=stdout)
    for name, ok in outcome.checks.items():
        status = "n/a" if ok is None else ("pass" if ok else "FAIL")
        print(f"check {name}: {status}", file=stdout)
    print(f"manifest: {mpath}", file=stdout)
    failed = [name for name, ok in outcome.checks.items() if ok is False]
    if assert_mode and failed:
        print(f"envelope check failed: {', '.join(failed)}", file=stderr)
        return EXIT_ASSERT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvjump", description="Particle Monte Carlo for jump McKean-Vlasov SDEs.")
    parser.add_argument("--version", action="version", version=f"mvjump {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
        p.add_argument("--assert", dest="assert_mode", action="store_true",
                       help="exit nonzero when an envelope check fails")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(experiment: str, path: Path | None, seed: int | None) -> RunConfig:
    if path is None:
        cfg = from_mapping({"experiment": experiment})
    else:
        cfg = parse_config(path.read_text())
        if cfg.experiment != experiment:
            raise ConfigError(f"config declares {cfg.experiment!r} but subcommand is {experiment!r}",
                              field="experiment")
    if seed is not None:
        data = cfg.to_dict()
        data["master_seed"] = seed
        cfg = from_mapping(data)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.experiment, args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("config error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.threads, args.assert_mode, args.out)


if __name__ == "__main__":
    sys.exit(main())
