"""Run configuration: YAML parsing, validation, defaults, serialization."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

import yaml

from .drivers import SeedPlan
from .model import BUILTIN_MODELS, InitialLaw, builtin_model
from .solver import MODES, SimGrid

EXPERIMENTS = ("simulate", "chaos", "euler-rate", "fg-rate", "picard", "yw-check", "wasserstein")
DEFAULT_SEED = 20260101


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        prefix = f"{field}: " if field else ""
        super().__init__(f"{prefix}{message}{where}")
        self.field = field
        self.line = line
        self.column = column


@dataclass
class RunConfig:
    experiment: str
    model: str | None = None
    params: dict = field(default_factory=dict)
    initial: dict | None = None
    T: float = 1.0
    h: float | None = None
    h_list: list | None = None
    h_ref: float | None = None
    N: int | None = None
    N_list: list | None = None
    M: int | None = None
    R: int = 16
    p: float = 2
    tol: float | None = None
    k_max: int | None = None
    master_seed: int = DEFAULT_SEED
    out_dir: str | None = None
    mode: str | None = None
    checkpoints: list | None = None
    n_probes: int | None = None
    eps_range: list | None = None
    cloud_a: str | None = None
    cloud_b: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    def initial_law(self) -> InitialLaw:
        spec = dict(self.initial or {})
        if not spec:
            return InitialLaw()
        family = spec.pop("family", "normal")
        return InitialLaw.make(family, **spec)

    def model_spec(self):
        return builtin_model(self.model, self.params)

    def seed_plan(self) -> SeedPlan:
        return SeedPlan(self.master_seed)


FIELDS = tuple(f.name for f in dataclasses.fields(RunConfig))

# per-experiment defaults, matching the desk-scale acceptance runs
_EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"model": "M_OU", "N": 256, "h": 2**-8, "mode": "frozen"},
    "chaos": {"model": "M_CHAOS", "N_list": [8, 32, 128, 512], "h": 2**-8},
    "euler-rate": {"model": "M_OU", "N": 256, "h_list": [2.0**-k for k in range(4, 9)], "h_ref": 2**-11,
                   "mode": "continuous"},
    "fg-rate": {"initial": {"family": "normal", "mean": 0.0, "std": 1.0}, "N_list": [16, 64, 256, 1024], "R": 64},
    "picard": {"model": "M_CHAOS", "M": 512, "h": 2**-8, "tol": 1e-3, "k_max": 10},
    "yw-check": {"n_probes": 100_000, "eps_range": [0.01, 0.5]},
    "wasserstein": {"n_probes": 500, "N": 6},
}


class _UniqueKeyLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    seen = {}
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            mark = key_node.start_mark
            raise ConfigError(f"duplicate key {key!r}", field=str(key), line=mark.line + 1, column=mark.column + 1)
        seen[key] = True
    return loader.construct_mapping(node, deep=deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _load(text: str) -> dict:
    try:
        data = yaml.load(text, Loader=_UniqueKeyLoader)  # noqa: S506 - SafeLoader subclass
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ConfigError(f"malformed document: {exc.problem or exc}", line=line, column=col) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    return data


def _is_dyadic(ratio: float) -> bool:
    if ratio < 1:
        return False
    m = round(math.log2(ratio))
    return abs(ratio - 2**m) <= 1e-9 * ratio


def _num(name: str, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", field=name)
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"expected an integer, got {v!r}", field=name)
        return int(v)
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError("must be finite", field=name)
    return v


def _need(cfg: RunConfig, *names: str) -> None:
    for n in names:
        if getattr(cfg, n) is None:
            raise ConfigError(f"required for experiment {cfg.experiment}", field=n)


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.T <= 0:
        raise ConfigError("must be positive", field="T")
    for name in ("N", "M", "R", "k_max", "n_probes"):
        v = getattr(cfg, name)
        if v is not None:
            v = _num(name, v, int)
            lo = {"M": 2, "R": 2}.get(name, 1)
            if v < lo:
                msg = "R >= 2 is needed for a standard error" if name == "R" else f"must be at least {lo}"
                raise ConfigError(msg, field=name)
            setattr(cfg, name, v)
    if cfg.p not in (1, 2):
        raise ConfigError("only p in {1, 2} is supported", field="p")
    if cfg.tol is not None and not cfg.tol > 0:
        raise ConfigError("must be positive", field="tol")
    try:
        SeedPlan(cfg.master_seed)
    except ValueError as exc:
        raise ConfigError(str(exc), field="master_seed") from None
    if cfg.mode is not None and cfg.mode not in MODES:
        raise ConfigError(f"must be one of {list(MODES)}", field="mode")
    if cfg.h is not None:
        try:
            SimGrid(cfg.T, cfg.h)
        except ValueError as exc:
            raise ConfigError(str(exc), field="h") from None
    if cfg.h_list is not None:
        if not cfg.h_list:
            raise ConfigError("must not be empty", field="h_list")
        for h in cfg.h_list:
            if not 0 < h < 1 or not _is_dyadic(cfg.T / h):
                raise ConfigError(f"entry {h!r} is not dyadic: T/h must be a power of two", field="h_list")
    if cfg.h_ref is not None:
        if not 0 < cfg.h_ref < 1 or not _is_dyadic(cfg.T / cfg.h_ref):
            raise ConfigError(f"{cfg.h_ref!r} is not dyadic: T/h_ref must be a power of two", field="h_ref")
        if cfg.h_list and any(cfg.h_ref > h for h in cfg.h_list):
            raise ConfigError("must not exceed any entry of h_list", field="h_ref")
    if cfg.N_list is not None:
        if not cfg.N_list:
            raise ConfigError("must not be empty", field="N_list")
        cfg.N_list = [_num("N_list", n, int) for n in cfg.N_list]
        if min(cfg.N_list) < 1:
            raise ConfigError("entries must be at least 1", field="N_list")
    if cfg.checkpoints is not None:
        if cfg.h is None:
            raise ConfigError("needs h", field="checkpoints")
        for t in cfg.checkpoints:
            k = _num("checkpoints", t) / cfg.h
            if not 0 <= t <= cfg.T or abs(k - round(k)) > 1e-9:
                raise ConfigError(f"{t!r} is not a grid time", field="checkpoints")
    if cfg.eps_range is not None:
        if len(cfg.eps_range) != 2 or not 0 < cfg.eps_range[0] < cfg.eps_range[1] < 1:
            raise ConfigError("must be [low, high] with 0 < low < high < 1", field="eps_range")
    if cfg.model is not None:
        if cfg.model not in BUILTIN_MODELS:
            raise ConfigError(f"unknown model {cfg.model!r}; choose from {list(BUILTIN_MODELS)}", field="model")
        try:
            builtin_model(cfg.model, cfg.params)
        except ValueError as exc:
            raise ConfigError(str(exc), field="params") from None
    elif cfg.params:
        raise ConfigError("given without a model", field="params")
    if cfg.initial is not None:
        if not isinstance(cfg.initial, dict):
            raise ConfigError("must be a mapping with a family key", field="initial")
        try:
            cfg.initial_law()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), field="initial") from None
    if (cfg.cloud_a is None) != (cfg.cloud_b is None):
        raise ConfigError("cloud_a and cloud_b go together", field="cloud_a" if cfg.cloud_a is None else "cloud_b")

    exp = cfg.experiment
    if exp == "simulate":
        _need(cfg, "model", "N", "h")
    elif exp == "chaos":
        _need(cfg, "model", "N_list", "h")
    elif exp == "euler-rate":
        _need(cfg, "model", "N", "h_list", "h_ref")
    elif exp == "fg-rate":
        _need(cfg, "N_list")
    elif exp == "picard":
        _need(cfg, "model", "M", "h", "tol", "k_max")
    return cfg


def from_mapping(data: dict) -> RunConfig:
    data = dict(data)
    exp = data.get("experiment")
    if exp is None:
        raise ConfigError("missing", field="experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {list(EXPERIMENTS)}", field="experiment")
    unknown = sorted(set(data) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", field=unknown[0])
    merged = {**_EXPERIMENT_DEFAULTS[exp], **data}
    merged["params"] = dict(merged.get("params") or {})
    if "initial" in merged and merged["initial"] is not None:
        merged["initial"] = dict(merged["initial"])
    for name in ("T", "h", "h_ref", "tol", "p"):
        if merged.get(name) is not None:
            merged[name] = _num(name, merged[name])
    for name in ("h_list", "checkpoints", "eps_range"):
        if merged.get(name) is not None:
            if not isinstance(merged[name], list):
                raise ConfigError("expected a list", field=name)
            merged[name] = [_num(name, v) for v in merged[name]]
    if merged.get("N_list") is not None and not isinstance(merged["N_list"], list):
        raise ConfigError("expected a list", field="N_list")
    if "master_seed" in merged:
        merged["master_seed"] = _num("master_seed", merged["master_seed"], int)
    cfg = RunConfig(**merged)
    if cfg.M is None and cfg.N is not None and exp in ("chaos", "picard"):
        cfg.M = 64 * cfg.N
    return _validate(cfg)


def parse_config(text: str) -> RunConfig:
    """Parse a YAML run configuration and fill documented defaults."""
    return from_mapping(_load(text))


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
