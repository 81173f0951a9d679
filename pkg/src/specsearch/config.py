"""Experiment configuration: a single JSON file with explicit keys.

Unknown keys are hard errors (misspelled knobs must not silently fall back
to defaults) and every validation error names the offending field path.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .core import QualitySchedule
from .experiment import BaselineKind, CostModel, Scenario
from .generation import TokenModel
from .search import SearchConfig, SpecConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "config_defaults"]


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "mode": "theory",
    "master_seed": 20240601,
    "replicas": 200,
    "out_dir": "results",
    "baseline": "SpecSearch",
    "schedule": {
        "mu_p0": 0.85,
        "gamma": 0.999,
        "sigma_c": 0.05,
        "gap_ratio": 0.99,
        "sigma_q": 0.25,
    },
    "search": {
        "algorithm": "beam",
        "width": 6,
        "depth": 50,
        "beam_size": 2,
        "mcts_iterations": 4,
        "exploration_c": 1.0,
        "stop_rule": "fixed-depth",
        "stop_prob": 0.0,
        "chain_mode": "chained",
    },
    "speculative": {
        "theta": 0.9,
        "estimator": "mean",
        "init_estimator": "max-union",
        "ucb_z": 1.645,
        "draft_multiplier": 2,
        "extra_large_sample": True,
        "fixed_threshold": None,
        "flme_percent": None,
    },
    "cost": {
        "lambda_large": 0.01,
        "lambda_small": 0.0005,
        "sps_speedup": 2.0,
        "evaluator_cost": 0.0,
    },
    "evaluator": {"noise_std": 0.0},
    "tokens": {"kind": "constant", "value": 59},
    "sweep_theta": [0.8, 0.85, 0.9, 0.95],
}


def config_defaults() -> dict:
    return json.loads(json.dumps(_DEFAULTS))


def _merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    merged = {}
    for key, default_value in defaults.items():
        here = f"{path}.{key}" if path else key
        if key in overrides:
            value = overrides[key]
            if isinstance(default_value, dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"{here}: expected an object")
                merged[key] = _merge(default_value, value, here)
            else:
                merged[key] = value
        else:
            merged[key] = default_value
    for key in overrides:
        if key not in defaults:
            here = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key: {here}")
    return merged


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _check_number(raw, path: str, lo=None, hi=None, integer: bool = False) -> None:
    _require(isinstance(raw, (int, float)) and not isinstance(raw, bool), path, "expected a number")
    if integer:
        _require(float(raw).is_integer(), path, "expected an integer")
    if lo is not None:
        _require(raw >= lo, path, f"must be >= {lo}")
    if hi is not None:
        _require(raw <= hi, path, f"must be <= {hi}")


_THRESHOLD_WORDS = {"inf": math.inf, "-inf": -math.inf}


def _parse_threshold(raw, path: str):
    if raw is None:
        return None
    if isinstance(raw, str):
        if raw in _THRESHOLD_WORDS:
            return _THRESHOLD_WORDS[raw]
        if raw in ("mu_p", "mu_q"):
            return raw
        raise ConfigError(f"{path}: expected a number, 'inf', '-inf', 'mu_p' or 'mu_q'")
    _check_number(raw, path)
    return float(raw)


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment description."""

    mode: str
    master_seed: int
    replicas: int
    out_dir: str
    baseline: BaselineKind
    schedule: QualitySchedule
    search: SearchConfig
    spec: SpecConfig
    cost: CostModel
    theta: float
    estimator: str
    init_estimator: str
    ucb_z: float
    fixed_threshold: object
    flme_percent: float | None
    noise_std: float
    tokens: TokenModel
    sweep_theta: tuple[float, ...]
    raw: dict = field(repr=False, default_factory=dict)

    def scenario(self) -> Scenario:
        return Scenario(
            schedule=self.schedule,
            search=self.search,
            spec=self.spec,
            cost=self.cost,
            theta=self.theta,
            estimator=self.estimator,
            init_estimator=self.init_estimator,
            ucb_z=self.ucb_z,
            beta0=self.fixed_threshold,
            x_percent=self.flme_percent,
            mode=self.mode,
            noise_std=self.noise_std,
            tokens=self.tokens,
        )

    def digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build(merged: dict) -> ExperimentConfig:
    _require(merged["mode"] in ("theory", "realism"), "mode", "must be 'theory' or 'realism'")
    _check_number(merged["master_seed"], "master_seed", lo=0, integer=True)
    _check_number(merged["replicas"], "replicas", lo=1, integer=True)
    _require(isinstance(merged["out_dir"], str), "out_dir", "expected a string")
    try:
        baseline = BaselineKind(merged["baseline"])
    except ValueError:
        raise ConfigError(
            f"baseline: expected one of {[b.value for b in BaselineKind]}"
        ) from None

    s = merged["schedule"]
    _check_number(s["mu_p0"], "schedule.mu_p0")
    _check_number(s["gamma"], "schedule.gamma")
    _check_number(s["sigma_c"], "schedule.sigma_c")
    _check_number(s["gap_ratio"], "schedule.gap_ratio")
    _check_number(s["sigma_q"], "schedule.sigma_q")

    se = merged["search"]
    for key in ("width", "depth", "beam_size", "mcts_iterations"):
        _check_number(se[key], f"search.{key}", lo=0, integer=True)
    _check_number(se["exploration_c"], "search.exploration_c", lo=0)
    _check_number(se["stop_prob"], "search.stop_prob", lo=0, hi=1)

    sp = merged["speculative"]
    _check_number(sp["theta"], "speculative.theta", lo=0.0, hi=1.0)
    _require(
        sp["estimator"] in ("mean", "max-union", "ucb"),
        "speculative.estimator",
        "must be 'mean', 'max-union' or 'ucb'",
    )
    _require(
        sp["init_estimator"] in ("mean", "max-union", "ucb"),
        "speculative.init_estimator",
        "must be 'mean', 'max-union' or 'ucb'",
    )
    _check_number(sp["ucb_z"], "speculative.ucb_z", lo=0)
    _check_number(sp["draft_multiplier"], "speculative.draft_multiplier", lo=1, integer=True)
    _require(
        isinstance(sp["extra_large_sample"], bool),
        "speculative.extra_large_sample",
        "expected a boolean",
    )
    fixed_threshold = _parse_threshold(sp["fixed_threshold"], "speculative.fixed_threshold")
    flme = sp["flme_percent"]
    if flme is not None:
        _check_number(flme, "speculative.flme_percent", lo=0, hi=100)
        flme = float(flme)
    if baseline == BaselineKind.FT and fixed_threshold is None:
        raise ConfigError("speculative.fixed_threshold: required for the FT baseline")
    if baseline == BaselineKind.FLME and flme is None:
        raise ConfigError("speculative.flme_percent: required for the FLME baseline")

    c = merged["cost"]
    for key in ("lambda_large", "lambda_small", "evaluator_cost"):
        _check_number(c[key], f"cost.{key}", lo=0)
    _check_number(c["sps_speedup"], "cost.sps_speedup", lo=1)

    ev = merged["evaluator"]
    _check_number(ev["noise_std"], "evaluator.noise_std", lo=0)

    tk = merged["tokens"]
    _require(tk["kind"] in ("constant", "poisson"), "tokens.kind", "must be 'constant' or 'poisson'")
    _check_number(tk["value"], "tokens.value", lo=1)

    sweep = merged["sweep_theta"]
    _require(isinstance(sweep, list), "sweep_theta", "expected a list")
    for i, v in enumerate(sweep):
        _check_number(v, f"sweep_theta[{i}]", lo=0.0, hi=1.0)

    try:
        schedule = QualitySchedule(
            mu_p0=float(s["mu_p0"]),
            gamma=float(s["gamma"]),
            sigma_c=float(s["sigma_c"]),
            gap_ratio=float(s["gap_ratio"]),
            sigma_q=float(s["sigma_q"]),
            max_steps=int(se["depth"]),
        )
        search = SearchConfig(
            width=int(se["width"]),
            depth=int(se["depth"]),
            beam_size=int(se["beam_size"]),
            algorithm=se["algorithm"],
            mcts_iterations=int(se["mcts_iterations"]),
            exploration_c=float(se["exploration_c"]),
            stop_rule=se["stop_rule"],
            stop_prob=float(se["stop_prob"]),
            chain_mode=se["chain_mode"],
        )
        spec = SpecConfig(
            n_width=int(se["width"]),
            draft_multiplier=int(sp["draft_multiplier"]),
            extra_large_sample=bool(sp["extra_large_sample"]),
            clamp=merged["mode"] == "realism",
        )
        cost = CostModel(
            lambda_large=float(c["lambda_large"]),
            lambda_small=float(c["lambda_small"]),
            sps_speedup=float(c["sps_speedup"]),
            evaluator_cost=float(c["evaluator_cost"]),
        )
        tokens = TokenModel(kind=tk["kind"], value=float(tk["value"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        mode=merged["mode"],
        master_seed=int(merged["master_seed"]),
        replicas=int(merged["replicas"]),
        out_dir=merged["out_dir"],
        baseline=baseline,
        schedule=schedule,
        search=search,
        spec=spec,
        cost=cost,
        theta=float(sp["theta"]),
        estimator=sp["estimator"],
        init_estimator=sp["init_estimator"],
        ucb_z=float(sp["ucb_z"]),
        fixed_threshold=fixed_threshold,
        flme_percent=flme,
        noise_std=float(ev["noise_std"]),
        tokens=tokens,
        sweep_theta=tuple(float(v) for v in sweep),
        raw=merged,
    )


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a JSON object")
    return _build(_merge(_DEFAULTS, data))


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a JSON config file; unknown keys are hard errors.

    ``overrides`` (flag values) are applied after the file's own keys.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if overrides:
        data = dict(data)
        data.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(data)
