"""Command-line orchestration: run ensembles, verify the probability bounds,
compare ablations, sweep the EMA weight, and check token-level losslessness.

Every output file embeds the master seed and a digest of the fully merged
configuration, and all numeric CSV formatting is fixed at 12 significant
digits, so reruns with identical seed and config are byte-identical.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .analytics import BoundParams, joint_bound_curve
from .config import ConfigError, ExperimentConfig, load_config
from .core import RngStream
from .experiment import (
    BaselineKind,
    ConfigurationError,
    acceptance_rate,
    preservation_probability,
    run_ensemble,
    speedup,
    theta_sweep,
    verify_bounds,
)
from .generation import SpsConfig, sps_decode, sps_exact_distribution

__all__ = ["main", "run_command", "write_results", "sps_check"]


def _fmt(value) -> str:
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return ""
    return format(value, ".12g")


def _round12(obj):
    if isinstance(obj, float):
        return float(format(obj, ".12g")) if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_round12(float(v)) for v in obj]
    return obj


def _stamp(config: ExperimentConfig) -> str:
    return f"# master_seed={config.master_seed} config_digest={config.digest()}\n"


def _write_csv(path: Path, config: ExperimentConfig, header: list[str], rows) -> None:
    lines = [_stamp(config), ",".join(header) + "\n"]
    for row in rows:
        lines.append(",".join(row) + "\n")
    path.write_text("".join(lines))


def _write_summary(path: Path, config: ExperimentConfig, body: dict) -> None:
    import json

    summary = {
        "master_seed": config.master_seed,
        "config_digest": config.digest(),
        "config": config.raw,
    }
    summary.update(body)
    path.write_text(json.dumps(_round12(summary), indent=2, sort_keys=True) + "\n")


def _per_step_rows(stats) -> list[list[str]]:
    rows = []
    for i, k in enumerate(stats.steps):
        rows.append(
            [
                str(int(k)),
                str(int(k)),
                _fmt(stats.mu_p[i]),
                _fmt(stats.mean_emitted_quality[i]),
                _fmt(stats.mean_threshold[i]),
                _fmt(stats.acceptance_by_step[i]),
                _fmt(stats.mean_beam_quality[i]),
            ]
        )
    return rows


_PER_STEP_HEADER = [
    "step",
    "k",
    "mu_p",
    "mean_quality",
    "mean_threshold",
    "acceptance_rate",
    "beam_mean_quality",
]


def _bound_params(config: ExperimentConfig) -> BoundParams | None:
    if config.theta < config.schedule.gamma:
        return None
    return BoundParams(
        gamma=config.schedule.gamma,
        mu_p0=config.schedule.mu_p0,
        sigma_c=config.schedule.sigma_c,
        n=config.search.width,
        max_steps=config.search.depth,
        theta=config.theta,
        variant="extra-sample" if config.spec.extra_large_sample else "no-extra-sample",
    )


def write_results(stats, config: ExperimentConfig, out_dir: str | Path, extra: dict | None = None):
    """Write per_step.csv, summary.json and (when defined) bound_curve.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    per_step = out / "per_step.csv"
    _write_csv(per_step, config, _PER_STEP_HEADER, _per_step_rows(stats))
    paths.append(per_step)

    body = {
        "baseline": stats.config_echo.get("baseline"),
        "mode": config.mode,
        "replicas": stats.replica_count,
        "acceptance_rate": acceptance_rate(stats),
        "mean_latency": float(stats.latency_total.mean()),
    }
    if stats.preservation is not None and stats.replica_count >= 30:
        p_hat, lo, hi = preservation_probability(stats)
        body["preservation"] = {"p_hat": p_hat, "ci_low": lo, "ci_high": hi}
    if extra:
        body.update(extra)

    params = _bound_params(config)
    if params is not None:
        curve = joint_bound_curve(params)
        bound_path = out / "bound_curve.csv"
        _write_csv(
            bound_path,
            config,
            ["k", "joint_bound_up_to_k"],
            [[str(k + 1), _fmt(v)] for k, v in enumerate(curve)],
        )
        paths.append(bound_path)
        body["joint_bound"] = float(curve[-1])

    summary = out / "summary.json"
    _write_summary(summary, config, body)
    paths.append(summary)
    return paths


def _cmd_run(config: ExperimentConfig, out_dir: Path) -> int:
    scenario = config.scenario()
    stats = run_ensemble(scenario, config.baseline, config.replicas, config.master_seed)
    extra = {}
    if config.baseline == BaselineKind.SPEC_SEARCH:
        ar = run_ensemble(scenario, BaselineKind.AR, config.replicas, config.master_seed)
        sps = run_ensemble(scenario, BaselineKind.SPS, config.replicas, config.master_seed)
        mean_latency = float(stats.latency_total.mean())
        extra["ar_mean_latency"] = float(ar.latency_total.mean())
        extra["sps_mean_latency"] = float(sps.latency_total.mean())
        extra["speedup_vs_ar"] = speedup(extra["ar_mean_latency"], mean_latency)
        extra["speedup_vs_sps"] = speedup(extra["sps_mean_latency"], mean_latency)
    paths = write_results(stats, config, out_dir, extra)
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_verify_bounds(config: ExperimentConfig, out_dir: Path) -> int:
    params = _bound_params(config)
    if params is None:
        print("error: bounds require theta >= gamma", file=sys.stderr)
        return 2
    scenario = config.scenario()
    stats = run_ensemble(
        scenario, BaselineKind.SPEC_SEARCH, config.replicas, config.master_seed
    )
    try:
        report = verify_bounds(stats, params)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    extra = {
        "bound_report": {
            "p_hat": report.p_hat,
            "ci_low": report.ci_low,
            "ci_high": report.ci_high,
            "joint_bound": report.joint_bound,
            "passed": report.passed,
            "stepwise_passed": report.stepwise_passed,
            "stepwise_bounds": list(report.stepwise_bounds),
            "stepwise_freq": [
                None if math.isnan(f) else float(f) for f in report.stepwise_freq
            ],
        }
    }
    paths = write_results(stats, config, out_dir, extra)
    for p in paths:
        print(f"wrote {p}")
    status = "PASS" if report.passed and report.stepwise_passed else "FAIL"
    print(
        f"{status}: p_hat={report.p_hat:.4f} "
        f"(ci [{report.ci_low:.4f}, {report.ci_high:.4f}]) "
        f"joint_bound={report.joint_bound:.4f}"
    )
    return 0 if status == "PASS" else 1


def _cmd_ablate(config: ExperimentConfig, out_dir: Path) -> int:
    scenario = config.scenario()
    methods: list[BaselineKind] = [BaselineKind.SPEC_SEARCH, BaselineKind.AR, BaselineKind.RR]
    if config.fixed_threshold is not None:
        methods.append(BaselineKind.FT)
    if config.flme_percent is not None:
        methods.append(BaselineKind.FLME)

    all_stats = {}
    for kind in methods:
        all_stats[kind.value] = run_ensemble(
            scenario, kind, config.replicas, config.master_seed
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    depth = config.search.depth
    header = ["k"] + [kind.value for kind in methods]
    rows = []
    for k in range(depth):
        row = [str(k)]
        for kind in methods:
            row.append(_fmt(all_stats[kind.value].mean_emitted_quality[k]))
        rows.append(row)
    reward_path = out / "reward_by_step.csv"
    _write_csv(reward_path, config, header, rows)

    ar_latency = float(all_stats["AR"].latency_total.mean())
    body = {"methods": {}}
    for kind in methods:
        st = all_stats[kind.value]
        latency = float(st.latency_total.mean())
        body["methods"][kind.value] = {
            "mean_latency": latency,
            "speedup_vs_ar": speedup(ar_latency, latency),
            "acceptance_rate": acceptance_rate(st),
        }
    summary_path = out / "summary.json"
    _write_summary(summary_path, config, body)
    print(f"wrote {reward_path}")
    print(f"wrote {summary_path}")
    return 0


_SWEEP_HEADER = [
    "theta",
    "preservation_p_hat",
    "preservation_ci_low",
    "preservation_ci_high",
    "acceptance_rate",
    "mean_latency",
    "speedup_vs_ar",
]


def _cmd_sweep_theta(config: ExperimentConfig, out_dir: Path) -> int:
    scenario = config.scenario()
    rows = theta_sweep(
        list(config.sweep_theta), scenario, config.replicas, config.master_seed
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_rows = [[_fmt(row[col]) for col in _SWEEP_HEADER] for row in rows]
    sweep_path = out / "theta_sweep.csv"
    _write_csv(sweep_path, config, _SWEEP_HEADER, csv_rows)
    _write_summary(out / "summary.json", config, {"rows": rows})
    print(f"wrote {sweep_path}")
    return 0


def sps_check(seed: int = 7, pairs: int = 100, trials: int = 1_000_000) -> tuple[float, float]:
    """Exact and Monte Carlo checks of token-level losslessness.

    Returns (max exact deviation from the target distribution, max empirical
    total-variation distance over the sampled instances).
    """
    rng = RngStream(seed, 0, "sps-check")
    gen = rng.generator
    max_exact = 0.0
    configs = []
    for i in range(pairs):
        size = 2 + int(gen.integers(0, 7))  # vocab size 2..8
        p = gen.random(size) + 1e-3
        q = gen.random(size) + 1e-3
        p /= p.sum()
        q /= q.sum()
        cfg = SpsConfig(p=p, q=q, draft_len=1)
        max_exact = max(max_exact, float(np.abs(sps_exact_distribution(cfg) - p).max()))
        configs.append(cfg)

    mc_instances = 4
    per_instance = trials // mc_instances
    max_tv = 0.0
    for i in range(mc_instances):
        cfg = configs[i]
        counts = np.zeros(len(cfg.p), dtype=np.int64)
        stream = rng.child(f"mc{i}")
        for _ in range(per_instance):
            tokens, _ = sps_decode(cfg, stream)
            counts[tokens[0]] += 1
        tv = 0.5 * float(np.abs(counts / per_instance - cfg.p).sum())
        max_tv = max(max_tv, tv)
    return max_exact, max_tv


def _cmd_sps_check(seed: int) -> int:
    max_exact, max_tv = sps_check(seed=seed)
    print(f"max exact deviation: {max_exact:.3e}")
    print(f"max empirical TV distance: {max_tv:.5f}")
    ok = max_exact < 1e-12 and max_tv < 0.005
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specsearch",
        description="Speculative thought-level search simulator and bound verifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("run", True),
        ("verify-bounds", True),
        ("ablate", True),
        ("sweep-theta", True),
        ("sps-check", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config, help="path to JSON config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--mode", choices=["theory", "realism"], default=None)
    return parser


def run_command(command: str, config: ExperimentConfig | None, out_dir=None, seed: int | None = None) -> int:
    """Programmatic entry point mirroring the CLI subcommands."""
    if command == "sps-check":
        return _cmd_sps_check(seed if seed is not None else 7)
    assert config is not None
    out = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    if command == "run":
        return _cmd_run(config, out)
    if command == "verify-bounds":
        return _cmd_verify_bounds(config, out)
    if command == "ablate":
        return _cmd_ablate(config, out)
    if command == "sweep-theta":
        return _cmd_sweep_theta(config, out)
    raise ValueError(f"unknown command {command!r}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sps-check":
            return run_command("sps-check", None, seed=args.seed)
        overrides = {
            "master_seed": args.seed,
            "replicas": args.replicas,
            "mode": args.mode,
        }
        config = load_config(args.config, overrides)
        return run_command(args.command, config, out_dir=args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
