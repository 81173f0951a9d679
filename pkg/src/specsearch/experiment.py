"""Monte Carlo ensembles over seeded searches: preservation-probability
estimation against the closed-form bounds, baseline and ablation comparison,
latency accounting, and speedup arithmetic.

Replicas are embarrassingly parallel in principle; aggregation is keyed by
replica index, so serial execution (used here) and any parallel execution
produce identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .analytics import BoundParams, joint_bound, stepwise_bound
from .core import Evaluator, QualitySchedule, RngStream
from .generation import CorrectionModel, GeneratorModel, StatisticalSuite, TokenModel
from .search import SearchConfig, SearchTrace, SpecConfig, beam_search, mcts_search

__all__ = [
    "BaselineKind",
    "CostModel",
    "EnsembleStats",
    "Scenario",
    "BoundReport",
    "ConfigurationError",
    "StatisticsError",
    "wilson_interval",
    "run_ensemble",
    "preservation_probability",
    "verify_bounds",
    "simulate_latency",
    "speedup",
    "acceptance_rate",
    "theta_sweep",
]

_Z95 = 1.959963984540054


class ConfigurationError(ValueError):
    """A run's configuration violates an operation's assumptions."""


class StatisticsError(ValueError):
    """Not enough data to form the requested statistic."""


class BaselineKind(str, Enum):
    AR = "AR"
    SPS = "SpS"
    SPEC_SEARCH = "SpecSearch"
    FT = "FT"
    RR = "RR"
    FLME = "FLME"


_POLICY_OF = {
    BaselineKind.AR: "large-only",
    BaselineKind.SPS: "sps",
    BaselineKind.SPEC_SEARCH: "speculative",
    BaselineKind.FT: "ft",
    BaselineKind.RR: "rr",
    BaselineKind.FLME: "flme",
}


@dataclass(frozen=True)
class CostModel:
    """Per-token latencies and the token-level speculation divisor.

    Defaults put the draft model at 1/20 of the large model's per-token cost
    (a small-draft regime) and a 2x token-level speculation speedup.
    """

    lambda_large: float = 0.01
    lambda_small: float = 0.0005
    sps_speedup: float = 2.0
    evaluator_cost: float = 0.0

    def __post_init__(self):
        if self.lambda_large < 0 or self.lambda_small < 0 or self.evaluator_cost < 0:
            raise ValueError("latencies must be >= 0")
        if self.sps_speedup < 1.0:
            raise ValueError("sps_speedup must be >= 1")


@dataclass(frozen=True)
class Scenario:
    """Everything a seeded search run needs, minus the seed itself."""

    schedule: QualitySchedule
    search: SearchConfig
    spec: SpecConfig
    cost: CostModel = CostModel()
    theta: float = 0.9
    estimator: str = "mean"
    init_estimator: str = "max-union"
    ucb_z: float = 1.645
    beta0: object = None
    x_percent: float | None = None
    mode: str = "theory"
    noise_std: float = 0.0
    tokens: TokenModel = TokenModel()

    def __post_init__(self):
        if self.mode not in ("theory", "realism"):
            raise ValueError(f"mode must be 'theory' or 'realism', got {self.mode!r}")

    def build_suite(self) -> StatisticalSuite:
        clamp = self.mode == "realism"
        large = GeneratorModel(
            role="large",
            schedule=self.schedule,
            tokens=self.tokens,
            per_token_latency=self.cost.lambda_large,
        )
        small = GeneratorModel(
            role="small",
            schedule=self.schedule,
            tokens=self.tokens,
            per_token_latency=self.cost.lambda_small,
        )
        evaluator = Evaluator(
            kind="noisy" if self.noise_std > 0 else "oracle",
            noise_std=self.noise_std,
            clamp=clamp,
        )
        return StatisticalSuite(
            large=large,
            small=small,
            correction=CorrectionModel(base=large, sps_speedup=self.cost.sps_speedup),
            evaluator=evaluator,
            clamp=clamp,
        )

    def config_echo(self, baseline: BaselineKind) -> dict:
        return {
            "baseline": baseline.value,
            "mode": self.mode,
            "theta": self.theta,
            "estimator": self.estimator,
            "init_estimator": self.init_estimator,
            "gamma": self.schedule.gamma,
            "mu_p0": self.schedule.mu_p0,
            "sigma_c": self.schedule.sigma_c,
            "gap_ratio": self.schedule.gap_ratio,
            "width": self.search.width,
            "depth": self.search.depth,
            "beam_size": self.search.beam_size,
            "algorithm": self.search.algorithm,
            "draft_multiplier": self.spec.draft_multiplier,
            "extra_large_sample": self.spec.extra_large_sample,
            "noise_std": self.noise_std,
        }


def simulate_latency(trace: SearchTrace, cost: CostModel) -> float:
    """Total seconds for one trace under the cost model.

    Per expansion: parallel drafting pays the batch's max token count at the
    small rate; corrections are serial at the large rate divided by the
    token-level speedup; all-large expansions pay the batch max at the large
    rate (divided by the speedup for the token-level-speculation baseline);
    every evaluation pays the flat evaluator cost.  The unconditional
    estimator-feeding sample is bookkeeping and carries no latency.
    """
    total = 0.0
    for step in trace.steps:
        for st in step.stats:
            total += st.draft_max_tokens * cost.lambda_small
            if st.large_parallel_tokens:
                divisor = cost.sps_speedup if st.sps_bucket else 1.0
                total += st.large_parallel_tokens * cost.lambda_large / divisor
            total += st.corrected_tokens * cost.lambda_large / cost.sps_speedup
            total += st.evaluations * cost.evaluator_cost
    return total


def speedup(baseline_latency: float, method_latency: float) -> float:
    """Ratio of the baseline's latency to the method's latency."""
    if method_latency <= 0.0:
        raise ValueError(f"method latency must be positive, got {method_latency}")
    return baseline_latency / method_latency


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float, float]:
    """(p_hat, ci_low, ci_high) via the Wilson score interval."""
    if n < 1:
        raise StatisticsError("need at least one trial")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return p, max(0.0, center - half), min(1.0, center + half)


@dataclass
class EnsembleStats:
    """Aggregates over R independent seeded searches."""

    replica_count: int
    steps: np.ndarray
    mu_p: np.ndarray
    mean_emitted_quality: np.ndarray
    emitted_se: np.ndarray
    mean_beam_quality: np.ndarray
    mean_threshold: np.ndarray
    acceptance_by_step: np.ndarray
    accepted_total: int
    drafted_total: int
    preservation: np.ndarray | None
    cond_hold: np.ndarray | None
    cond_both: np.ndarray | None
    latency_total: np.ndarray
    config_echo: dict = field(default_factory=dict)


def _run_one(
    scenario: Scenario,
    baseline: BaselineKind,
    suite: StatisticalSuite,
    master_seed: int,
    replica: int,
) -> SearchTrace:
    rng = RngStream(master_seed, replica, "run")
    policy = _POLICY_OF[baseline]
    kwargs = dict(
        theta=scenario.theta,
        estimator=scenario.estimator,
        init_estimator=scenario.init_estimator,
        ucb_z=scenario.ucb_z,
        policy=policy,
        beta0=scenario.beta0,
        x_percent=scenario.x_percent,
        schedule=scenario.schedule,
    )
    if scenario.search.algorithm == "mcts":
        _, trace = mcts_search(scenario.search, scenario.spec, suite, rng, **kwargs)
    else:
        _, trace = beam_search(scenario.search, scenario.spec, suite, rng, **kwargs)
    return trace


def run_ensemble(
    scenario: Scenario,
    baseline: BaselineKind,
    replicas: int,
    master_seed: int,
) -> EnsembleStats:
    """Run R independent seeded searches and aggregate per-step statistics.

    Deterministic given the master seed: replica i draws only from streams
    derived from (master_seed, i).
    """
    if replicas < 1:
        raise ValueError(f"replicas must be >= 1, got {replicas}")
    baseline = BaselineKind(baseline)
    suite = scenario.build_suite()
    schedule = scenario.schedule
    depth = scenario.search.depth

    sum_emitted = np.zeros(depth)
    sumsq_emitted = np.zeros(depth)
    sum_beam = np.zeros(depth)
    count_steps = np.zeros(depth, dtype=np.int64)
    sum_threshold = np.zeros(depth)
    count_threshold = np.zeros(depth, dtype=np.int64)
    accepted_step = np.zeros(depth, dtype=np.int64)
    drafted_step = np.zeros(depth, dtype=np.int64)
    track_thresholds = _POLICY_OF[baseline] == "speculative"
    preservation = np.zeros(replicas, dtype=bool) if track_thresholds else None
    cond_hold = np.zeros(max(depth - 1, 1), dtype=np.int64) if track_thresholds else None
    cond_both = np.zeros(max(depth - 1, 1), dtype=np.int64) if track_thresholds else None
    latency = np.zeros(replicas)

    for r in range(replicas):
        trace = _run_one(scenario, baseline, suite, master_seed, r)
        latency[r] = simulate_latency(trace, scenario.cost)
        for step in trace.steps:
            k = step.k
            mean_q = sum(step.emitted_qualities) / len(step.emitted_qualities)
            sum_emitted[k] += mean_q
            sumsq_emitted[k] += mean_q * mean_q
            sum_beam[k] += sum(step.beam_qualities) / len(step.beam_qualities)
            count_steps[k] += 1
            if step.entry_threshold is not None and math.isfinite(step.entry_threshold):
                sum_threshold[k] += step.entry_threshold
                count_threshold[k] += 1
            for st in step.stats:
                accepted_step[k] += st.accepted
                drafted_step[k] += st.drafted
        if track_thresholds:
            betas = trace.thresholds  # betas[j] is the threshold for step j + 1
            ok = True
            holds = []
            for j, beta in enumerate(betas):
                h = beta >= schedule.mu_p(j + 1)
                holds.append(h)
                ok = ok and h
            preservation[r] = ok
            for j in range(len(holds) - 1):
                if holds[j]:
                    cond_hold[j] += 1
                    if holds[j + 1]:
                        cond_both[j] += 1

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_emitted = np.where(count_steps > 0, sum_emitted / count_steps, np.nan)
        var_emitted = np.where(
            count_steps > 1,
            np.maximum(sumsq_emitted / count_steps - mean_emitted**2, 0.0),
            0.0,
        )
        emitted_se = np.where(
            count_steps > 1, np.sqrt(var_emitted / np.maximum(count_steps, 1)), np.nan
        )
        mean_beam = np.where(count_steps > 0, sum_beam / count_steps, np.nan)
        mean_threshold = np.where(
            count_threshold > 0, sum_threshold / count_threshold, np.nan
        )
        acceptance = np.where(
            drafted_step > 0, accepted_step / np.maximum(drafted_step, 1), np.nan
        )

    return EnsembleStats(
        replica_count=replicas,
        steps=np.arange(depth),
        mu_p=np.array([schedule.mu_p(k) for k in range(depth)]),
        mean_emitted_quality=mean_emitted,
        emitted_se=emitted_se,
        mean_beam_quality=mean_beam,
        mean_threshold=mean_threshold,
        acceptance_by_step=acceptance,
        accepted_total=int(accepted_step.sum()),
        drafted_total=int(drafted_step.sum()),
        preservation=preservation,
        cond_hold=cond_hold,
        cond_both=cond_both,
        latency_total=latency,
        config_echo=scenario.config_echo(baseline),
    )


def preservation_probability(stats: EnsembleStats) -> tuple[float, float, float]:
    """Fraction of replicas whose threshold stayed above mu_p at every step."""
    if stats.preservation is None:
        raise ConfigurationError("run did not track thresholds")
    if stats.replica_count < 30:
        raise StatisticsError("need at least 30 replicas for the interval")
    return wilson_interval(int(stats.preservation.sum()), stats.replica_count)


@dataclass
class BoundReport:
    p_hat: float
    ci_low: float
    ci_high: float
    joint_bound: float
    stepwise_bounds: np.ndarray
    stepwise_freq: np.ndarray
    stepwise_n: np.ndarray
    passed: bool
    stepwise_passed: bool

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0


def verify_bounds(stats: EnsembleStats, params: BoundParams) -> BoundReport:
    """Compare empirical preservation frequencies against the lower bounds.

    Refuses configurations outside the analysis assumptions: theory mode,
    mean estimator with the unconditional extra sample, theta >= gamma,
    single-draft multiplier, beam search with beam size 1 (one threshold
    update per step).  Passing means the bound is not violated beyond
    sampling noise: p_hat plus the interval half-width reaches the bound.
    """
    echo = stats.config_echo
    checks = [
        ("mode", echo.get("mode") == "theory", "theory mode"),
        ("estimator", echo.get("estimator") == "mean", "mean estimator"),
        (
            "init",
            echo.get("init_estimator") == "max-union",
            "max-initialized threshold",
        ),
        ("extra", echo.get("extra_large_sample") is True, "extra large sample"),
        ("theta", echo.get("theta", 0) >= echo.get("gamma", 1), "theta >= gamma"),
        ("multiplier", echo.get("draft_multiplier") == 1, "draft multiplier 1"),
        ("algorithm", echo.get("algorithm") == "beam", "beam search"),
        ("beam", echo.get("beam_size") == 1, "beam size 1"),
        ("noise", echo.get("noise_std", 0) == 0, "noiseless evaluator"),
    ]
    failed = [desc for _, ok, desc in checks if not ok]
    if failed:
        raise ConfigurationError(
            "bounds are only claimed under the analysis assumptions; "
            "violated: " + ", ".join(failed)
        )
    for name, want in (
        ("gamma", echo["gamma"]),
        ("mu_p0", echo["mu_p0"]),
        ("sigma_c", echo["sigma_c"]),
    ):
        if abs(getattr(params, name) - want) > 1e-12:
            raise ConfigurationError(f"params.{name} does not match the run config")
    if params.n != echo["width"] or params.max_steps != echo["depth"]:
        raise ConfigurationError("params n/max_steps do not match the run config")

    p_hat, lo, hi = preservation_probability(stats)
    bound = joint_bound(params)
    half = (hi - lo) / 2.0
    passed = p_hat + half >= bound

    n_trans = params.max_steps - 1
    bounds = np.array([stepwise_bound(params, k) for k in range(1, n_trans + 1)])
    hold = stats.cond_hold[:n_trans].astype(float)
    both = stats.cond_both[:n_trans].astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = np.where(hold > 0, both / np.maximum(hold, 1), np.nan)
    step_ok = True
    for k in range(n_trans):
        if hold[k] >= 30:
            _, s_lo, s_hi = wilson_interval(int(both[k]), int(hold[k]))
            if freq[k] + (s_hi - s_lo) / 2.0 < bounds[k]:
                step_ok = False
    return BoundReport(
        p_hat=p_hat,
        ci_low=lo,
        ci_high=hi,
        joint_bound=bound,
        stepwise_bounds=bounds,
        stepwise_freq=freq,
        stepwise_n=hold,
        passed=bool(passed),
        stepwise_passed=bool(step_ok),
    )


def acceptance_rate(stats: EnsembleStats) -> float:
    """Accepted drafts over total drafts, pooled across steps and replicas."""
    if stats.drafted_total == 0:
        return math.nan
    return stats.accepted_total / stats.drafted_total


def theta_sweep(
    values,
    scenario: Scenario,
    replicas: int,
    master_seed: int,
) -> list[dict]:
    """One summary row per theta: preservation, acceptance, latency, speedup."""
    rows: list[dict] = []
    if not values:
        return rows
    from dataclasses import replace as _replace

    ar_stats = run_ensemble(scenario, BaselineKind.AR, replicas, master_seed)
    ar_latency = float(ar_stats.latency_total.mean())
    for theta in values:
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {theta}")
        sc = _replace(scenario, theta=theta)
        stats = run_ensemble(sc, BaselineKind.SPEC_SEARCH, replicas, master_seed)
        p_hat, lo, hi = preservation_probability(stats)
        mean_latency = float(stats.latency_total.mean())
        rows.append(
            {
                "theta": theta,
                "preservation_p_hat": p_hat,
                "preservation_ci_low": lo,
                "preservation_ci_high": hi,
                "acceptance_rate": acceptance_rate(stats),
                "mean_latency": mean_latency,
                "speedup_vs_ar": speedup(ar_latency, mean_latency),
            }
        )
    return rows
