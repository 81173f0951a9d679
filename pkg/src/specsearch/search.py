"""Thought-level speculative search: adaptive rejection thresholds, the
draft-evaluate-reject-correct generator step, beam search, an MCTS variant,
and the ablation generators (fixed threshold, random rejection, fixed
large-model engagement).

Stream discipline: every expansion derives labeled child streams ("small",
"large", "eval", "coin") from its own stream, so a run is bitwise
reproducible and degenerate configurations (total rejection / total
acceptance) consume the large/small streams exactly like the all-large and
all-small baselines do.  That is what makes the reduction identities exact
rather than merely distributional.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import RngStream, Thought, ThoughtPath, ThoughtSource

__all__ = [
    "EstimationError",
    "ShortBeamWarning",
    "ThresholdState",
    "SpecConfig",
    "SearchConfig",
    "SpeculativeStepStats",
    "StepTrace",
    "SearchTrace",
    "estimate",
    "init_threshold",
    "update_threshold",
    "speculative_generate",
    "ablation_generate",
    "select_top_b",
    "beam_search",
    "mcts_search",
]


class EstimationError(ValueError):
    """Raised when an estimator's required quality set is empty."""


class ShortBeamWarning(UserWarning):
    """Fewer candidates than the requested beam size."""


# ---------------------------------------------------------------------------
# Threshold estimation and the EMA update.
# ---------------------------------------------------------------------------

ESTIMATORS = ("mean", "max-union", "ucb")


def estimate(
    kind: str,
    v_p: tuple[float, ...] | list[float],
    v_q: tuple[float, ...] | list[float],
    ucb_z: float = 1.645,
) -> float:
    """Summarize observed large-model quality for the threshold update.

    "mean" and "ucb" work from the large-model set alone and fail when it is
    empty (the caller then either forces a large sample or falls back);
    "max-union" additionally pools the accepted small-model qualities.
    """
    if kind == "mean":
        if not v_p:
            raise EstimationError("mean estimator requires large-model samples")
        return float(sum(v_p) / len(v_p))
    if kind == "max-union":
        pool = tuple(v_p) + tuple(v_q)
        if not pool:
            raise EstimationError("max-union estimator requires a nonempty pool")
        return float(max(pool))
    if kind == "ucb":
        if not v_p:
            raise EstimationError("ucb estimator requires large-model samples")
        arr = np.asarray(v_p, dtype=float)
        return float(arr.mean() + ucb_z * arr.std() / math.sqrt(len(arr)))
    raise ValueError(f"unknown estimator kind {kind!r}")


@dataclass(frozen=True)
class ThresholdState:
    """The running rejection threshold with its EMA weight and estimator."""

    beta: float
    theta: float
    estimator: str = "mean"
    ucb_z: float = 1.645
    history: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")


def init_threshold(
    initial_qualities,
    theta: float,
    kind: str = "mean",
    ucb_z: float = 1.645,
) -> ThresholdState:
    """Seed the threshold from the all-large first expansion: theta * estimate."""
    qualities = tuple(float(q) for q in initial_qualities)
    if not qualities:
        raise EstimationError("cannot initialize threshold from an empty set")
    beta = theta * estimate(kind, qualities, (), ucb_z=ucb_z)
    return ThresholdState(
        beta=beta, theta=theta, estimator=kind, ucb_z=ucb_z, history=((1, beta),)
    )


def update_threshold(state: ThresholdState, estimate_value: float) -> ThresholdState:
    """EMA step: theta * old + (1 - theta) * estimate, history appended."""
    beta = state.theta * state.beta + (1.0 - state.theta) * estimate_value
    step = state.history[-1][0] + 1 if state.history else 1
    return replace(state, beta=beta, history=state.history + ((step, beta),))


# ---------------------------------------------------------------------------
# Configuration and per-step bookkeeping.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpecConfig:
    """Knobs of the speculative generator step.

    ``draft_multiplier`` drafts multiplier * n_width small thoughts and keeps
    at most n_width of the passers (2 mirrors the deployed configuration;
    1 is the analysis-faithful setting).  ``extra_large_sample`` draws one
    unconditional large-model thought per step so the mean estimator always
    has data; it feeds estimation only and is never emitted.
    """

    n_width: int = 6
    draft_multiplier: int = 2
    extra_large_sample: bool = True
    clamp: bool = False

    def __post_init__(self):
        if self.n_width < 1:
            raise ValueError("n_width must be >= 1")
        if self.draft_multiplier < 1:
            raise ValueError("draft_multiplier must be >= 1")


@dataclass(frozen=True)
class SearchConfig:
    width: int = 6
    depth: int = 50
    beam_size: int = 2
    algorithm: str = "beam"  # "beam" | "mcts"
    mcts_iterations: int = 4
    exploration_c: float = 1.0
    stop_rule: str = "fixed-depth"  # | "stochastic"
    stop_prob: float = 0.0
    chain_mode: str = "chained"  # | "frozen"

    def __post_init__(self):
        if self.width < 1 or self.depth < 1 or self.beam_size < 1:
            raise ValueError("width, depth and beam_size must all be >= 1")
        if self.algorithm not in ("beam", "mcts"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.stop_rule not in ("fixed-depth", "stochastic"):
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")
        if not 0.0 <= self.stop_prob <= 1.0:
            raise ValueError("stop_prob must be in [0, 1]")
        if self.chain_mode not in ("chained", "frozen"):
            raise ValueError(f"unknown chain mode {self.chain_mode!r}")
        if self.mcts_iterations < 0:
            raise ValueError("mcts_iterations must be >= 0")


@dataclass(slots=True)
class SpeculativeStepStats:
    """Per-step bookkeeping for one generator call."""

    step: int
    accepted: int
    corrected: int
    accepted_qualities: tuple[float, ...]
    corrected_qualities: tuple[float, ...]
    threshold_used: float
    threshold_next: float
    latency: dict
    drafted: int = 0
    draft_max_tokens: int = 0
    corrected_tokens: int = 0
    extra_tokens: int = 0
    evaluations: int = 0
    large_parallel_tokens: int = 0
    sps_bucket: bool = False
    estimator_fallback: bool = False

    @property
    def batch_mean(self) -> float:
        """Mean over the step's quality sets (accepted plus large-model)."""
        pool = self.accepted_qualities + self.corrected_qualities
        return float(np.mean(pool))


def _score_thought(suite, thought: Thought, path: ThoughtPath, rng: RngStream) -> Thought:
    score = suite.score(thought, path, rng)
    if score != thought.quality:
        return replace(thought, quality=score)
    return thought


def _expand_large(
    suite, path: ThoughtPath, k: int, n: int, rng_large: RngStream, rng_eval: RngStream
) -> list[Thought]:
    # Serial draws so correction-stream consumption matches exactly.
    thoughts = []
    for _ in range(n):
        t = suite.large_one(path, k, rng_large)
        thoughts.append(_score_thought(suite, t, path, rng_eval))
    return thoughts


def _select_top_n(scored: list[Thought], passing: list[int], n: int) -> list[int]:
    """Indices of the kept passers, in original draft order."""
    if len(passing) <= n:
        return passing
    ranked = sorted(passing, key=lambda i: (-scored[i].quality, i))
    return sorted(ranked[:n])


def speculative_generate(
    ctx: ThoughtPath,
    state: ThresholdState,
    cfg: SpecConfig,
    suite,
    rng: RngStream,
    acceptance_beta: float | None = None,
) -> tuple[ThresholdState, list[Thought], SpeculativeStepStats]:
    """One draft-evaluate-reject-correct step.

    Drafts draft_multiplier * n_width small-model thoughts in parallel,
    accepts scores at or above the threshold (top n_width when more pass),
    refills the shortfall serially from the correction model, updates the
    threshold from the observed large-model qualities, and emits exactly
    n_width thoughts.  ``acceptance_beta`` overrides the acceptance cutoff
    without touching the EMA state (used by the frozen chaining mode).
    """
    k = ctx.next_step
    n = cfg.n_width
    beta = state.beta if acceptance_beta is None else acceptance_beta
    rng_small = rng.child("small")
    rng_large = rng.child("large")
    rng_eval = rng.child("eval")

    drafted = cfg.draft_multiplier * n
    drafts = suite.draft(ctx, k, drafted, rng_small)
    scored = [_score_thought(suite, t, ctx, rng_eval) for t in drafts]
    evaluations = len(scored)

    passing = [i for i, t in enumerate(scored) if t.quality >= beta]
    kept = _select_top_n(scored, passing, n)
    accepted = [scored[i] for i in kept]

    corrected: list[Thought] = []
    corrected_tokens = 0
    while len(accepted) + len(corrected) < n:
        t = suite.correct_one(ctx, k, rng_large)
        t = _score_thought(suite, t, ctx, rng_eval)
        corrected.append(t)
        corrected_tokens += t.token_count
        evaluations += 1

    v_q = tuple(t.quality for t in accepted)
    v_p = tuple(t.quality for t in corrected)
    extra_tokens = 0
    if cfg.extra_large_sample:
        extra = suite.large_one(ctx, k, rng_large)
        extra = _score_thought(suite, extra, ctx, rng_eval)
        v_p = v_p + (extra.quality,)
        extra_tokens = extra.token_count
        evaluations += 1

    fallback = False
    kind = state.estimator
    if kind in ("mean", "ucb") and not v_p:
        kind = "max-union"
        fallback = True
    new_state = update_threshold(
        state, estimate(kind, v_p, v_q, ucb_z=state.ucb_z)
    )

    emitted = accepted + corrected
    rates = suite.rates
    draft_max = max((t.token_count for t in drafts), default=0)
    stats = SpeculativeStepStats(
        step=k,
        accepted=len(accepted),
        corrected=len(corrected),
        accepted_qualities=v_q,
        corrected_qualities=v_p,
        threshold_used=beta,
        threshold_next=new_state.beta,
        latency={
            "draft": rates.small * draft_max,
            "evaluate": 0.0,
            "correct": rates.large * corrected_tokens / rates.sps_speedup,
        },
        drafted=drafted,
        draft_max_tokens=draft_max,
        corrected_tokens=corrected_tokens,
        extra_tokens=extra_tokens,
        evaluations=evaluations,
        estimator_fallback=fallback,
    )
    return new_state, emitted, stats


def ablation_generate(
    kind: str,
    ctx: ThoughtPath,
    state: ThresholdState | None,
    cfg: SpecConfig,
    suite,
    rng: RngStream,
    beta0: float | None = None,
    x_percent: float | None = None,
) -> tuple[ThresholdState | None, list[Thought], SpeculativeStepStats]:
    """Rejection-module ablations, same contract as speculative_generate.

    FT: constant threshold ``beta0``, no EMA update.
    RR: every draft rejected independently with probability 0.5.
    FLME: the bottom ``x_percent`` of exactly n_width drafts, by score, is
    regenerated by the large model.
    """
    if kind == "FT":
        if beta0 is None:
            raise ValueError("FT ablation requires beta0")
        ft_state = ThresholdState(
            beta=beta0,
            theta=1.0,
            estimator=state.estimator if state else "mean",
        )
        new_state, emitted, stats = speculative_generate(
            ctx, ft_state, cfg, suite, rng, acceptance_beta=beta0
        )
        # Discard the EMA update: the threshold is pinned.
        stats.threshold_next = beta0
        return replace(ft_state, history=()), emitted, stats

    k = ctx.next_step
    n = cfg.n_width
    rng_small = rng.child("small")
    rng_large = rng.child("large")
    rng_eval = rng.child("eval")
    rates = suite.rates

    if kind == "RR":
        drafted = cfg.draft_multiplier * n
        drafts = suite.draft(ctx, k, drafted, rng_small)
        scored = [_score_thought(suite, t, ctx, rng_eval) for t in drafts]
        coin = rng.child("coin").generator.random(drafted)
        surviving = [i for i in range(drafted) if coin[i] >= 0.5]
        kept = _select_top_n(scored, surviving, n)
        accepted = [scored[i] for i in kept]
    elif kind == "FLME":
        if x_percent is None or not 0.0 <= x_percent <= 100.0:
            raise ValueError("FLME requires x_percent in [0, 100]")
        drafts = suite.draft(ctx, k, n, rng_small)
        scored = [_score_thought(suite, t, ctx, rng_eval) for t in drafts]
        n_redo = int(round(n * x_percent / 100.0))
        order = sorted(range(n), key=lambda i: (scored[i].quality, i))
        redo = set(order[:n_redo])
        accepted = [scored[i] for i in range(n) if i not in redo]
        drafted = n
    else:
        raise ValueError(f"unknown ablation kind {kind!r}")

    corrected: list[Thought] = []
    corrected_tokens = 0
    evaluations = len(scored)
    while len(accepted) + len(corrected) < n:
        t = suite.correct_one(ctx, k, rng_large)
        t = _score_thought(suite, t, ctx, rng_eval)
        corrected.append(t)
        corrected_tokens += t.token_count
        evaluations += 1

    draft_max = max((t.token_count for t in drafts), default=0)
    stats = SpeculativeStepStats(
        step=k,
        accepted=len(accepted),
        corrected=len(corrected),
        accepted_qualities=tuple(t.quality for t in accepted),
        corrected_qualities=tuple(t.quality for t in corrected),
        threshold_used=math.nan,
        threshold_next=math.nan,
        latency={
            "draft": rates.small * draft_max,
            "evaluate": 0.0,
            "correct": rates.large * corrected_tokens / rates.sps_speedup,
        },
        drafted=drafted,
        draft_max_tokens=draft_max,
        corrected_tokens=corrected_tokens,
        evaluations=evaluations,
    )
    return state, accepted + corrected, stats


# ---------------------------------------------------------------------------
# Beam search.
# ---------------------------------------------------------------------------


def select_top_b(candidates: list[ThoughtPath], b: int) -> list[ThoughtPath]:
    """The b highest-quality paths; ties keep earlier insertion order."""
    if b < 1:
        raise ValueError("b must be >= 1")
    if len(candidates) < b:
        warnings.warn(
            f"only {len(candidates)} candidates for beam size {b}", ShortBeamWarning
        )
        return list(candidates)
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i].ranking_quality, i),
    )
    return [candidates[i] for i in order[:b]]


@dataclass(slots=True)
class StepTrace:
    k: int
    entry_threshold: float | None
    exit_threshold: float | None
    emitted_qualities: list
    beam_qualities: list
    stats: list
    mu_p: float | None = None


@dataclass
class SearchTrace:
    policy: str
    chain_mode: str
    steps: list[StepTrace] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.steps)

    def emitted_by_step(self) -> list[list[float]]:
        return [list(s.emitted_qualities) for s in self.steps]


_THRESHOLD_POLICIES = ("speculative", "ft")
POLICIES = ("speculative", "large-only", "sps", "small-only", "ft", "rr", "flme")


def _resolve_beta0(beta0, schedule, k: int) -> float:
    if callable(beta0):
        return float(beta0(k))
    if beta0 == "mu_q":
        return schedule.mu_q(k)
    if beta0 == "mu_p":
        return schedule.mu_p(k)
    return float(beta0)


class _PolicyRunner:
    """Dispatches one expansion according to the configured policy."""

    def __init__(
        self,
        policy: str,
        spec: SpecConfig,
        suite,
        theta: float,
        estimator: str,
        ucb_z: float = 1.645,
        beta0=None,
        x_percent: float | None = None,
        schedule=None,
        init_estimator: str | None = None,
    ):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        if policy == "ft" and beta0 is None:
            raise ValueError("ft policy requires beta0")
        self.policy = policy
        self.spec = spec
        self.suite = suite
        self.theta = theta
        self.estimator = estimator
        self.ucb_z = ucb_z
        self.beta0 = beta0
        self.x_percent = x_percent
        self.schedule = schedule
        self.init_estimator = init_estimator or estimator

    @property
    def uses_threshold(self) -> bool:
        return self.policy in _THRESHOLD_POLICIES

    def initial_state(self, init_qualities) -> ThresholdState | None:
        if self.policy == "speculative":
            state = init_threshold(
                init_qualities, self.theta, self.init_estimator, ucb_z=self.ucb_z
            )
            # The EMA updates keep using the configured estimator.
            return replace(state, estimator=self.estimator)
        return None

    def init_stats(self, thoughts, extra_tokens: int, rates) -> SpeculativeStepStats:
        max_tokens = max(t.token_count for t in thoughts)
        sps = self.policy == "sps"
        divisor = rates.sps_speedup if sps else 1.0
        return SpeculativeStepStats(
            step=0,
            accepted=0,
            corrected=0,
            accepted_qualities=(),
            corrected_qualities=tuple(t.quality for t in thoughts),
            threshold_used=math.nan,
            threshold_next=math.nan,
            latency={
                "draft": 0.0,
                "evaluate": 0.0,
                "correct": rates.large * max_tokens / divisor,
            },
            evaluations=len(thoughts) + (1 if extra_tokens else 0),
            large_parallel_tokens=max_tokens,
            extra_tokens=extra_tokens,
            sps_bucket=sps,
        )

    def expand(self, path: ThoughtPath, state, rng: RngStream, acceptance_beta=None):
        k = path.next_step
        if self.policy == "speculative":
            return speculative_generate(
                path, state, self.spec, self.suite, rng, acceptance_beta=acceptance_beta
            )
        if self.policy == "ft":
            beta = _resolve_beta0(self.beta0, self.schedule, k)
            return ablation_generate(
                "FT", path, state, self.spec, self.suite, rng, beta0=beta
            )
        if self.policy == "rr":
            return ablation_generate("RR", path, state, self.spec, self.suite, rng)
        if self.policy == "flme":
            return ablation_generate(
                "FLME", path, state, self.spec, self.suite, rng, x_percent=self.x_percent
            )
        if self.policy == "small-only":
            return self._plain_expand(path, k, state, rng, small=True)
        return self._plain_expand(path, k, state, rng, small=False)

    def _plain_expand(self, path: ThoughtPath, k: int, state, rng: RngStream, small: bool):
        n = self.spec.n_width
        rng_eval = rng.child("eval")
        rates = self.suite.rates
        if small:
            drafts = self.suite.draft(path, k, n, rng.child("small"))
            thoughts = [_score_thought(self.suite, t, path, rng_eval) for t in drafts]
            max_tokens = max(t.token_count for t in thoughts)
            latency = {"draft": rates.small * max_tokens, "evaluate": 0.0, "correct": 0.0}
            large_parallel = 0
        else:
            thoughts = _expand_large(
                self.suite, path, k, n, rng.child("large"), rng_eval
            )
            max_tokens = max(t.token_count for t in thoughts)
            sps = self.policy == "sps"
            divisor = rates.sps_speedup if sps else 1.0
            latency = {
                "draft": 0.0,
                "evaluate": 0.0,
                "correct": rates.large * max_tokens / divisor,
            }
            large_parallel = max_tokens
        stats = SpeculativeStepStats(
            step=k,
            accepted=n if small else 0,
            corrected=0,
            accepted_qualities=tuple(t.quality for t in thoughts) if small else (),
            corrected_qualities=() if small else tuple(t.quality for t in thoughts),
            threshold_used=math.nan,
            threshold_next=math.nan,
            latency=latency,
            drafted=n if small else 0,
            draft_max_tokens=max_tokens if small else 0,
            evaluations=n,
            large_parallel_tokens=large_parallel,
            sps_bucket=self.policy == "sps",
        )
        return state, thoughts, stats


def beam_search(
    cfg: SearchConfig,
    spec: SpecConfig,
    suite,
    rng: RngStream,
    theta: float = 0.9,
    estimator: str = "mean",
    ucb_z: float = 1.645,
    policy: str = "speculative",
    beta0=None,
    x_percent: float | None = None,
    schedule=None,
    init_estimator: str | None = None,
) -> tuple[list[ThoughtPath], SearchTrace]:
    """Beam search with speculative (or baseline/ablation) node expansion.

    Level 0 always expands from the large model and seeds the threshold;
    levels 1..depth-1 expand every surviving beam path with the configured
    policy, retaining the top beam_size paths after each level.  In
    "chained" mode each expansion consumes the newest threshold state; in
    "frozen" mode all expansions of a level accept against the level's entry
    threshold while the EMA state still advances call by call.
    """
    if spec.n_width != cfg.width:
        raise ValueError(
            f"spec.n_width ({spec.n_width}) must match cfg.width ({cfg.width})"
        )
    runner = _PolicyRunner(
        policy,
        spec,
        suite,
        theta,
        estimator,
        ucb_z=ucb_z,
        beta0=beta0,
        x_percent=x_percent,
        schedule=schedule,
        init_estimator=init_estimator,
    )
    trace = SearchTrace(policy=policy, chain_mode=cfg.chain_mode)

    root = ThoughtPath()
    step_rng = rng.child("s0e0")
    init_thoughts = _expand_large(
        suite, root, 0, cfg.width, step_rng.child("large"), step_rng.child("eval")
    )
    init_qualities = [t.quality for t in init_thoughts]
    extra_tokens = 0
    if runner.uses_threshold and spec.extra_large_sample:
        extra = suite.large_one(root, 0, step_rng.child("large.extra"))
        extra = _score_thought(suite, extra, root, step_rng.child("eval.extra"))
        init_qualities.append(extra.quality)
        extra_tokens = extra.token_count

    state = runner.initial_state(init_qualities)
    if state is not None:
        trace.thresholds.append(state.beta)
    init_stats = runner.init_stats(init_thoughts, extra_tokens, suite.rates)
    candidates = [root.extended(t) for t in init_thoughts]
    beam = select_top_b(candidates, min(cfg.beam_size, len(candidates)))
    trace.steps.append(
        StepTrace(
            k=0,
            entry_threshold=None,
            exit_threshold=state.beta if state else None,
            emitted_qualities=[t.quality for t in init_thoughts],
            beam_qualities=[p.ranking_quality for p in beam],
            stats=[init_stats],
            mu_p=schedule.mu_p(0) if schedule else None,
        )
    )

    entries: list[tuple[ThoughtPath, bool]] = [(p, False) for p in beam]
    for k in range(1, cfg.depth):
        if all(done for _, done in entries):
            break
        entry_beta = state.beta if state is not None else None
        pool: list[tuple[ThoughtPath, bool]] = [e for e in entries if e[1]]
        stats_list = []
        emitted_qualities: list[float] = []
        live = [p for p, done in entries if not done]
        for i, path in enumerate(live):
            step_rng = rng.child(f"s{k}e{i}")
            override = entry_beta if cfg.chain_mode == "frozen" else None
            state, thoughts, stats = runner.expand(
                path, state, step_rng, acceptance_beta=override
            )
            stats_list.append(stats)
            emitted_qualities.extend(t.quality for t in thoughts)
            pool.extend((path.extended(t), False) for t in thoughts)
        order = sorted(
            range(len(pool)), key=lambda i: (-pool[i][0].ranking_quality, i)
        )
        entries = [pool[i] for i in order[: min(cfg.beam_size, len(pool))]]
        if cfg.stop_rule == "stochastic" and cfg.stop_prob > 0.0:
            stop_rng = rng.child(f"s{k}.stop")
            entries = [
                (p, done or bool(stop_rng.generator.random() < cfg.stop_prob))
                for p, done in entries
            ]
        beam = [p for p, _ in entries]
        if state is not None:
            trace.thresholds.append(state.beta)
        trace.steps.append(
            StepTrace(
                k=k,
                entry_threshold=entry_beta,
                exit_threshold=state.beta if state else None,
                emitted_qualities=emitted_qualities,
                beam_qualities=[p.ranking_quality for p in beam],
                stats=stats_list,
                mu_p=schedule.mu_p(k) if schedule else None,
            )
        )
    return beam, trace


# ---------------------------------------------------------------------------
# MCTS.
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    path: ThoughtPath
    parent: "_Node | None" = None
    children: list = field(default_factory=list)
    visits: int = 0
    value_sum: float = 0.0

    @property
    def mean_value(self) -> float:
        return self.value_sum / self.visits if self.visits else 0.0


def _uct_pick(node: _Node, c: float) -> _Node:
    log_n = math.log(max(node.visits, 1))
    best, best_key = None, None
    for child in node.children:
        bonus = c * math.sqrt(log_n / child.visits) if child.visits else math.inf
        key = child.mean_value + bonus
        if best_key is None or key > best_key:
            best, best_key = child, key
    return best


def _backpropagate(node: _Node, value: float) -> None:
    while node is not None:
        node.visits += 1
        node.value_sum += value
        node = node.parent


def mcts_search(
    cfg: SearchConfig,
    spec: SpecConfig,
    suite,
    rng: RngStream,
    theta: float = 0.9,
    estimator: str = "mean",
    ucb_z: float = 1.645,
    policy: str = "speculative",
    beta0=None,
    x_percent: float | None = None,
    schedule=None,
    init_estimator: str | None = None,
) -> tuple[ThoughtPath, SearchTrace]:
    """UCT search using the speculative generator as the expansion operator.

    The root is expanded from the large model (seeding the threshold, which
    is shared globally across the tree); each iteration selects by UCB,
    expands one node, and backpropagates the expansion's best child score.
    Node depth is capped at cfg.depth.
    """
    runner = _PolicyRunner(
        policy,
        spec,
        suite,
        theta,
        estimator,
        ucb_z=ucb_z,
        beta0=beta0,
        x_percent=x_percent,
        schedule=schedule,
        init_estimator=init_estimator,
    )
    trace = SearchTrace(policy=policy, chain_mode="global")

    root = _Node(path=ThoughtPath())
    event = 0
    step_rng = rng.child(f"m{event}")
    init_thoughts = _expand_large(
        suite, root.path, 0, cfg.width, step_rng.child("large"), step_rng.child("eval")
    )
    init_qualities = [t.quality for t in init_thoughts]
    extra_tokens = 0
    if runner.uses_threshold and spec.extra_large_sample:
        extra = suite.large_one(root.path, 0, step_rng.child("large.extra"))
        extra = _score_thought(suite, extra, root.path, step_rng.child("eval.extra"))
        init_qualities.append(extra.quality)
        extra_tokens = extra.token_count
    state = runner.initial_state(init_qualities)
    if state is not None:
        trace.thresholds.append(state.beta)
    init_stats = runner.init_stats(init_thoughts, extra_tokens, suite.rates)
    for t in init_thoughts:
        child = _Node(path=root.path.extended(t), parent=root)
        child.visits = 1
        child.value_sum = t.quality
        root.children.append(child)
        root.visits += 1
        root.value_sum += t.quality
    trace.steps.append(
        StepTrace(
            k=0,
            entry_threshold=None,
            exit_threshold=state.beta if state else None,
            emitted_qualities=[t.quality for t in init_thoughts],
            beam_qualities=[max(t.quality for t in init_thoughts)],
            stats=[init_stats],
            mu_p=schedule.mu_p(0) if schedule else None,
        )
    )

    for _ in range(cfg.mcts_iterations):
        node = root
        while node.children:
            node = _uct_pick(node, cfg.exploration_c)
        if node.path.next_step >= cfg.depth:
            _backpropagate(node, node.path.ranking_quality)
            continue
        event += 1
        step_rng = rng.child(f"m{event}")
        entry_beta = state.beta if state is not None else None
        state, thoughts, stats = runner.expand(node.path, state, step_rng)
        for t in thoughts:
            child = _Node(path=node.path.extended(t), parent=node)
            child.visits = 1
            child.value_sum = t.quality
            node.children.append(child)
        rollout = max(t.quality for t in thoughts)
        _backpropagate(node, rollout)
        if state is not None:
            trace.thresholds.append(state.beta)
        trace.steps.append(
            StepTrace(
                k=stats.step,
                entry_threshold=entry_beta,
                exit_threshold=state.beta if state else None,
                emitted_qualities=[t.quality for t in thoughts],
                beam_qualities=[rollout],
                stats=[stats],
                mu_p=schedule.mu_p(stats.step) if schedule else None,
            )
        )

    node = root
    while node.children:
        node = max(node.children, key=lambda ch: ch.mean_value)  # first wins ties
    return node.path, trace
