"""Thought generators: statistical large/small models, the token-level
draft-verify sampler, and the correction model used to refill rejected slots.

Thought qualities at step k are drawn from the schedule's per-role normal
distribution.  Correction reuses the large model's distribution but divides
latency by a token-level speculation speedup, since lossless token-level
speculation leaves the output distribution unchanged (the micro-simulator in
this module demonstrates that claim exactly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Evaluator,
    QualitySchedule,
    RngStream,
    Thought,
    ThoughtPath,
    ThoughtSource,
    evaluate,
    step_params,
)

__all__ = [
    "TokenModel",
    "GeneratorModel",
    "CorrectionModel",
    "SpsConfig",
    "sample_thought",
    "draft_batch",
    "correct",
    "sps_decode",
    "sps_exact_distribution",
    "StatisticalSuite",
]


@dataclass(frozen=True)
class TokenModel:
    """Tokens-per-thought distribution: constant or Poisson, floored at 1."""

    kind: str = "constant"
    value: float = 59.0

    def __post_init__(self):
        if self.kind not in ("constant", "poisson"):
            raise ValueError(f"unknown token model kind {self.kind!r}")
        if self.value < 1:
            raise ValueError("tokens per thought must be >= 1")
        object.__setattr__(self, "_constant", int(round(self.value)))

    def sample(self, rng: RngStream, size: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, self._constant, dtype=np.int64)
        draws = rng.generator.poisson(self.value, size=size)
        return np.maximum(draws, 1)

    def sample_one(self, rng: RngStream) -> int:
        if self.kind == "constant":
            return self._constant
        return max(1, int(rng.generator.poisson(self.value)))


@dataclass(frozen=True)
class GeneratorModel:
    """A statistical thought generator for one role of the schedule."""

    role: str  # "large" | "small"
    schedule: QualitySchedule
    tokens: TokenModel = TokenModel()
    per_token_latency: float = 0.0

    def __post_init__(self):
        if self.role not in ("large", "small"):
            raise ValueError(f"role must be 'large' or 'small', got {self.role!r}")
        if self.per_token_latency < 0.0:
            raise ValueError("per_token_latency must be >= 0")

    def step_mean_std(self, k: int) -> tuple[float, float]:
        mu_p, sigma_p, mu_q, sigma_q = step_params(self.schedule, k)
        return (mu_p, sigma_p) if self.role == "large" else (mu_q, sigma_q)


def _clamp01(values: np.ndarray) -> np.ndarray:
    return np.clip(values, 0.0, 1.0)


def _make_thoughts(
    qualities: np.ndarray,
    tokens: np.ndarray,
    step: int,
    source: ThoughtSource,
) -> list[Thought]:
    return [
        Thought(quality=float(q), step=step, token_count=int(t), source=source)
        for q, t in zip(qualities, tokens)
    ]


def sample_thought(
    model: GeneratorModel, k: int, rng: RngStream, clamp: bool = False
) -> Thought:
    """Draw one thought at step k.  Degenerate (sigma = 0) draws are exact."""
    mean, std = model.step_mean_std(k)
    quality = mean if std == 0.0 else float(rng.generator.normal(mean, std))
    if clamp:
        quality = min(1.0, max(0.0, quality))
    return Thought(
        quality=quality,
        step=k,
        token_count=model.tokens.sample_one(rng),
        source=ThoughtSource.LARGE if model.role == "large" else ThoughtSource.SMALL_ACCEPTED,
    )


def draft_batch(
    model: GeneratorModel,
    k: int,
    n: int,
    rng: RngStream,
    clamp: bool = False,
) -> tuple[list[Thought], float]:
    """Draw n thoughts in parallel.

    Latency reflects parallel generation: per-token latency times the
    largest token count in the batch, not the sum.
    """
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    mean, std = model.step_mean_std(k)
    qualities = np.asarray(rng.normal(mean, std, size=n), dtype=float)
    if clamp:
        qualities = _clamp01(qualities)
    tokens = model.tokens.sample(rng, n)
    source = ThoughtSource.LARGE if model.role == "large" else ThoughtSource.SMALL_ACCEPTED
    latency = model.per_token_latency * float(tokens.max())
    return _make_thoughts(qualities, tokens, k, source), latency


@dataclass(frozen=True)
class CorrectionModel:
    """Regenerates a rejected slot with the large model's distribution.

    Quality matches the large model at the same step exactly; latency is the
    large model's thought latency divided by ``sps_speedup``.
    """

    base: GeneratorModel
    sps_speedup: float = 2.0

    def __post_init__(self):
        if self.base.role != "large":
            raise ValueError("correction must wrap the large model")
        if self.sps_speedup < 1.0:
            raise ValueError("sps_speedup must be >= 1")


def correct(
    cm: CorrectionModel, k: int, rng: RngStream, clamp: bool = False
) -> tuple[Thought, float]:
    """Generate one corrected thought and its (accelerated) latency."""
    model = cm.base
    mean, std = model.step_mean_std(k)
    quality = mean if std == 0.0 else float(rng.generator.normal(mean, std))
    if clamp:
        quality = min(1.0, max(0.0, quality))
    tokens = model.tokens.sample_one(rng)
    thought = Thought(
        quality=quality, step=k, token_count=tokens, source=ThoughtSource.CORRECTED
    )
    return thought, model.per_token_latency * tokens / cm.sps_speedup


# ---------------------------------------------------------------------------
# Token-level draft-verify micro-simulator.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpsConfig:
    """Target (p) and draft (q) next-token distributions over a shared vocab."""

    p: np.ndarray
    q: np.ndarray
    draft_len: int = 1

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p and q must be 1-d vectors over the same vocabulary")
        for name, vec in (("p", p), ("q", q)):
            if (vec < 0).any():
                raise ValueError(f"{name} must be nonnegative")
            if abs(vec.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must sum to 1 within 1e-12")
        if self.draft_len < 1:
            raise ValueError("draft_len must be >= 1")


def _residual(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, float]:
    excess = np.maximum(p - q, 0.0)
    mass = float(excess.sum())
    if mass <= 0.0:
        return p.copy(), 0.0
    return excess / mass, mass


def _sample_categorical(cdf: np.ndarray, gen: np.random.Generator) -> int:
    return int(np.searchsorted(cdf, gen.random(), side="right"))


def sps_decode(cfg: SpsConfig, rng: RngStream) -> tuple[list[int], int]:
    """One draft-verify cycle.

    Drafts ``draft_len`` tokens from q, accepts each with probability
    min(1, p/q), and on the first rejection emits one sample from the
    normalized positive residual max(p - q, 0) and stops.
    """
    gen = rng.generator
    p, q = cfg.p, cfg.q
    residual, _ = _residual(p, q)
    q_cdf = np.cumsum(q)
    residual_cdf = np.cumsum(residual)
    tokens: list[int] = []
    accepted = 0
    for _ in range(cfg.draft_len):
        token = _sample_categorical(q_cdf, gen)
        ratio = p[token] / q[token]  # q[token] > 0: it was just drawn from q
        if ratio >= 1.0 or gen.random() < ratio:
            tokens.append(token)
            accepted += 1
        else:
            tokens.append(_sample_categorical(residual_cdf, gen))
            break
    return tokens, accepted


def sps_exact_distribution(cfg: SpsConfig) -> np.ndarray:
    """Exact single-round output distribution by enumeration.

    out(t) = q(t) * min(1, p(t)/q(t)) + P(reject) * residual(t), which
    collapses to min(p, q) + max(p - q, 0) = p.  Computed literally so the
    identity with p is a checked result, not an assumption.
    """
    p, q = cfg.p, cfg.q
    accept_mass = np.minimum(p, q)  # q * min(1, p/q), safe where q = 0
    residual, reject_prob = _residual(p, q)
    if reject_prob == 0.0:
        return accept_mass
    return accept_mass + reject_prob * residual


# ---------------------------------------------------------------------------
# Suite: the duck-typed bundle the search loop drives.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyRates:
    """Per-token rates used to fill step-stats latency breakdowns."""

    small: float = 0.0
    large: float = 0.0
    sps_speedup: float = 1.0


@dataclass(frozen=True)
class StatisticalSuite:
    """Bundles the statistical models behind the search-facing interface.

    The search loop only calls ``draft``, ``correct_one``, ``large_one`` and
    ``score``; a wire-backed suite with the same four methods can be swapped
    in without touching the search code.
    """

    large: GeneratorModel
    small: GeneratorModel
    correction: CorrectionModel
    evaluator: Evaluator
    clamp: bool = False

    @property
    def rates(self) -> LatencyRates:
        return LatencyRates(
            small=self.small.per_token_latency,
            large=self.large.per_token_latency,
            sps_speedup=self.correction.sps_speedup,
        )

    def draft(
        self, path: ThoughtPath, k: int, n: int, rng: RngStream
    ) -> list[Thought]:
        thoughts, _ = draft_batch(self.small, k, n, rng, clamp=self.clamp)
        return thoughts

    def correct_one(self, path: ThoughtPath, k: int, rng: RngStream) -> Thought:
        thought, _ = correct(self.correction, k, rng, clamp=self.clamp)
        return thought

    def large_one(self, path: ThoughtPath, k: int, rng: RngStream) -> Thought:
        return sample_thought(self.large, k, rng, clamp=self.clamp)

    def score(self, thought: Thought, path: ThoughtPath, rng: RngStream) -> float:
        return evaluate(self.evaluator, thought.quality, rng)
