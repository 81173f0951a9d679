"""Latent quality model, thoughts, paths, evaluators, and seeded randomness.

Everything here is immutable after construction; sampling and evaluation are
pure functions of an :class:`RngStream`, so objects can be shared freely
across concurrent workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "QualitySchedule",
    "Thought",
    "ThoughtPath",
    "ThoughtSource",
    "Evaluator",
    "RngStream",
    "step_params",
    "evaluate",
]


StdSpec = Union[float, Sequence[float], Callable[[int], float], None]


def _as_std_fn(spec: StdSpec, fallback: float) -> Callable[[int], float]:
    """Normalize a constant / table / callable std description to a function."""
    if spec is None:
        return lambda k: fallback
    if callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        value = float(spec)
        return lambda k: value
    table = [float(v) for v in spec]
    return lambda k: table[k]


@dataclass(frozen=True)
class QualitySchedule:
    """Per-step quality distributions for the large and small generators.

    The large model's mean quality decays geometrically, mu_p(k) =
    mu_p0 * gamma**k, with per-step std bounded by ``sigma_c``.  The small
    model's mean is ``gap_ratio`` times the large model's at every step.

    ``sigma_p`` and ``sigma_q`` accept a constant, a per-step table, or a
    callable of the step index; ``sigma_p`` defaults to ``sigma_c``.
    """

    mu_p0: float
    gamma: float
    sigma_c: float
    gap_ratio: float
    sigma_q: StdSpec
    max_steps: int
    sigma_p: StdSpec = None

    def __post_init__(self):
        if not 0.0 < self.mu_p0 <= 1.0:
            raise ValueError(f"mu_p0 must be in (0, 1], got {self.mu_p0}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.sigma_c <= 0.0:
            raise ValueError(f"sigma_c must be positive, got {self.sigma_c}")
        if not 0.0 < self.gap_ratio <= 1.0:
            raise ValueError(f"gap_ratio must be in (0, 1], got {self.gap_ratio}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        sigma_p_fn = _as_std_fn(self.sigma_p, self.sigma_c)
        sigma_q_fn = _as_std_fn(self.sigma_q, self.sigma_c)
        for k in range(self.max_steps + 1):
            sp = sigma_p_fn(k)
            if not 0.0 <= sp <= self.sigma_c + 1e-15:
                raise ValueError(f"sigma_p({k})={sp} exceeds sigma_c={self.sigma_c}")
            if sigma_q_fn(k) <= 0.0:
                raise ValueError(f"sigma_q({k}) must be positive")
        object.__setattr__(self, "_sigma_p_fn", sigma_p_fn)
        object.__setattr__(self, "_sigma_q_fn", sigma_q_fn)
        table = tuple(
            (
                self.mu_p0 * self.gamma**k,
                sigma_p_fn(k),
                self.gap_ratio * self.mu_p0 * self.gamma**k,
                sigma_q_fn(k),
            )
            for k in range(self.max_steps + 1)
        )
        object.__setattr__(self, "_table", table)

    def mu_p(self, k: int) -> float:
        return self.mu_p0 * self.gamma**k

    def mu_q(self, k: int) -> float:
        return self.gap_ratio * self.mu_p(k)

    def sigma_p_at(self, k: int) -> float:
        return self._sigma_p_fn(k)  # type: ignore[attr-defined]

    def sigma_q_at(self, k: int) -> float:
        return self._sigma_q_fn(k)  # type: ignore[attr-defined]


def step_params(schedule: QualitySchedule, k: int) -> tuple[float, float, float, float]:
    """Return (mu_p, sigma_p, mu_q, sigma_q) at reasoning step ``k``.

    Raises IndexError when k is outside [0, schedule.max_steps].
    """
    if not 0 <= k <= schedule.max_steps:
        raise IndexError(f"step {k} outside [0, {schedule.max_steps}]")
    return schedule._table[k]  # type: ignore[attr-defined]


class ThoughtSource(str, Enum):
    SMALL_ACCEPTED = "small-accepted"
    LARGE = "large"
    CORRECTED = "corrected"


@dataclass(frozen=True, slots=True)
class Thought:
    """One reasoning step: an evaluated quality score plus bookkeeping.

    ``quality`` is the evaluator's score for this thought.  In clamp mode it
    lies in [0, 1]; in theory mode it is an unbounded real.
    """

    quality: float
    step: int
    token_count: int
    source: ThoughtSource
    text: str | None = None

    def __post_init__(self):
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")
        if self.token_count < 1:
            raise ValueError(f"token_count must be >= 1, got {self.token_count}")


@dataclass(frozen=True, slots=True)
class ThoughtPath:
    """A root-to-leaf sequence of thoughts; ranked by its last thought."""

    thoughts: tuple[Thought, ...] = ()

    def __post_init__(self):
        for i, t in enumerate(self.thoughts):
            if t.step != i:
                raise ValueError(f"thought at index {i} has step {t.step}")

    @property
    def ranking_quality(self) -> float:
        if not self.thoughts:
            raise ValueError("empty path has no ranking quality")
        return self.thoughts[-1].quality

    @property
    def next_step(self) -> int:
        return len(self.thoughts)

    def extended(self, thought: Thought) -> "ThoughtPath":
        if thought.step != self.next_step:
            raise ValueError(
                f"expected step {self.next_step}, got thought at step {thought.step}"
            )
        return ThoughtPath(self.thoughts + (thought,))

    def qualities(self) -> tuple[float, ...]:
        return tuple(t.quality for t in self.thoughts)


@dataclass(frozen=True)
class Evaluator:
    """Scores a thought's latent quality, optionally with noise and clamping.

    kind "oracle" returns the latent quality exactly (noise_std must be 0);
    kind "noisy" adds a zero-mean gaussian perturbation of std ``noise_std``.
    With ``clamp`` the returned score is clipped to [0, 1].
    """

    kind: str = "oracle"
    noise_std: float = 0.0
    clamp: bool = False

    def __post_init__(self):
        if self.kind not in ("oracle", "noisy"):
            raise ValueError(f"unknown evaluator kind {self.kind!r}")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")
        if self.kind == "oracle" and self.noise_std != 0.0:
            raise ValueError("oracle evaluator requires noise_std == 0")


def evaluate(evaluator: Evaluator, latent_quality: float, rng: "RngStream") -> float:
    """Score a latent quality.  Oracle evaluation consumes no randomness."""
    score = latent_quality
    if evaluator.kind == "noisy" and evaluator.noise_std > 0.0:
        score = score + evaluator.noise_std * rng.generator.standard_normal()
    if evaluator.clamp:
        score = min(1.0, max(0.0, score))
    return score


@lru_cache(maxsize=65536)
def _label_words(label: str) -> tuple[int, ...]:
    # Stable across runs and platforms (unlike hash()).
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


@dataclass
class RngStream:
    """A named, reproducible random stream.

    Identical (master_seed, replica_index, stream_label) triples yield
    identical draw sequences; distinct replica indices yield statistically
    independent streams.  ``child`` derives a sub-stream by extending the
    label, which is how batch members and search steps get their own streams.
    """

    master_seed: int
    replica_index: int = 0
    stream_label: str = ""
    _generator: np.random.Generator | None = field(
        default=None, repr=False, compare=False
    )

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            seq = np.random.SeedSequence(
                entropy=self.master_seed,
                spawn_key=(self.replica_index, *_label_words(self.stream_label)),
            )
            self._generator = np.random.default_rng(seq)
        return self._generator

    def child(self, label: str) -> "RngStream":
        joined = f"{self.stream_label}/{label}" if self.stream_label else label
        return RngStream(self.master_seed, self.replica_index, joined)

    def normal(self, mean: float, std: float, size: int | None = None):
        if std == 0.0:
            if size is None:
                return mean
            return np.full(size, mean)
        return self.generator.normal(mean, std, size=size)
