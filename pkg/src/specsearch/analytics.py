"""Closed-form normal-tail mathematics behind the rejection mechanism.

Provides the standard-normal tail functions, the hazard (inverse Mills
ratio) and its inverse, truncated-normal means, the expected quality of a
draft-then-correct batch, and the Cantelli-style lower bounds on the
probability that the adaptive threshold stays above the large model's mean
quality at every reasoning step.

All functions are pure; the hazard uses a continued-fraction tail evaluation
so it stays accurate far beyond the point where the naive pdf/tail ratio
underflows (|x| ~ 38).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

__all__ = [
    "BoundParams",
    "std_normal_pdf",
    "std_normal_cdf",
    "std_normal_sf",
    "expected_excess",
    "acceptance_probability",
    "hazard",
    "truncated_mean",
    "expected_batch_quality",
    "lossless_alpha",
    "lossless_threshold",
    "stepwise_bound",
    "joint_bound",
    "joint_bound_curve",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Above this point the pdf/sf ratio switches to the continued fraction.
_HAZARD_TAIL_X = 8.0
_CF_DEPTH = 100


def _require_finite(x: float, name: str = "x") -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x}")
    return x


def std_normal_pdf(x: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def std_normal_cdf(x: float) -> float:
    # erfc route: accurate in both tails.
    return 0.5 * float(erfc(-x / _SQRT2))


def std_normal_sf(x: float) -> float:
    """Upper tail probability 1 - cdf(x)."""
    return 0.5 * float(erfc(x / _SQRT2))


def expected_excess(x: float) -> float:
    """E[max(Z - x, 0)] for standard normal Z: pdf(x) - x * sf(x).

    Strictly positive for every finite x, which is what makes the hazard
    strictly increasing.
    """
    x = _require_finite(x)
    return std_normal_pdf(x) - x * std_normal_sf(x)


def acceptance_probability(beta: float, mu_q: float, sigma_q: float) -> float:
    """Probability that a draft of quality N(mu_q, sigma_q) clears ``beta``."""
    if sigma_q <= 0.0:
        raise ValueError(f"sigma_q must be positive, got {sigma_q}")
    if math.isinf(beta):
        return 0.0 if beta > 0 else 1.0
    return std_normal_sf((beta - mu_q) / sigma_q)


def _hazard_continued_fraction(x: float) -> float:
    # Laplace continued fraction for the Mills ratio R(x) = sf(x)/pdf(x):
    #   R(x) = 1 / (x + 1 / (x + 2 / (x + 3 / ...)))
    # Evaluated by backward recurrence; hazard = 1 / R.
    t = x
    for k in range(_CF_DEPTH, 0, -1):
        t = x + k / t
    return t


def hazard(x: float) -> float:
    """pdf(x) / sf(x) for the standard normal.

    Strictly increasing, always above max(x, 0), and numerically stable for
    |x| well past 30 via a continued-fraction tail form.
    """
    x = _require_finite(x)
    if x > _HAZARD_TAIL_X:
        return _hazard_continued_fraction(x)
    return std_normal_pdf(x) / std_normal_sf(x)


def truncated_mean(beta: float, mu_q: float, sigma_q: float) -> float:
    """Mean of N(mu_q, sigma_q) conditioned on exceeding ``beta``.

    Exceeds both beta and mu_q for any finite beta.
    """
    if sigma_q <= 0.0:
        raise ValueError(f"sigma_q must be positive, got {sigma_q}")
    if math.isinf(beta):
        if beta < 0:
            return mu_q
        raise ValueError("truncated mean undefined for beta = +inf")
    return mu_q + sigma_q * hazard((beta - mu_q) / sigma_q)


def expected_batch_quality(
    beta: float,
    mu_p: float,
    mu_q: float,
    sigma_q: float,
    n: int,
    variant: str = "extra-sample",
) -> float:
    """Expected mean quality of one draft-accept-correct batch.

    ``n`` drafts of quality N(mu_q, sigma_q) are kept when they clear
    ``beta``; rejected slots are refilled at the large model's mean ``mu_p``.
    The "extra-sample" variant appends one unconditional large-model sample
    (batch size n + 1); "no-extra-sample" conditions on at least one
    rejection instead, giving a truncated-binomial accepted count.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    p_s = acceptance_probability(beta, mu_q, sigma_q)
    if p_s == 0.0:
        return mu_p
    gain = truncated_mean(beta, mu_q, sigma_q) - mu_p
    if variant == "extra-sample":
        return mu_p + (n * p_s / (n + 1)) * gain
    if variant == "no-extra-sample":
        if p_s == 1.0:
            weight = (n - 1) / n
        else:
            weight = (p_s - p_s**n) / (1.0 - p_s**n)
        return mu_p + weight * gain
    raise ValueError(f"unknown variant {variant!r}")


def lossless_alpha(
    mu_p: float, mu_q: float, sigma_q: float, tol: float = 1e-10
) -> float:
    """Standardized threshold at which the batch quality exactly matches mu_p.

    Solves hazard(alpha) = (mu_p - mu_q) / sigma_q by bracketed bisection.
    Returns -inf when mu_p == mu_q: the hazard is positive everywhere, so a
    zero target has no finite root and every threshold is already lossless.
    """
    if sigma_q <= 0.0:
        raise ValueError(f"sigma_q must be positive, got {sigma_q}")
    if mu_p < mu_q:
        raise ValueError(f"mu_p ({mu_p}) must be >= mu_q ({mu_q})")
    target = (mu_p - mu_q) / sigma_q
    if target <= 0.0:
        return -math.inf

    lo, hi = -10.0, 10.0
    while hazard(lo) > target:
        lo *= 2.0
        if lo < -1e12:  # hazard(lo) -> 0, so this cannot trigger for target > 0
            return -math.inf
    while hazard(hi) < target:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if hazard(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lossless_threshold(mu_p: float, mu_q: float, sigma_q: float) -> float:
    """Smallest rejection threshold that preserves the large model's quality."""
    alpha = lossless_alpha(mu_p, mu_q, sigma_q)
    if math.isinf(alpha):
        return -math.inf
    return mu_q + alpha * sigma_q


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the quality-preservation probability bounds.

    ``theta`` is the EMA weight; the bounds require theta >= gamma.  The
    "extra-sample" variant matches an estimator fed by one unconditional
    large-model sample per step; "no-extra-sample" covers the truncated
    binomial analysis without it.
    """

    gamma: float
    mu_p0: float
    sigma_c: float
    n: int
    max_steps: int
    theta: float = 0.9
    variant: str = "extra-sample"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.mu_p0 <= 0.0:
            raise ValueError(f"mu_p0 must be positive, got {self.mu_p0}")
        if self.sigma_c <= 0.0:
            raise ValueError(f"sigma_c must be positive, got {self.sigma_c}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.theta < self.gamma:
            raise ValueError(
                f"theta ({self.theta}) must be >= gamma ({self.gamma}) "
                "for the preservation bounds"
            )
        if self.variant not in ("extra-sample", "no-extra-sample"):
            raise ValueError(f"unknown variant {self.variant!r}")

    def variance_factor(self) -> float:
        if self.variant == "extra-sample":
            return 1.0 / (self.n + 1) + 2.0 / (self.n + 2)
        return 3.0 / self.n

    def first_factor(self) -> float:
        if self.variant == "extra-sample":
            return 1.0 - 0.5 ** (self.n + 1)
        return 1.0 - 0.5**self.n


def stepwise_bound(params: BoundParams, k: int) -> float:
    """Lower bound on keeping the threshold above mu_p across one update.

    This is the conditional probability bound for the transition from step k
    to step k + 1; the relevant mean is mu_p at step k + 1.  k = 0 covers the
    transition out of the initial all-large expansion.
    """
    if not 0 <= k <= params.max_steps - 1:
        raise ValueError(f"k must be in [0, {params.max_steps - 1}], got {k}")
    mu_next = params.mu_p0 * params.gamma ** (k + 1)
    a = (1.0 - params.gamma) / params.gamma * mu_next
    a2 = a * a
    return a2 / (a2 + params.variance_factor() * params.sigma_c**2)


def joint_bound(params: BoundParams) -> float:
    """Lower bound on the threshold staying above mu_p at every step."""
    return float(joint_bound_curve(params)[-1])


def joint_bound_curve(params: BoundParams) -> np.ndarray:
    """Running lower bound up to each step k = 1..max_steps.

    Entry 0 is the bound for the first threshold alone; entry k - 1 is the
    bound on preservation through step k.  Monotone non-increasing.
    """
    curve = np.empty(params.max_steps)
    value = params.first_factor()
    curve[0] = value
    for k in range(1, params.max_steps):
        value *= stepwise_bound(params, k)
        curve[k] = value
    return curve
