import math

import numpy as np
import pytest

from specsearch.core import (
    Evaluator,
    QualitySchedule,
    RngStream,
    Thought,
    ThoughtPath,
    ThoughtSource,
    evaluate,
    step_params,
)


def make_schedule(**overrides):
    base = dict(
        mu_p0=0.85, gamma=0.9, sigma_c=0.01, gap_ratio=0.9, sigma_q=0.05, max_steps=10
    )
    base.update(overrides)
    return QualitySchedule(**base)


class TestQualitySchedule:
    def test_step_params_at_zero(self):
        mu_p, sigma_p, mu_q, sigma_q = step_params(make_schedule(), 0)
        assert mu_p == 0.85
        assert sigma_p == 0.01
        assert mu_q == pytest.approx(0.9 * 0.85)
        assert sigma_q == 0.05

    def test_step_params_decay(self):
        sched = make_schedule()
        assert step_params(sched, 1)[0] == pytest.approx(0.765)
        mus = [step_params(sched, k)[0] for k in range(11)]
        assert all(a > b for a, b in zip(mus, mus[1:]))
        for a, b in zip(mus, mus[1:]):
            assert b <= sched.gamma * a + 1e-15

    def test_gap_ratio_scales_small_mean(self):
        sched = make_schedule(gap_ratio=0.7)
        for k in (0, 3, 7):
            mu_p, _, mu_q, _ = step_params(sched, k)
            assert mu_q == pytest.approx(0.7 * mu_p)

    def test_range_error(self):
        sched = make_schedule()
        with pytest.raises(IndexError):
            step_params(sched, 11)
        with pytest.raises(IndexError):
            step_params(sched, -1)

    def test_per_step_tables(self):
        sched = make_schedule(sigma_p=[0.01] * 6 + [0.005] * 5, sigma_q=lambda k: 0.05 + 0.001 * k)
        assert step_params(sched, 7)[1] == 0.005
        assert step_params(sched, 3)[3] == pytest.approx(0.053)

    def test_sigma_p_cannot_exceed_bound(self):
        with pytest.raises(ValueError):
            make_schedule(sigma_p=0.02)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            make_schedule(gamma=1.0)
        with pytest.raises(ValueError):
            make_schedule(mu_p0=0.0)
        with pytest.raises(ValueError):
            make_schedule(gap_ratio=1.5)
        with pytest.raises(ValueError):
            make_schedule(sigma_c=-1.0)


class TestThoughtAndPath:
    def thought(self, step=0, quality=0.5):
        return Thought(
            quality=quality, step=step, token_count=59, source=ThoughtSource.LARGE
        )

    def test_validation(self):
        with pytest.raises(ValueError):
            Thought(quality=0.5, step=-1, token_count=10, source=ThoughtSource.LARGE)
        with pytest.raises(ValueError):
            Thought(quality=0.5, step=0, token_count=0, source=ThoughtSource.LARGE)

    def test_path_steps_must_be_consecutive(self):
        path = ThoughtPath((self.thought(0),))
        with pytest.raises(ValueError):
            path.extended(self.thought(2))
        with pytest.raises(ValueError):
            ThoughtPath((self.thought(1),))

    def test_ranking_quality_is_last(self):
        path = ThoughtPath((self.thought(0, 0.9),)).extended(self.thought(1, 0.4))
        assert path.ranking_quality == 0.4
        assert path.qualities() == (0.9, 0.4)

    def test_empty_path(self):
        path = ThoughtPath()
        assert path.next_step == 0
        with pytest.raises(ValueError):
            _ = path.ranking_quality


class TestEvaluator:
    def test_oracle_identity(self):
        rng = RngStream(1)
        assert evaluate(Evaluator(), 0.7, rng) == 0.7

    def test_oracle_clamp(self):
        rng = RngStream(1)
        assert evaluate(Evaluator(clamp=True), 1.3, rng) == 1.0
        assert evaluate(Evaluator(clamp=True), -0.2, rng) == 0.0

    def test_oracle_consumes_no_randomness(self):
        rng = RngStream(5, 0, "eval")
        evaluate(Evaluator(), 0.4, rng)
        after = rng.generator.random()
        fresh = RngStream(5, 0, "eval").generator.random()
        assert after == fresh

    def test_noisy_mean(self):
        rng = RngStream(11, 0, "noise")
        ev = Evaluator(kind="noisy", noise_std=0.05)
        draws = np.array([evaluate(ev, 0.5, rng) for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) < 3 * 0.05 / math.sqrt(100_000)

    def test_oracle_requires_zero_noise(self):
        with pytest.raises(ValueError):
            Evaluator(kind="oracle", noise_std=0.1)
        with pytest.raises(ValueError):
            Evaluator(kind="unknown")


class TestRngStream:
    def test_identical_triples_identical_draws(self):
        a = RngStream(42, 3, "x/y").generator.random(8)
        b = RngStream(42, 3, "x/y").generator.random(8)
        assert np.array_equal(a, b)

    def test_distinct_replicas_differ(self):
        a = RngStream(42, 0, "x").generator.random(8)
        b = RngStream(42, 1, "x").generator.random(8)
        assert not np.array_equal(a, b)

    def test_distinct_labels_differ(self):
        a = RngStream(42, 0, "x").generator.random(8)
        b = RngStream(42, 0, "y").generator.random(8)
        assert not np.array_equal(a, b)

    def test_child_labels_compose(self):
        child = RngStream(42, 0, "a").child("b")
        assert child.stream_label == "a/b"
        direct = RngStream(42, 0, "a/b")
        assert np.array_equal(child.generator.random(4), direct.generator.random(4))

    def test_replica_independence_statistical(self):
        # Pairwise correlation has std ~ 1/sqrt(n); 0.05 is a 5-sigma bound.
        draws = np.stack(
            [RngStream(7, i, "corr").generator.standard_normal(10_000) for i in range(8)]
        )
        corr = np.corrcoef(draws)
        off_diag = corr[~np.eye(8, dtype=bool)]
        assert np.abs(off_diag).max() < 0.05

    def test_degenerate_normal_draws_nothing(self):
        rng = RngStream(3, 0, "z")
        assert rng.normal(0.5, 0.0) == 0.5
        assert np.array_equal(rng.normal(0.5, 0.0, size=3), np.full(3, 0.5))
        assert rng.generator.random() == RngStream(3, 0, "z").generator.random()
