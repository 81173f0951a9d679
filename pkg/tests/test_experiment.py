import math

import numpy as np
import pytest

from specsearch.analytics import BoundParams
from specsearch.core import QualitySchedule
from specsearch.experiment import (
    BaselineKind,
    ConfigurationError,
    CostModel,
    Scenario,
    StatisticsError,
    acceptance_rate,
    preservation_probability,
    run_ensemble,
    simulate_latency,
    speedup,
    theta_sweep,
    verify_bounds,
    wilson_interval,
)
from specsearch.search import SearchConfig, SpecConfig


def make_scenario(
    gamma=0.9,
    sigma_c=0.05,
    width=5,
    depth=6,
    beam_size=1,
    theta=0.9,
    estimator="mean",
    multiplier=1,
    extra=True,
    cost=None,
    beta0=None,
    x_percent=None,
    gap_ratio=0.9,
    sigma_q=0.1,
    **kw,
):
    schedule = QualitySchedule(
        mu_p0=0.85,
        gamma=gamma,
        sigma_c=sigma_c,
        gap_ratio=gap_ratio,
        sigma_q=sigma_q,
        max_steps=depth,
    )
    return Scenario(
        schedule=schedule,
        search=SearchConfig(width=width, depth=depth, beam_size=beam_size),
        spec=SpecConfig(
            n_width=width, draft_multiplier=multiplier, extra_large_sample=extra
        ),
        cost=cost or CostModel(),
        theta=theta,
        estimator=estimator,
        beta0=beta0,
        x_percent=x_percent,
        **kw,
    )


class TestWilson:
    def test_formula_oracle(self):
        # Hand evaluation of the score interval at p = 0.5, n = 10^4.
        z = 1.959963984540054
        n, s = 10_000, 5_000
        denom = 1 + z * z / n
        center = (0.5 + z * z / (2 * n)) / denom
        half = z * math.sqrt(0.25 / n + z * z / (4 * n * n)) / denom
        p, lo, hi = wilson_interval(s, n)
        assert p == 0.5
        assert lo == pytest.approx(center - half, abs=1e-12)
        assert hi == pytest.approx(center + half, abs=1e-12)
        assert (hi - lo) / 2 == pytest.approx(0.0098, abs=2e-4)

    def test_all_true(self):
        p, lo, hi = wilson_interval(100, 100)
        assert p == 1.0
        assert lo < 1.0
        assert hi == 1.0


class TestRunEnsemble:
    def test_single_replica_matches_trace_shape(self):
        stats = run_ensemble(make_scenario(), BaselineKind.SPEC_SEARCH, 1, 5)
        assert stats.replica_count == 1
        assert len(stats.steps) == 6
        assert stats.preservation.shape == (1,)

    def test_determinism(self):
        a = run_ensemble(make_scenario(), BaselineKind.SPEC_SEARCH, 40, 9)
        b = run_ensemble(make_scenario(), BaselineKind.SPEC_SEARCH, 40, 9)
        assert np.array_equal(a.mean_emitted_quality, b.mean_emitted_quality)
        assert np.array_equal(a.latency_total, b.latency_total)
        assert np.array_equal(a.preservation, b.preservation)

    def test_ar_mean_quality_tracks_schedule(self):
        stats = run_ensemble(make_scenario(depth=5), BaselineKind.AR, 400, 31)
        for k in range(5):
            se = stats.emitted_se[k]
            assert abs(stats.mean_emitted_quality[k] - stats.mu_p[k]) < 3 * se

    def test_ar_has_no_thresholds(self):
        stats = run_ensemble(make_scenario(), BaselineKind.AR, 10, 1)
        assert stats.preservation is None
        assert math.isnan(acceptance_rate(stats))

    def test_replicas_must_be_positive(self):
        with pytest.raises(ValueError):
            run_ensemble(make_scenario(), BaselineKind.AR, 0, 1)


class TestPreservation:
    def test_needs_thirty_replicas(self):
        stats = run_ensemble(make_scenario(), BaselineKind.SPEC_SEARCH, 10, 1)
        with pytest.raises(StatisticsError):
            preservation_probability(stats)

    def test_requires_threshold_run(self):
        stats = run_ensemble(make_scenario(), BaselineKind.AR, 40, 1)
        with pytest.raises(ConfigurationError):
            preservation_probability(stats)

    def test_degenerate_variance_preserves_deterministically(self):
        # sigma_c -> 0 with theta >= gamma: threshold init and updates are
        # noiseless, so every replica preserves.
        scenario = make_scenario(sigma_c=1e-12, theta=0.95, gamma=0.9)
        stats = run_ensemble(scenario, BaselineKind.SPEC_SEARCH, 60, 3)
        p, lo, hi = preservation_probability(stats)
        assert p == 1.0


class TestVerifyBounds:
    def params(self, scenario):
        return BoundParams(
            gamma=scenario.schedule.gamma,
            mu_p0=scenario.schedule.mu_p0,
            sigma_c=scenario.schedule.sigma_c,
            n=scenario.search.width,
            max_steps=scenario.search.depth,
            theta=scenario.theta,
        )

    def test_rejects_wrong_estimator(self):
        scenario = make_scenario(estimator="max-union")
        stats = run_ensemble(scenario, BaselineKind.SPEC_SEARCH, 40, 1)
        with pytest.raises(ConfigurationError):
            verify_bounds(stats, self.params(scenario))

    def test_rejects_multiplier(self):
        scenario = make_scenario(multiplier=2)
        stats = run_ensemble(scenario, BaselineKind.SPEC_SEARCH, 40, 1)
        with pytest.raises(ConfigurationError):
            verify_bounds(stats, self.params(scenario))

    def test_rejects_param_mismatch(self):
        scenario = make_scenario()
        stats = run_ensemble(scenario, BaselineKind.SPEC_SEARCH, 40, 1)
        wrong = BoundParams(
            gamma=0.9, mu_p0=0.8, sigma_c=0.05, n=5, max_steps=6, theta=0.9
        )
        with pytest.raises(ConfigurationError):
            verify_bounds(stats, wrong)

    def test_passes_on_conforming_run(self):
        scenario = make_scenario(sigma_c=0.01, width=8, depth=6)
        stats = run_ensemble(scenario, BaselineKind.SPEC_SEARCH, 600, 17)
        report = verify_bounds(stats, self.params(scenario))
        assert report.passed
        assert report.p_hat + report.half_width >= report.joint_bound
        assert report.stepwise_passed

    def test_inflated_variance_lowers_bound_but_still_passes(self):
        tight = make_scenario(sigma_c=0.001, width=8, depth=6)
        loose = make_scenario(sigma_c=0.1, width=8, depth=6)
        r_tight = verify_bounds(
            run_ensemble(tight, BaselineKind.SPEC_SEARCH, 300, 7), self.params(tight)
        )
        r_loose = verify_bounds(
            run_ensemble(loose, BaselineKind.SPEC_SEARCH, 300, 7), self.params(loose)
        )
        assert r_loose.joint_bound < r_tight.joint_bound
        assert r_loose.passed

    def test_single_step_compares_against_first_factor(self):
        scenario = make_scenario(depth=1)
        stats = run_ensemble(scenario, BaselineKind.SPEC_SEARCH, 200, 5)
        report = verify_bounds(stats, self.params(scenario))
        assert report.joint_bound == pytest.approx(1 - 0.5**6, abs=1e-12)
        assert report.passed


class TestLatency:
    def test_zero_cost_model(self):
        scenario = make_scenario(cost=CostModel(0.0, 0.0, 1.0, 0.0))
        stats = run_ensemble(scenario, BaselineKind.SPEC_SEARCH, 5, 2)
        assert np.all(stats.latency_total == 0.0)

    def test_all_rejected_costs_at_least_sps(self):
        scenario = make_scenario(beta0=math.inf, depth=8, width=6, beam_size=2)
        rej = run_ensemble(scenario, BaselineKind.FT, 30, 11)
        sps = run_ensemble(scenario, BaselineKind.SPS, 30, 11)
        assert np.all(rej.latency_total >= sps.latency_total)

    def test_all_accepted_generation_ten_times_cheaper(self):
        cost = CostModel(lambda_large=0.01, lambda_small=0.001, sps_speedup=2.0)
        scenario = make_scenario(beta0=-math.inf, cost=cost, depth=8, extra=False)
        acc = run_ensemble(scenario, BaselineKind.FT, 5, 13)
        ar = run_ensemble(scenario, BaselineKind.AR, 5, 13)
        init_cost = 59 * 0.01
        spec_gen = acc.latency_total.mean() - init_cost
        ar_gen = ar.latency_total.mean() - init_cost
        assert ar_gen / spec_gen == pytest.approx(10.0, rel=1e-12)

    def test_sps_is_ar_divided_by_speedup(self):
        scenario = make_scenario(depth=8)
        ar = run_ensemble(scenario, BaselineKind.AR, 10, 19)
        sps = run_ensemble(scenario, BaselineKind.SPS, 10, 19)
        assert np.allclose(ar.latency_total, 2.0 * sps.latency_total)
        assert np.allclose(ar.mean_emitted_quality, sps.mean_emitted_quality)


class TestSpeedup:
    def test_reported_ratio_fixtures(self):
        assert round(speedup(275.78, 82.35), 2) == 3.35
        assert round(speedup(138.24, 48.18), 2) == 2.87

    def test_identity(self):
        assert speedup(5.0, 5.0) == 1.0

    def test_composition(self):
        a, b, c = 120.0, 60.0, 20.0
        assert speedup(a, b) * speedup(b, c) == pytest.approx(speedup(a, c), rel=1e-15)

    def test_zero_latency_rejected(self):
        with pytest.raises(ValueError):
            speedup(10.0, 0.0)


class TestAcceptanceRate:
    def test_total_acceptance(self):
        scenario = make_scenario(beta0=-math.inf, extra=False)
        stats = run_ensemble(scenario, BaselineKind.FT, 10, 3)
        assert acceptance_rate(stats) == 1.0

    def test_total_rejection(self):
        scenario = make_scenario(beta0=math.inf)
        stats = run_ensemble(scenario, BaselineKind.FT, 10, 3)
        assert acceptance_rate(stats) == 0.0

    def test_pinned_at_small_mean_gives_half(self):
        # Threshold at mu_q(k): each draft clears it with probability 1/2.
        scenario = make_scenario(beta0="mu_q", width=10, depth=10, beam_size=2)
        stats = run_ensemble(scenario, BaselineKind.FT, 50, 23)
        n_drafts = stats.drafted_total
        se = 0.5 / math.sqrt(n_drafts)
        assert acceptance_rate(stats) == pytest.approx(0.5, abs=3 * se)


class TestThetaSweep:
    def test_rows_per_theta(self):
        rows = theta_sweep([0.8, 0.85, 0.9, 0.95], make_scenario(), 40, 7)
        assert [r["theta"] for r in rows] == [0.8, 0.85, 0.9, 0.95]
        for row in rows:
            assert 0.0 <= row["acceptance_rate"] <= 1.0
            assert row["speedup_vs_ar"] > 0

    def test_empty_values(self):
        assert theta_sweep([], make_scenario(), 10, 7) == []

    def test_duplicates_are_identical(self):
        rows = theta_sweep([0.9, 0.9], make_scenario(), 40, 7)
        assert rows[0] == rows[1]

    def test_range_check(self):
        with pytest.raises(ValueError):
            theta_sweep([1.2], make_scenario(), 10, 7)
