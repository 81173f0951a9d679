"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; every tolerance is pinned here, not calibrated elsewhere.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

import specsearch as ss
from specsearch.cli import run_command, sps_check
from specsearch.config import parse_config


def report(criterion: str, detail: str):
    print(f"PASS {criterion}: {detail}")


def a51_params(**overrides):
    base = dict(gamma=0.9, mu_p0=0.85, sigma_c=0.01, n=10, max_steps=10, theta=0.9)
    base.update(overrides)
    return ss.BoundParams(**base)


def theory_scenario(gamma, sigma_c, width, depth, beam_size=1, **kw):
    schedule = ss.QualitySchedule(
        mu_p0=0.85, gamma=gamma, sigma_c=sigma_c, gap_ratio=0.9, sigma_q=0.05,
        max_steps=depth,
    )
    return ss.Scenario(
        schedule=schedule,
        search=ss.SearchConfig(width=width, depth=depth, beam_size=beam_size),
        spec=ss.SpecConfig(n_width=width, draft_multiplier=1, extra_large_sample=True),
        theta=0.9,
        estimator="mean",
        mode="theory",
        **kw,
    )


class TestCriterion1BoundReproduction:
    def test_reference_bound_and_curve(self, tmp_path):
        start = time.perf_counter()
        value = ss.joint_bound(a51_params())
        curve = ss.joint_bound_curve(a51_params())
        elapsed = time.perf_counter() - start
        assert 0.89 <= value <= 0.91
        assert all(a >= b for a, b in zip(curve, curve[1:]))
        assert elapsed < 1.0

        config = parse_config(
            {
                "replicas": 30,
                "schedule": {"gamma": 0.9, "sigma_c": 0.01, "gap_ratio": 0.9, "sigma_q": 0.05},
                "search": {"width": 10, "depth": 10, "beam_size": 1},
                "speculative": {"draft_multiplier": 1},
            }
        )
        out = tmp_path / "a51"
        run_command("run", config, out_dir=out)
        rows = (out / "bound_curve.csv").read_text().splitlines()[2:]
        values = [float(r.split(",")[1]) for r in rows]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert 0.89 <= values[9] <= 0.91
        report(
            "criterion 1 (closed-form bound reproduction)",
            f"joint bound {value:.4f} in [0.89, 0.91], curve monotone, {elapsed:.3f}s",
        )


class TestCriterion2BoundMonteCarlo:
    REPLICAS = 10_000

    def check_point(self, gamma, sigma_c, width, depth, seed):
        scenario = theory_scenario(gamma, sigma_c, width, depth)
        stats = ss.run_ensemble(
            scenario, ss.BaselineKind.SPEC_SEARCH, self.REPLICAS, seed
        )
        params = ss.BoundParams(
            gamma=gamma, mu_p0=0.85, sigma_c=sigma_c, n=width, max_steps=depth, theta=0.9
        )
        rep = ss.verify_bounds(stats, params)
        assert rep.passed, (
            f"bound violated at gamma={gamma} sigma_c={sigma_c} N={width} K={depth}: "
            f"p_hat={rep.p_hat:.4f} + {rep.half_width:.4f} < {rep.joint_bound:.4f}"
        )
        assert rep.stepwise_passed
        return rep

    def test_a51_point_and_grid(self):
        start = time.perf_counter()
        rep = self.check_point(0.9, 0.01, 10, 10, seed=101)
        grid = [
            (gamma, sigma_c, n, k)
            for gamma in (0.8, 0.9)
            for sigma_c in (0.01, 0.05)
            for n, k in ((5, 5), (8, 8), (12, 6))
        ]
        assert len(grid) == 12
        for i, (gamma, sigma_c, n, k) in enumerate(grid):
            self.check_point(gamma, sigma_c, n, k, seed=200 + i)
        elapsed = time.perf_counter() - start
        assert elapsed < 300.0
        report(
            "criterion 2 (preservation bound Monte Carlo)",
            f"A.5.1 p_hat={rep.p_hat:.4f} >= bound {rep.joint_bound:.4f}; "
            f"12-point grid clean in {elapsed:.0f}s",
        )


class TestCriterion3BatchQualityOracle:
    SETTINGS = [
        (0.85, 0.765, 0.05, 10),
        (0.80, 0.60, 0.10, 5),
        (0.70, 0.69, 0.20, 3),
        (0.90, 0.45, 0.15, 12),
        (0.75, 0.70, 0.02, 7),
    ]

    def test_formula_never_degrades_above_mu_p(self):
        for mu_p, mu_q, sigma_q, n in self.SETTINGS:
            for offset in (0.0, 0.25, 0.5, 1.0, 2.0, 5.0):
                beta = mu_p + offset * sigma_q
                value = ss.expected_batch_quality(beta, mu_p, mu_q, sigma_q, n)
                assert value >= mu_p - 1e-12

    def test_single_step_monte_carlo_matches_formula(self):
        scenario = theory_scenario(0.9, 0.05, 8, 4)
        schedule = scenario.schedule
        suite = scenario.build_suite()
        cfg = scenario.spec
        k = 1
        beta = schedule.mu_p(k)
        state = ss.ThresholdState(beta=beta, theta=0.9)
        ctx = ss.ThoughtPath(
            (ss.Thought(quality=0.8, step=0, token_count=59, source=ss.ThoughtSource.LARGE),)
        )
        reps = 100_000
        means = np.empty(reps)
        for r in range(reps):
            _, _, stats = ss.speculative_generate(
                ctx, state, cfg, suite, ss.RngStream(2024, r, "c3")
            )
            means[r] = stats.batch_mean
        closed = ss.expected_batch_quality(
            beta, schedule.mu_p(k), schedule.mu_q(k), schedule.sigma_q_at(k), 8
        )
        se = means.std(ddof=1) / math.sqrt(reps)
        assert means.mean() == pytest.approx(closed, abs=3 * se)
        report(
            "criterion 3 (batch-quality formula and Monte Carlo)",
            f"formula >= mu_p on 30 grid points; MC mean {means.mean():.6f} "
            f"vs closed form {closed:.6f} (3se={3*se:.6f})",
        )


class TestCriterion4LosslessThresholdTightness:
    CASES = [
        (0.85, 0.75, 0.10, 10),
        (0.80, 0.60, 0.15, 6),
        (0.70, 0.69, 0.05, 4),
        (0.92, 0.46, 0.25, 8),
    ]

    def test_equality_at_root_and_strict_loss_below(self):
        for mu_p, mu_q, sigma_q, n in self.CASES:
            beta_star = ss.lossless_threshold(mu_p, mu_q, sigma_q)
            at_star = ss.expected_batch_quality(beta_star, mu_p, mu_q, sigma_q, n)
            assert at_star == pytest.approx(mu_p, abs=1e-9)
            below = ss.expected_batch_quality(
                beta_star - 1e-3 * sigma_q, mu_p, mu_q, sigma_q, n
            )
            assert below < mu_p
        report(
            "criterion 4 (lossless threshold tightness)",
            "batch quality equals mu_p at beta* within 1e-9 and drops strictly "
            "below at beta* - 1e-3 sigma_q on 4 settings",
        )


class TestCriterion5TokenLevelLosslessness:
    def test_exact_and_sampled(self):
        start = time.perf_counter()
        max_exact, max_tv = sps_check(seed=11, pairs=100, trials=1_000_000)
        elapsed = time.perf_counter() - start
        assert max_exact < 1e-12
        assert max_tv < 0.005
        assert elapsed < 60.0
        report(
            "criterion 5 (token-level losslessness)",
            f"exact deviation {max_exact:.2e} < 1e-12 over 100 pairs; "
            f"TV {max_tv:.4f} < 0.005 over 1e6 trials in {elapsed:.0f}s",
        )


class TestCriterion6ReductionIdentities:
    def build(self, multiplier):
        schedule = ss.QualitySchedule(
            mu_p0=0.85, gamma=0.95, sigma_c=0.05, gap_ratio=0.9, sigma_q=0.1,
            max_steps=12,
        )
        scenario = ss.Scenario(
            schedule=schedule,
            search=ss.SearchConfig(width=6, depth=12, beam_size=2),
            spec=ss.SpecConfig(
                n_width=6, draft_multiplier=multiplier, extra_large_sample=True
            ),
            mode="theory",
        )
        return scenario

    def run(self, scenario, policy, seed, **kw):
        suite = scenario.build_suite()
        return ss.beam_search(
            scenario.search,
            scenario.spec,
            suite,
            ss.RngStream(seed, 0, "run"),
            policy=policy,
            schedule=scenario.schedule,
            **kw,
        )

    def test_total_rejection_equals_all_large(self):
        scenario = self.build(multiplier=2)
        _, rej = self.run(scenario, "ft", 7, beta0=math.inf)
        _, ar = self.run(scenario, "large-only", 7)
        assert rej.depth == ar.depth
        for a, b in zip(rej.steps, ar.steps):
            assert a.emitted_qualities == b.emitted_qualities
            assert a.beam_qualities == b.beam_qualities
        report(
            "criterion 6a (total rejection = all-large trace)",
            f"exact equality of {sum(len(s.emitted_qualities) for s in ar.steps)} "
            "emitted qualities",
        )

    def test_total_acceptance_equals_all_small(self):
        scenario = self.build(multiplier=1)
        _, acc = self.run(scenario, "ft", 8, beta0=-math.inf)
        _, small = self.run(scenario, "small-only", 8)
        assert acc.depth == small.depth
        for a, b in zip(acc.steps, small.steps):
            assert a.emitted_qualities == b.emitted_qualities
            assert a.beam_qualities == b.beam_qualities
        report(
            "criterion 6b (total acceptance = all-small trace)",
            f"exact equality of {sum(len(s.emitted_qualities) for s in small.steps)} "
            "emitted qualities",
        )


class TestCriterion7RewardByStep:
    def test_specsearch_tracks_ar_per_step(self):
        replicas = 2000
        scenario = theory_scenario(0.9, 0.01, 10, 10)
        spec = ss.run_ensemble(scenario, ss.BaselineKind.SPEC_SEARCH, replicas, 99)
        ar = ss.run_ensemble(scenario, ss.BaselineKind.AR, replicas, 99)
        worst = math.inf
        for k in range(scenario.search.depth):
            pooled = math.hypot(spec.emitted_se[k], ar.emitted_se[k])
            diff = spec.mean_emitted_quality[k] - ar.mean_emitted_quality[k]
            worst = min(worst, diff / pooled if pooled else math.inf)
            assert diff >= -3 * pooled
        report(
            "criterion 7 (reward-by-step comparability)",
            f"per-step quality gap >= -3 pooled SE at every step "
            f"(worst normalized gap {worst:.2f})",
        )


class TestCriterion8Latency:
    def test_reported_speedup_fixtures(self):
        assert round(ss.speedup(275.78, 82.35), 2) == 3.35
        assert round(ss.speedup(138.24, 48.18), 2) == 2.87

    def test_latency_ordering_on_default_cost_model(self):
        replicas = 500
        schedule = ss.QualitySchedule(
            mu_p0=0.85, gamma=0.999, sigma_c=0.05, gap_ratio=1.0, sigma_q=0.15,
            max_steps=25,
        )
        scenario = ss.Scenario(
            schedule=schedule,
            search=ss.SearchConfig(width=6, depth=25, beam_size=2),
            spec=ss.SpecConfig(n_width=6, draft_multiplier=2, extra_large_sample=True),
            cost=ss.CostModel(),
            theta=0.9,
            estimator="mean",
            mode="theory",
        )
        spec = ss.run_ensemble(scenario, ss.BaselineKind.SPEC_SEARCH, replicas, 42)
        ar = ss.run_ensemble(scenario, ss.BaselineKind.AR, replicas, 42)
        sps = ss.run_ensemble(scenario, ss.BaselineKind.SPS, replicas, 42)
        rate = ss.acceptance_rate(spec)
        assert rate > 0.0
        ar_mean = ar.latency_total.mean()
        sps_mean = sps.latency_total.mean()
        spec_mean = spec.latency_total.mean()
        assert ar_mean >= sps_mean >= spec_mean
        report(
            "criterion 8 (speedup fixtures and latency ordering)",
            f"3.35/2.87 fixtures exact; AR {ar_mean:.1f}s >= SpS {sps_mean:.1f}s "
            f">= SpecSearch {spec_mean:.1f}s over {replicas} paired runs "
            f"(acceptance {rate:.2f})",
        )


class TestCriterion9EstimatorDominance:
    def test_pointwise_dominance(self):
        rng = np.random.default_rng(9090)
        for _ in range(1000):
            v_p = tuple(rng.normal(0.6, 0.25, size=rng.integers(1, 9)))
            v_q = tuple(rng.normal(0.6, 0.25, size=rng.integers(0, 9)))
            assert ss.estimate("max-union", v_p, v_q) >= ss.estimate("mean", v_p, v_q)

    def test_ensemble_preservation_dominance(self):
        replicas = 3000
        base = theory_scenario(0.9, 0.01, 8, 8)
        from dataclasses import replace

        mean_stats = ss.run_ensemble(base, ss.BaselineKind.SPEC_SEARCH, replicas, 55)
        max_scenario = replace(base, estimator="max-union")
        max_stats = ss.run_ensemble(
            max_scenario, ss.BaselineKind.SPEC_SEARCH, replicas, 55
        )
        p_mean, lo_m, hi_m = ss.preservation_probability(mean_stats)
        p_max, lo_x, hi_x = ss.preservation_probability(max_stats)
        pooled_half = math.hypot((hi_m - lo_m) / 2, (hi_x - lo_x) / 2)
        assert p_max >= p_mean - 2 * pooled_half
        report(
            "criterion 9 (estimator dominance)",
            f"max-union >= mean on 1000 random sets; preservation "
            f"{p_max:.4f} (max) vs {p_mean:.4f} (mean), slack 2*{pooled_half:.4f}",
        )


class TestCriterion10Determinism:
    def test_byte_identical_outputs(self, tmp_path):
        config = parse_config(
            {
                "replicas": 40,
                "master_seed": 4242,
                "schedule": {"gamma": 0.9, "sigma_c": 0.01, "gap_ratio": 0.9, "sigma_q": 0.05},
                "search": {"width": 6, "depth": 8, "beam_size": 2},
                "sweep_theta": [0.9, 0.95],
            }
        )
        pairs = []
        for command in ("run", "sweep-theta"):
            out_a = tmp_path / f"{command}-a"
            out_b = tmp_path / f"{command}-b"
            assert run_command(command, config, out_dir=out_a) == 0
            assert run_command(command, config, out_dir=out_b) == 0
            for file_a in sorted(out_a.iterdir()):
                file_b = out_b / file_a.name
                assert file_a.read_bytes() == file_b.read_bytes()
                pairs.append(file_a.name)
        report(
            "criterion 10 (determinism)",
            f"byte-identical reruns for {sorted(set(pairs))}",
        )


class TestCriterion11BridgeContract:
    def test_speculative_step_over_mock_with_retry(self):
        from specsearch.bridge import BridgeEndpoint, BridgeSuite, MockBridgeServer

        with MockBridgeServer() as server:
            server.fault_sleep = 0.8
            server.inject_fault("/generate", "timeout")  # retry path
            suite = BridgeSuite(
                large_endpoint=BridgeEndpoint(server.url, "large", timeout=0.3, retry_limit=2),
                small_endpoint=BridgeEndpoint(server.url, "small", timeout=0.3, retry_limit=2),
                evaluator_endpoint=BridgeEndpoint(server.url, "evaluator", timeout=0.3, retry_limit=2),
            )
            ctx = ss.ThoughtPath(
                (
                    ss.Thought(
                        quality=0.7, step=0, token_count=10,
                        source=ss.ThoughtSource.LARGE, text="question",
                    ),
                )
            )
            state = ss.ThresholdState(beta=0.5, theta=0.9)
            n = 5
            cfg = ss.SpecConfig(n_width=n, draft_multiplier=2, extra_large_sample=True)
            totals = []
            for step in range(3):
                state, thoughts, stats = ss.speculative_generate(
                    ctx, state, cfg, suite, ss.RngStream(1, step, "bridge")
                )
                assert len(thoughts) == n
                assert stats.accepted + stats.corrected == n
                totals.append((stats.accepted, stats.corrected))
                ctx = ctx.extended(thoughts[0])
        report(
            "criterion 11 (bridge contract)",
            f"three steps over the mock emitted exactly {n} thoughts each with "
            f"U+M=N splits {totals}, including one timeout retry",
        )
