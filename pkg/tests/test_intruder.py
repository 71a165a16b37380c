import json

import numpy as np
import pytest

from conftest import cycle_chain, cycle_graph, random_instance, two_node
from retentropy.graphs import FeasibleSetSpec, build_graph, random_feasible_chain
from retentropy.hitting import ReturnTimeDistribution, return_time_distribution, return_time_distributions
from retentropy.intruder import (
    AttackPlan,
    IntruderError,
    IntruderParams,
    attack_plan,
    capture_curve,
    capture_probability,
    curve_to_csv,
    patience_bound,
    plan_horizon,
    simulate_capture,
)

CYCLE = (cycle_chain(4), cycle_graph(4), np.full(4, 0.25))


def brute_force_plan(dist: ReturnTimeDistribution, tau: int, delta: float):
    """Direct evaluation of the intruder's choice from the definition."""
    p = dist.probs

    def tail(s):  # P(T > s)
        return 1.0 - p[:s].sum()

    S = next(S for S in range(1, dist.K + 1) if tail(S - 1) <= delta + 1e-15)
    best = None
    for s in range(S + 1):
        if tail(s) <= 1e-12:
            continue
        value = p[s:s + tau].sum() / tail(s)
        if best is None or value < best[1] - 1e-12:
            best = (s, value)
    return S, best[0], best[1]


class TestParams:
    @pytest.mark.parametrize("tau,delta", [(0, 0.1), (1.5, 0.1), (1, 0.0), (1, 1.0)])
    def test_rejects(self, tau, delta):
        with pytest.raises(IntruderError):
            IntruderParams(tau, delta)


class TestPatienceBound:
    def test_cycle(self):
        d = return_time_distribution(*CYCLE[:2], 0, 10)
        assert patience_bound(d, 0.1) == 5

    def test_two_node(self):
        g, _, P = two_node()
        assert patience_bound(return_time_distribution(P, g, 0, 30), 0.5) == 2

    def test_at_least_one(self):
        g, _, P = two_node()
        assert patience_bound(return_time_distribution(P, g, 0, 30), 0.999) >= 1

    def test_definition(self, rng):
        g, pi, P = random_instance(rng, 4, w_max=2)
        for d in return_time_distributions(P, g, 400):
            for delta in (0.05, 0.3):
                S = patience_bound(d, delta)
                assert 1 - d.probs[:S - 1].sum() <= delta + 1e-12
                if S > 1:
                    assert 1 - d.probs[:S - 2].sum() > delta

    def test_short_horizon(self):
        g, _, P = two_node()
        with pytest.raises(IntruderError):
            patience_bound(return_time_distribution(P, g, 0, 3), 0.01)


class TestAttackPlan:
    def test_cycle_short_attack(self):
        plan = attack_plan(*CYCLE[:3], IntruderParams(3, 0.1))
        np.testing.assert_array_equal(plan.s, 0)
        np.testing.assert_array_equal(plan.capture, 0)
        np.testing.assert_array_equal(plan.S, 5)

    def test_cycle_long_attack(self):
        plan = attack_plan(*CYCLE[:3], IntruderParams(4, 0.1))
        np.testing.assert_array_equal(plan.capture, 1)

    def test_two_node_memoryless(self):
        g, pi, P = two_node()
        plan = attack_plan(P, g, pi, IntruderParams(1, 0.01))
        np.testing.assert_allclose(plan.capture, 0.5, atol=1e-12)
        np.testing.assert_array_equal(plan.s, 0)

    def test_matches_brute_force(self, rng):
        for _ in range(5):
            g, pi, P = random_instance(rng, 4, w_max=3)
            params = IntruderParams(int(rng.integers(1, 6)), 0.1)
            plan = attack_plan(P, g, pi, params)
            for i, d in enumerate(return_time_distributions(P, g, plan_horizon(pi, g, params))):
                S, s, c = brute_force_plan(d, params.tau, params.delta)
                assert (plan.S[i], plan.s[i]) == (S, s)
                assert plan.capture[i] == pytest.approx(c, abs=1e-12)

    def test_capture_below_immediate_attack(self, rng):
        g, pi, P = random_instance(rng, 5, w_max=2)
        for tau in (1, 3, 8):
            plan = attack_plan(P, g, pi, IntruderParams(tau))
            for i, d in enumerate(return_time_distributions(P, g, 100)):
                assert 0 <= plan.s[i] <= plan.S[i]
                assert plan.capture[i] <= d.probs[:tau].sum() + 1e-12

    def test_delta_only_moves_patience(self):
        g, pi = build_graph("grid", rows=3, cols=3)
        P = random_feasible_chain(FeasibleSetSpec(g, pi), 0)
        loose = attack_plan(P, g, pi, IntruderParams(2, 0.5))
        tight = attack_plan(P, g, pi, IntruderParams(2, 0.1))
        assert np.all(loose.S <= tight.S) and np.any(loose.S < tight.S)
        # a smaller window of patience can only restrict the choice of s
        assert np.all(tight.capture <= loose.capture + 1e-12)

    def test_json(self):
        plan = AttackPlan(np.array([5]), np.array([0]), np.array([0.0]), 3, 0.1)
        assert json.loads(plan.to_json()) == {"tau": 3, "delta": 0.1,
                                              "nodes": [{"node": 0, "S": 5, "s": 0, "capture": 0.0}]}


class TestCapture:
    def test_cycle(self):
        assert capture_probability(*CYCLE, IntruderParams(3)).total == 0
        assert capture_probability(*CYCLE, IntruderParams(4)).total == 1

    def test_curve_cycle(self):
        curve = capture_curve(*CYCLE, 0.1, range(1, 7))
        assert curve == [(1, 0.0), (2, 0.0), (3, 0.0), (4, 1.0), (5, 1.0), (6, 1.0)]

    def test_curve_matches_single_evaluations(self, rng):
        g, pi, P = random_instance(rng, 4, w_max=2)
        curve = capture_curve(P, g, pi, 0.1, range(1, 6))
        for tau, total in curve:
            assert total == pytest.approx(capture_probability(P, g, pi, IntruderParams(tau)).total, abs=1e-13)

    def test_curve_nondecreasing(self, rng):
        for _ in range(5):
            g, pi, P = random_instance(rng, 5, w_max=3)
            totals = [t for _, t in capture_curve(P, g, pi, 0.1, range(1, 25))]
            assert np.all(np.diff(totals) >= -1e-12)
            assert all(0 <= t <= 1 for t in totals)

    def test_empty_range(self):
        with pytest.raises(IntruderError):
            capture_curve(*CYCLE, 0.1, range(1, 1))

    def test_csv(self):
        assert curve_to_csv([(1, 0.0), (2, 0.25)]) == "tau,total\n1,0.0\n2,0.25\n"


class TestSimulation:
    def test_cycle_is_exact(self):
        report = simulate_capture(*CYCLE, IntruderParams(4), trials=2000, seed=1)
        assert report.estimate == 1.0

    def test_two_node(self):
        g, pi, P = two_node()
        report = simulate_capture(P, g, pi, IntruderParams(1, 0.01), trials=100_000, seed=3)
        assert report.estimate == pytest.approx(0.5, abs=0.01)

    def test_deterministic_in_seed(self, rng):
        g, pi, P = random_instance(rng, 4, w_max=2)
        a = simulate_capture(P, g, pi, IntruderParams(2), trials=5000, seed=11)
        b = simulate_capture(P, g, pi, IntruderParams(2), trials=5000, seed=11)
        c = simulate_capture(P, g, pi, IntruderParams(2), trials=5000, seed=12)
        assert a == b and a != c

    def test_grid_interval_contains_analytic_value(self):
        g, pi = build_graph("grid")
        P = random_feasible_chain(FeasibleSetSpec(g, pi), 2)
        params = IntruderParams(3)
        analytic = capture_probability(P, g, pi, params).total
        assert simulate_capture(P, g, pi, params, trials=100_000, seed=0).contains(analytic)

    def test_coverage_over_replications(self, rng):
        hits = 0
        for rep in range(20):
            g, pi, P = random_instance(rng, 4, w_max=3)
            params = IntruderParams(int(rng.integers(1, 6)))
            analytic = capture_probability(P, g, pi, params).total
            hits += simulate_capture(P, g, pi, params, trials=20_000, seed=rep).contains(analytic)
        assert hits >= 18

    def test_rejects_no_trials(self):
        with pytest.raises(IntruderError):
            simulate_capture(*CYCLE, IntruderParams(1), trials=0)
