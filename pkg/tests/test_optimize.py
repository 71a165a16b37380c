import json

import numpy as np
import pytest

from conftest import random_instance
from retentropy import optimize as opt
from retentropy.graphs import FeasibleSetSpec, build_graph, is_strongly_connected, load_chain, random_feasible_chain, validate_chain
from retentropy.metrics import entropy_rate, kemeny_constant, truncated_return_entropy
from retentropy.optimize import (
    OptimizationError,
    OptimizeResult,
    OptimizerConfig,
    ProjectionError,
    evaluate_all,
    kkt_residuals,
    optimize_chain,
    project_feasible,
)

cp = pytest.importorskip("cvxpy")


def cvxpy_projection(Q, spec):
    """Independent QP solve of the Euclidean projection over the edge entries."""
    A, b = spec.constraints
    q = spec.to_edges(Q)
    x = cp.Variable(q.shape[0])
    prob = cp.Problem(cp.Minimize(cp.sum_squares(x - q)), [A @ x == b, x >= spec.eps])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return spec.to_matrix(x.value)


def random_spec(rng, n, eps=0.0):
    g, pi, _ = random_instance(rng, n, w_max=2)
    eps = min(eps, 0.5 / g.out_degree().max())
    return FeasibleSetSpec(g, pi, eps)


def mirror(P):
    """Reflect a ring chain: node ``i`` becomes ``-i mod n``."""
    n = P.shape[0]
    idx = (-np.arange(n)) % n
    return P[np.ix_(idx, idx)]


class TestProjection:
    def test_feasible_point_is_fixed(self):
        g, pi = build_graph("ring")
        spec = FeasibleSetSpec(g, pi)
        P = random_feasible_chain(spec, 3)
        np.testing.assert_allclose(project_feasible(P, spec), P, atol=1e-12)

    def test_ring_all_ones_uniform(self):
        g, pi = build_graph("ring", n=6)
        spec = FeasibleSetSpec(g, pi)
        Q = g.adjacency.astype(float)
        X = project_feasible(Q, spec)
        np.testing.assert_allclose(X[g.adjacency], 1 / 3, atol=1e-12)
        res = kkt_residuals(Q, X, spec)
        assert res["stationarity"] <= 1e-7 and res["complementary_slackness"] <= 1e-8

    def test_matches_cvxpy(self, rng):
        for n in (3, 4, 5):
            for eps in (0.0, 0.05):
                spec = random_spec(rng, n, eps)
                Q = rng.normal(scale=0.5, size=(n, n))
                np.testing.assert_allclose(project_feasible(Q, spec), cvxpy_projection(Q, spec), atol=1e-7)

    def test_matches_cvxpy_on_ring_with_large_steps(self, rng):
        g, pi = build_graph("ring")
        spec = FeasibleSetSpec(g, pi)
        Q = random_feasible_chain(spec, 0) + 50 * rng.normal(size=(8, 8))
        np.testing.assert_allclose(project_feasible(Q, spec), cvxpy_projection(Q, spec), atol=1e-6)

    def test_idempotent(self, rng):
        for _ in range(10):
            spec = random_spec(rng, int(rng.integers(2, 6)), eps=0.02)
            X = project_feasible(rng.normal(size=(spec.graph.n,) * 2), spec)
            np.testing.assert_allclose(project_feasible(X, spec), X, atol=1e-9)
            assert validate_chain(X, spec).feasible

    def test_respects_eps(self, rng):
        g, pi = build_graph("grid", rows=3, cols=3)
        spec = FeasibleSetSpec(g, pi, eps=0.05)
        X = project_feasible(rng.normal(size=(9, 9)), spec)
        assert X[g.adjacency].min() >= 0.05 - 1e-12
        assert not X[~g.adjacency].any()

    def test_rejects_non_finite(self):
        g, pi = build_graph("ring", n=3)
        Q = np.ones((3, 3))
        Q[0, 0] = np.nan
        with pytest.raises(ProjectionError):
            project_feasible(Q, FeasibleSetSpec(g, pi))


class TestKKT:
    def test_flags_a_feasible_point_that_is_not_the_projection(self, rng):
        g, pi = build_graph("ring")
        spec = FeasibleSetSpec(g, pi)
        Q = rng.normal(size=(8, 8))
        wrong = random_feasible_chain(spec, 1)
        assert kkt_residuals(Q, wrong, spec)["stationarity"] > 1e-3

    def test_projection_passes(self, rng):
        for _ in range(10):
            spec = random_spec(rng, 4, eps=0.01)
            Q = rng.normal(size=(4, 4))
            res = kkt_residuals(Q, project_feasible(Q, spec), spec)
            assert max(res.values()) <= 1e-7


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"eta": 0}, {"eta": 1}, {"eps": -1}, {"max_iters": 0}, {"starts": 0},
                                        {"step0": 0}, {"tol": -1}, {"shrink": 1.0}, {"gtol": -1}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerConfig(**kwargs)

    def test_defaults(self):
        c = OptimizerConfig()
        assert (c.eta, c.eps, c.max_iters, c.step0, c.shrink, c.sufficient_increase, c.tol, c.window, c.starts) == \
            (0.1, 0.0, 500, 1.0, 0.5, 1e-4, 1e-7, 10, 5)


@pytest.fixture(scope="module")
def ring_spec():
    g, pi = build_graph("ring")
    return FeasibleSetSpec(g, pi)


@pytest.fixture(scope="module")
def ring_result(ring_spec):
    return optimize_chain("return_entropy", ring_spec, OptimizerConfig(starts=3, seed=5))


class TestOptimizeChain:
    def test_feasible_and_irreducible(self, ring_spec, ring_result):
        assert validate_chain(ring_result.chain, ring_spec, tol=1e-8).feasible
        assert is_strongly_connected(ring_result.chain > 0)

    def test_objective_matches_chain(self, ring_spec, ring_result):
        g, pi = ring_spec.graph, ring_spec.pi
        assert ring_result.objective == pytest.approx(truncated_return_entropy(ring_result.chain, g, pi, 0.1), rel=1e-12)
        assert ring_result.objective == max(ring_result.start_objectives)
        assert ring_result.start_objectives[ring_result.start_index] == ring_result.objective

    def test_trace_is_monotone(self, ring_result):
        trace = np.array(ring_result.trace)
        noise = OptimizerConfig().noise_floor * np.maximum(1.0, np.abs(trace[:-1]))
        assert np.all(np.diff(trace) >= -noise)
        assert trace[-1] > trace[0]

    def test_deterministic_in_seed(self, ring_spec, ring_result):
        again = optimize_chain("return_entropy", ring_spec, OptimizerConfig(starts=3, seed=5))
        np.testing.assert_array_equal(again.chain, ring_result.chain)
        assert again.trace == ring_result.trace

    def test_threads_do_not_change_result(self, ring_spec, ring_result):
        threaded = optimize_chain("return_entropy", ring_spec, OptimizerConfig(starts=3, seed=5, threads=3))
        np.testing.assert_array_equal(threaded.chain, ring_result.chain)

    def test_mirrored_chain_has_same_objective(self, ring_spec, ring_result):
        g, pi = ring_spec.graph, ring_spec.pi
        M = mirror(ring_result.chain)
        assert validate_chain(M, ring_spec).feasible
        assert truncated_return_entropy(M, g, pi, 0.1) == pytest.approx(ring_result.objective, abs=1e-9)

    def test_entropy_rate_on_ring(self, ring_spec):
        res = optimize_chain("entropy_rate", ring_spec, OptimizerConfig(starts=2))
        assert res.objective == pytest.approx(entropy_rate(res.chain, ring_spec.pi))
        assert res.objective == pytest.approx(0.9883, abs=1e-3)

    def test_min_kemeny_decreases(self):
        g, pi = build_graph("ring", n=5)
        spec = FeasibleSetSpec(g, pi)
        res = optimize_chain("min_kemeny", spec, OptimizerConfig(starts=1, max_iters=60))
        start = random_feasible_chain(spec, opt.start_seed(0, 0))
        assert res.objective == pytest.approx(kemeny_constant(res.chain, g, pi), rel=1e-12)
        assert res.objective < kemeny_constant(start, g, pi)
        trace = np.array(res.trace)
        assert np.all(np.diff(trace) <= 1e-13 * np.maximum(1.0, np.abs(trace[:-1])))

    def test_random_weighted_instances(self, rng):
        for _ in range(3):
            g, pi, _ = random_instance(rng, 4, w_max=3)
            spec = FeasibleSetSpec(g, pi)
            res = optimize_chain("return_entropy", spec, OptimizerConfig(starts=1, max_iters=40))
            assert validate_chain(res.chain, spec, tol=1e-8).feasible
            assert res.trace[-1] >= res.trace[0]

    def test_unknown_objective(self, ring_spec):
        with pytest.raises(ValueError):
            optimize_chain("max_speed", ring_spec)

    def test_all_starts_failing(self, ring_spec, monkeypatch):
        def broken(*args, **kwargs):
            raise ProjectionError("no feasible point")

        monkeypatch.setattr(opt, "_run_start", broken)
        with pytest.raises(OptimizationError):
            optimize_chain("entropy_rate", ring_spec, OptimizerConfig(starts=2))

    def test_gradient_stop(self):
        g, pi = build_graph("complete", n=2)
        spec = FeasibleSetSpec(g, pi)
        res = optimize_chain("return_entropy", spec, OptimizerConfig(eta=0.01, tol=0, gtol=1e-12, starts=1))
        assert res.converged
        np.testing.assert_allclose(res.chain, 0.5, atol=1e-9)


class TestSerialization:
    def test_json_loads_as_chain(self, tmp_path, ring_result):
        path = tmp_path / "result.json"
        path.write_text(ring_result.to_json())
        data = json.loads(path.read_text())
        assert {"objective_name", "objective", "n", "p", "trace", "converged", "start_index", "seed"} <= set(data)
        np.testing.assert_array_equal(load_chain(path), ring_result.chain)

    def test_schema_is_stable(self):
        res = OptimizeResult(chain=np.eye(2)[::-1], objective=0.0, trace=[0.0], converged=True, start_index=0)
        assert json.loads(res.to_json()) == {
            "objective_name": "return_entropy", "objective": 0.0, "n": 2, "p": [0.0, 1.0, 1.0, 0.0],
            "trace": [0.0], "converged": True, "start_index": 0, "start_objectives": [], "seed": 0,
        }


class TestEvaluateAll:
    def test_uniform_complete(self):
        g, pi = build_graph("complete", n=4)
        m = evaluate_all(np.full((4, 4), 0.25), FeasibleSetSpec(g, pi))
        assert m.J == pytest.approx(4 * np.log(4) - 3 * np.log(3), abs=1e-9)
        assert m.H_rate == pytest.approx(np.log(4))
        assert m.kemeny == pytest.approx(4.0)
        assert m.expected_returns == pytest.approx([4.0] * 4)
        assert m.N_eta == 399 and m.eta == 0.01
        assert m.J_trunc <= m.J

    def test_permutation_on_ring(self):
        g, pi = build_graph("ring", n=4)
        P = np.roll(np.eye(4), 1, axis=1)
        m = evaluate_all(P, FeasibleSetSpec(g, pi))
        assert m.J == 0 and m.H_rate == 0 and m.J_trunc == 0 and m.J_cond == 0
