"""Shared instance generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from retentropy.graphs import WeightedDigraph


def stationary(P) -> np.ndarray:
    """Stationary distribution of an irreducible chain from its left null space."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.r_[np.zeros(n), 1.0]
    return np.linalg.lstsq(A, b, rcond=None)[0]


def random_instance(rng: np.random.Generator, n: int, w_max: int = 1, density: float = 0.5,
                    self_loops: bool = True):
    """A random strongly connected weighted digraph with a positive chain on it.

    A Hamiltonian cycle guarantees strong connectivity; extra edges are added
    with probability ``density``. Edge probabilities are drawn from
    ``[0.2, 1)`` and normalized, and ``pi`` is the chain's own stationary
    distribution, so the chain lies in the feasible set by construction.
    """
    perm = rng.permutation(n)
    adj = np.zeros((n, n), dtype=bool)
    adj[perm, np.roll(perm, -1)] = True
    adj |= rng.random((n, n)) < density
    if not self_loops:
        np.fill_diagonal(adj, False)
        if n == 1:
            adj[0, 0] = True
    W = np.where(adj, rng.integers(1, w_max + 1, size=(n, n)), 0)
    graph = WeightedDigraph.from_weights(W)
    P = np.where(adj, rng.uniform(0.2, 1.0, size=(n, n)), 0.0)
    P /= P.sum(axis=1, keepdims=True)
    return graph, stationary(P), P


def cycle_graph(n: int, w: int = 1) -> WeightedDigraph:
    return WeightedDigraph(n, tuple((i, (i + 1) % n, w) for i in range(n)))


def cycle_chain(n: int) -> np.ndarray:
    return np.roll(np.eye(n), 1, axis=1)


def two_node():
    """Complete two-node graph with self-loops and the all-1/2 chain."""
    graph = WeightedDigraph(2, ((0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)))
    return graph, np.array([0.5, 0.5]), np.full((2, 2), 0.5)


def distinguishable_digraph(a: float = 0.4, b: float = 0.7):
    """Four-node digraph whose first return paths all have distinct lengths.

    Edges ``0->1, 1->0, 1->3, 2->0, 2->3, 3->2``; the chain is parametrized
    by ``a = p(1, 0)`` and ``b = p(2, 3)``.
    """
    graph = WeightedDigraph(4, ((0, 1, 1), (1, 0, 1), (1, 3, 1), (2, 0, 1), (2, 3, 1), (3, 2, 1)))
    P = np.zeros((4, 4))
    P[0, 1] = 1.0
    P[1, 0], P[1, 3] = a, 1 - a
    P[2, 3], P[2, 0] = b, 1 - b
    P[3, 2] = 1.0
    return graph, stationary(P), P


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line verdict of every acceptance criterion after the run."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
