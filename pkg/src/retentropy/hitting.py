"""First hitting time distributions of a chain on a graph with travel times.

For a chain ``P`` on a graph with integer travel times ``W``, ``F_k(i, j)``
is the probability that a walk from ``i`` first reaches ``j`` after exactly
``k`` time units. It obeys the delayed linear recursion

    F_k = P o 1{W = k} + sum_d P_d (F_{k-d} - diag(F_{k-d})),

where ``P_d = P o 1{W = d}`` keeps the edges of travel time ``d`` and
``F_k = 0`` for ``k <= 0``. With unit weights this is
``F_k = P (F_{k-1} - diag(F_{k-1}))`` started from ``F_1 = P``.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._spectral import perron_root
from .graphs import WeightedDigraph, is_strongly_connected

TAIL_TOL = 1e-12
AUGMENTED_DENSE_LIMIT = 4096


class HittingError(ValueError):
    pass


def delay_operator(P, graph: WeightedDigraph) -> np.ndarray:
    """Stack ``[P_1, P_2, ..., P_wmax]`` side by side into an ``n x (wmax n)`` array.

    Entries of ``P`` outside the edge set are ignored.
    """
    P = np.asarray(P, dtype=float)
    W = graph.weights
    return np.concatenate([np.where(W == d, P, 0.0) for d in range(1, graph.w_max + 1)], axis=1)


def iter_hitting(P, graph: WeightedDigraph) -> Iterator[np.ndarray]:
    """Yield ``F_1, F_2, ...`` indefinitely.

    Only the last ``w_max`` off-diagonal parts are kept, in a shift buffer.
    """
    P = np.asarray(P, dtype=float)
    n, w = graph.n, graph.w_max
    W = graph.weights
    pcat = delay_operator(P, graph)
    impulses = [np.where(W == d, P, 0.0) for d in range(1, w + 1)]
    buf = np.zeros((w, n, n))
    flat = buf.reshape(w * n, n)
    diag = np.arange(n)
    k = 0
    while True:
        k += 1
        Fk = pcat @ flat
        if k <= w:
            Fk += impulses[k - 1]
        buf[1:] = buf[:-1]
        buf[0] = Fk
        buf[0, diag, diag] = 0.0
        yield Fk


@dataclass(frozen=True)
class HittingSeries:
    """``F[k-1]`` holds ``F_k`` for ``k = 1..K``."""

    F: np.ndarray

    @property
    def K(self) -> int:
        return self.F.shape[0]

    def at(self, k: int) -> np.ndarray:
        if k <= 0:
            return np.zeros(self.F.shape[1:])
        return self.F[k - 1]

    def returns(self) -> np.ndarray:
        """``(K, n)`` array of return probabilities ``F_k(i, i)``."""
        return np.diagonal(self.F, axis1=1, axis2=2)


def hitting_series(P, graph: WeightedDigraph, K: int) -> HittingSeries:
    if K < 1:
        raise HittingError("horizon K must be >= 1")
    n = graph.n
    F = np.empty((K, n, n))
    for k, Fk in enumerate(iter_hitting(P, graph)):
        F[k] = Fk
        if k + 1 == K:
            break
    return HittingSeries(F)


@dataclass(frozen=True)
class ReturnTimeDistribution:
    node: int
    probs: np.ndarray
    tail_mass: float

    def __post_init__(self):
        if self.tail_mass < -TAIL_TOL:
            raise HittingError(f"return probabilities exceed one by {-self.tail_mass:.3e}")

    @property
    def K(self) -> int:
        return self.probs.shape[0]

    def survival(self) -> np.ndarray:
        """``S[s] = P(T > s)`` for ``s = 0..K``, summed from the tail for accuracy."""
        tail = np.concatenate([np.cumsum(self.probs[::-1])[::-1], [0.0]])
        return np.maximum(tail + max(self.tail_mass, 0.0), 0.0)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["k", "prob"])
        for k, p in enumerate(self.probs, start=1):
            writer.writerow([k, repr(float(p))])
        writer.writerow(["tail", repr(float(self.tail_mass))])
        return out.getvalue()


def _distribution(node: int, probs: np.ndarray) -> ReturnTimeDistribution:
    probs = np.array(probs, dtype=float)
    return ReturnTimeDistribution(node, probs, float(1.0 - probs.sum()))


def return_time_distribution(P, graph: WeightedDigraph, i: int, K: int) -> ReturnTimeDistribution:
    if not 0 <= i < graph.n:
        raise HittingError(f"node {i} out of range")
    return _distribution(i, hitting_series(P, graph, K).returns()[:, i])


def return_time_distributions(P, graph: WeightedDigraph, K: int) -> list[ReturnTimeDistribution]:
    R = hitting_series(P, graph, K).returns()
    return [_distribution(i, R[:, i]) for i in range(graph.n)]


def substochastic_spectral_radius(P) -> float:
    """``max_i rho(P E_i)`` where ``E_i`` zeroes column ``i``."""
    P = np.asarray(P, dtype=float)
    rho = 0.0
    for c in range(P.shape[0]):
        B = P.copy()
        B[:, c] = 0.0
        rho = max(rho, perron_root(B))
    return rho


def target_companion(P, graph: WeightedDigraph, c: int) -> sp.csr_matrix:
    """Delay-free companion matrix of the recursion for column ``c`` of ``F_k``.

    State ``[f_{k-1}; ...; f_{k-wmax}]`` with ``f_k = F_k[:, c]``. The full
    augmented matrix acting on ``vec(F)`` is, up to a permutation, the
    direct sum of these ``n`` blocks.
    """
    P = np.asarray(P, dtype=float)
    n, w = graph.n, graph.w_max
    W = graph.weights
    blocks = [[None] * w for _ in range(w)]
    for d in range(1, w + 1):
        Pd = np.where(W == d, P, 0.0)
        Pd[:, c] = 0.0
        blocks[0][d - 1] = sp.csr_matrix(Pd)
    for r in range(1, w):
        blocks[r][r - 1] = sp.identity(n, format="csr")
    if w == 1:
        return sp.csr_matrix(blocks[0][0])
    for r in range(w):
        for s in range(w):
            if blocks[r][s] is None:
                blocks[r][s] = sp.csr_matrix((n, n))
    return sp.bmat(blocks, format="csr")


def augmented_spectral_radius(P, graph: WeightedDigraph) -> float:
    """Spectral radius of the delay-free augmented system, block by block."""
    return max(perron_root(target_companion(P, graph, c)) for c in range(graph.n))


@dataclass(frozen=True)
class AugmentedSystem:
    Psi: np.ndarray
    Phi: list[np.ndarray]


def augmented_system(P, graph: WeightedDigraph) -> AugmentedSystem:
    """Materialize ``Psi`` and ``Phi_1..Phi_wmax`` acting on column-major ``vec(F)``.

    Only intended for small instances (``w_max n^2 <= 4096``).
    """
    P = np.asarray(P, dtype=float)
    n, w = graph.n, graph.w_max
    N = n * n
    if w * N > AUGMENTED_DENSE_LIMIT:
        raise HittingError(f"augmented matrix of size {w * N} is too large to materialize")
    Phi = [np.zeros((N, N)) for _ in range(w)]
    eye = np.eye(n)
    for i, j, wij in graph.edges:
        Ej = eye.copy()
        Ej[j, j] = 0.0
        eij = np.zeros((n, n))
        eij[i, j] = 1.0
        Phi[wij - 1] += P[i, j] * np.kron(Ej, eij)
    Psi = np.zeros((w * N, w * N))
    for h in range(w):
        Psi[:N, h * N:(h + 1) * N] = Phi[h]
    for r in range(1, w):
        Psi[r * N:(r + 1) * N, (r - 1) * N:r * N] = np.eye(N)
    return AugmentedSystem(Psi, Phi)


def mean_first_passage(P, graph: WeightedDigraph) -> np.ndarray:
    """Expected first hitting times ``E[T_ij]`` including travel times.

    Column ``j`` solves ``m = a + P E_j m`` with ``a_i = sum_h p_ih w_ih``.
    Raises :class:`HittingError` for reducible chains.
    """
    P = np.asarray(P, dtype=float) * graph.adjacency
    n = graph.n
    if not is_strongly_connected(P > 0):
        raise HittingError("chain is reducible; some first passage times are infinite")
    a = (P * graph.weights).sum(axis=1)
    M = np.empty((n, n))
    for j in range(n):
        A = np.eye(n) - P
        A[:, j] += P[:, j]
        try:
            M[:, j] = np.linalg.solve(A, a)
        except np.linalg.LinAlgError as exc:
            raise HittingError(f"first passage system for target {j} is singular") from exc
    return M


def oracle_first_passage(P, graph: WeightedDigraph, i: int, j: int, K: int) -> np.ndarray:
    """Brute-force ``P(T_ij = k)`` for ``k = 1..K`` by enumerating walks.

    Every walk from ``i`` that reaches ``j`` only at its end and takes at
    most ``K`` time units is listed explicitly. Exponential cost; limited to
    ``n <= 6`` and ``K <= 12``.
    """
    if graph.n > 6 or K > 12:
        raise HittingError("instance too large for path enumeration (need n <= 6, K <= 12)")
    P = np.asarray(P, dtype=float)
    succ = {u: [(v, w) for uu, v, w in graph.edges if uu == u and P[uu, v] != 0.0] for u in range(graph.n)}
    out = np.zeros(K)
    stack = [(i, 0, 1.0)]
    while stack:
        node, t, prob = stack.pop()
        for v, w in succ[node]:
            t2 = t + w
            if t2 > K:
                continue
            p2 = prob * P[node, v]
            if v == j:
                out[t2 - 1] += p2
            else:
                stack.append((v, t2, p2))
    return out


def oracle_return_distribution(P, graph: WeightedDigraph, i: int, K: int) -> ReturnTimeDistribution:
    return _distribution(i, oracle_first_passage(P, graph, i, i, K))
