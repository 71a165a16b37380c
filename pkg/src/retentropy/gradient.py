"""Gradient of the truncated return time entropy.

Two routes compute the same quantity. The forward route propagates the
sensitivities ``G_k = d vec(F_k) / d vec(P)`` through their own delayed
recursion, one column per edge. The adjoint route runs the hitting
recursion once forward, then a single backward sweep; its cost does not
grow with the number of edges and it is what the optimizer uses.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .graphs import WeightedDigraph
from .hitting import delay_operator
from .metrics import horizon


def _edge_arrays(graph: WeightedDigraph):
    u = np.array([e[0] for e in graph.edges])
    v = np.array([e[1] for e in graph.edges])
    w = np.array([e[2] for e in graph.edges])
    return u, v, w


def _dlogf(x: np.ndarray) -> np.ndarray:
    """Derivative of ``x log x``, set to zero where ``x == 0``."""
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = 1.0 + np.log(x[pos])
    return out


def iter_sensitivities(P, graph: WeightedDigraph) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(F_k, S_k)`` for ``k = 1, 2, ...``.

    ``S_k[:, :, e]`` is the derivative of ``F_k`` with respect to the
    transition probability of edge ``e`` (in ``graph.edges`` order), with
    all entries of ``P`` treated as independent variables.
    """
    P = np.asarray(P, dtype=float)
    n, w, m = graph.n, graph.w_max, graph.m
    u, v, we = _edge_arrays(graph)
    eidx = np.arange(m)
    W = graph.weights
    pcat = delay_operator(P, graph)
    impulses = [np.where(W == d, P, 0.0) for d in range(1, w + 1)]
    fbuf = np.zeros((w, n, n))
    sbuf = np.zeros((w, n, n, m))
    diag = np.arange(n)
    k = 0
    while True:
        k += 1
        Fk = pcat @ fbuf.reshape(w * n, n)
        Sk = (pcat @ sbuf.reshape(w * n, n * m)).reshape(n, n, m)
        if k <= w:
            Fk += impulses[k - 1]
            hit = we == k
            Sk[u[hit], v[hit], eidx[hit]] += 1.0
        # fbuf[d - 1] is F_{k-d} without its diagonal
        Sk[u, :, eidx] += fbuf[we - 1, v, :]
        fbuf[1:] = fbuf[:-1]
        fbuf[0] = Fk
        fbuf[0, diag, diag] = 0.0
        sbuf[1:] = sbuf[:-1]
        sbuf[0] = Sk
        sbuf[0, diag, diag, :] = 0.0
        yield Fk, Sk


@dataclass(frozen=True)
class GradientSeries:
    """Sensitivities ``G_{K-w+1}, ..., G_K`` in compact edge-column form.

    ``values[r]`` holds ``G_{k}`` for ``k = first + r`` as an ``(n, n, m)``
    array; only edge columns are stored because all others stay zero.
    """

    first: int
    values: np.ndarray
    edges: tuple[tuple[int, int, int], ...]

    @property
    def K(self) -> int:
        return self.first + self.values.shape[0] - 1

    def dense(self, k: int) -> np.ndarray:
        """``G_k`` as an ``n^2 x n^2`` matrix on column-major ``vec``."""
        n = self.values.shape[1]
        G = np.zeros((n * n, n * n))
        if k < 1:
            return G
        if not self.first <= k <= self.K:
            raise IndexError(f"G_{k} is outside the stored window [{self.first}, {self.K}]")
        S = self.values[k - self.first]
        rows = (np.arange(n)[:, None] + n * np.arange(n)[None, :]).ravel(order="C")
        for e, (a, b, _) in enumerate(self.edges):
            G[rows, a + n * b] = S[:, :, e].ravel(order="C")
        return G


def gradient_series(P, graph: WeightedDigraph, K: int) -> GradientSeries:
    if K < 1:
        raise ValueError("horizon K must be >= 1")
    w = graph.w_max
    first = max(1, K - w + 1)
    kept = []
    for k, (_, Sk) in enumerate(iter_sensitivities(P, graph), start=1):
        if k >= first:
            kept.append(Sk.copy())
        if k == K:
            break
    return GradientSeries(first, np.array(kept), graph.edges)


def _forward_gradient(P, graph, pi, N):
    pi = np.asarray(pi, dtype=float)
    diag = np.arange(graph.n)
    value = 0.0
    g = np.zeros(graph.m)
    for k, (Fk, Sk) in enumerate(iter_sensitivities(P, graph), start=1):
        f = Fk[diag, diag]
        value += pi @ entr(f)
        g -= (pi * _dlogf(f)) @ Sk[diag, diag, :]
        if k == N:
            break
    return value, g


def _adjoint_gradient(P, graph, pi, N):
    P = np.asarray(P, dtype=float)
    n, w = graph.n, graph.w_max
    u, v, we = _edge_arrays(graph)
    pi = np.asarray(pi, dtype=float)
    W = graph.weights
    pcat = delay_operator(P, graph)
    diag = np.arange(n)

    # D[j + w - 1] = F_j without its diagonal; the first w - 1 slots are the zero history
    D = np.zeros((N + w, n, n))
    R = np.empty((N, n))
    for k in range(1, N + 1):
        lags = D[k - 1:k - 1 + w][::-1]
        Fk = pcat @ lags.reshape(w * n, n)
        if k <= w:
            Fk += np.where(W == k, P, 0.0)
        R[k - 1] = Fk[diag, diag]
        Fk[diag, diag] = 0.0
        D[k + w - 1] = Fk
    value = float(pi @ entr(R).sum(axis=0))

    # A[k] = dJ/dF_k, k = 1..N, padded with w trailing zeros
    qcat = np.concatenate([np.where(W == d, P, 0.0).T for d in range(1, w + 1)], axis=1)
    direct = -(pi[None, :] * _dlogf(R))
    A = np.zeros((N + w + 1, n, n))
    offmask = ~np.eye(n, dtype=bool)
    for k in range(N, 0, -1):
        back = qcat @ A[k + 1:k + w + 1].reshape(w * n, n)
        A[k] = back * offmask
        A[k, diag, diag] += direct[k - 1]

    g = np.zeros(graph.m)
    early = we <= N
    g[early] += A[we[early], u[early], v[early]]
    for d in range(1, w + 1):
        sel = we == d
        if not sel.any() or d >= N:
            continue
        # sum_k A_k D_{k-d}^T over k = d+1..N
        Ak = A[d + 1:N + 1]
        Dk = D[w:N - d + w]
        acat = Ak.transpose(1, 0, 2).reshape(n, -1)
        dcat = Dk.transpose(1, 0, 2).reshape(n, -1)
        Gd = acat @ dcat.T
        g[sel] += Gd[u[sel], v[sel]]
    return value, g


def truncated_entropy_and_gradient(P, graph: WeightedDigraph, pi, eta: float,
                                   method: str = "adjoint") -> tuple[float, np.ndarray]:
    """Value of the truncated return time entropy and its gradient on the edges.

    Returns the value and an ``n x n`` gradient matrix that is zero off the
    edge set. ``method`` is ``"adjoint"`` or ``"forward"``.
    """
    N = horizon(pi, graph, eta)
    if method == "adjoint":
        value, g = _adjoint_gradient(P, graph, pi, N)
    elif method == "forward":
        value, g = _forward_gradient(P, graph, pi, N)
    else:
        raise ValueError(f"unknown gradient method {method!r}")
    u, v, _ = _edge_arrays(graph)
    G = np.zeros((graph.n, graph.n))
    G[u, v] = g
    return value, G


def truncated_entropy_gradient(P, graph: WeightedDigraph, pi, eta: float,
                               method: str = "adjoint") -> np.ndarray:
    return truncated_entropy_and_gradient(P, graph, pi, eta, method)[1]


def finite_difference_gradient(P, graph: WeightedDigraph, pi, eta: float, h: float = 1e-6) -> np.ndarray:
    """Central differences of the truncated entropy, one edge entry at a time.

    Perturbed entries are clamped to ``[0, 1]``; the quotient uses the step
    actually taken.
    """
    from .metrics import truncated_return_entropy

    if not 1e-8 <= h <= 1e-4:
        raise ValueError("step h must lie in [1e-8, 1e-4]")
    P = np.asarray(P, dtype=float)
    G = np.zeros_like(P)
    for a, b, _ in graph.edges:
        hi, lo = min(P[a, b] + h, 1.0), max(P[a, b] - h, 0.0)
        Pp, Pm = P.copy(), P.copy()
        Pp[a, b], Pm[a, b] = hi, lo
        G[a, b] = (truncated_return_entropy(Pp, graph, pi, eta)
                   - truncated_return_entropy(Pm, graph, pi, eta)) / (hi - lo)
    return G
