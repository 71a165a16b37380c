"""Scalar functionals of a chain: return time entropies, entropy rate, Kemeny constant.

All entropies are in nats, with ``0 log 0 = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import entr

from .graphs import WeightedDigraph
from .hitting import augmented_spectral_radius, hitting_series, iter_hitting, mean_first_passage


class MetricError(ValueError):
    pass


def duration_for_accuracy(eta: float, pi_min: float, w_max: int) -> int:
    """Horizon ``N`` with ``P(T_ii > N) <= eta`` for every node, by Markov's inequality.

    ``N = ceil(w_max / (eta * pi_min)) - 1``.
    """
    if not 0 < eta < 1:
        raise MetricError("eta must lie in (0, 1)")
    if not 0 < pi_min <= 1:
        raise MetricError("pi_min must lie in (0, 1]")
    if w_max < 1:
        raise MetricError("w_max must be >= 1")
    x = w_max / (eta * pi_min)
    # 1 / (0.1 * 0.25) evaluates to 40.000000000000007
    r = round(x)
    if abs(x - r) <= 1e-9 * x:
        x = r
    return max(int(math.ceil(x)) - 1, 1)


def horizon(pi, graph: WeightedDigraph, eta: float) -> int:
    return duration_for_accuracy(eta, float(np.min(pi)), graph.w_max)


def _truncated_terms(P, graph, pi, eta):
    N = horizon(pi, graph, eta)
    R = hitting_series(P, graph, N).returns()
    return np.asarray(pi, dtype=float), R


def truncated_return_entropy(P, graph: WeightedDigraph, pi, eta: float) -> float:
    pi, R = _truncated_terms(P, graph, pi, eta)
    return float(pi @ entr(R).sum(axis=0))


def conditional_return_entropy(P, graph: WeightedDigraph, pi, eta: float) -> float:
    """Entropy of the return time conditioned on ``T_ii <= N_eta``, averaged with ``pi``."""
    pi, R = _truncated_terms(P, graph, pi, eta)
    mass = R.sum(axis=0)
    if np.any(mass <= 0):
        raise MetricError("a node has no return probability within the horizon; eta is too large")
    return float(pi @ entr(R / mass).sum(axis=0))


def _log_envelope(last: np.ndarray, K: int, lam: float) -> np.ndarray:
    """``log max_k F_k / lam^k`` per column over the rows of ``last`` (ending at step ``K``).

    Columns that are identically zero get ``-inf``.
    """
    ks = np.arange(K - last.shape[0] + 1, K + 1)
    with np.errstate(divide="ignore"):
        logs = np.log(last) - ks[:, None] * math.log(lam)
    return logs.max(axis=0)


def _geometric_tail(logc: float, lam: float, k0: int) -> float:
    """``sum_{k >= k0} -c lam^k log(c lam^k)``, valid once ``c lam^k0 <= 1/e``."""
    logx = logc + k0 * math.log(lam)
    if logx < -700:
        return 0.0
    x = math.exp(logx)
    return -(x / (1 - lam) * logx + lam * x / (1 - lam) ** 2 * math.log(lam))


def return_entropy_estimate(P, graph: WeightedDigraph, pi, tol: float = 1e-9,
                            max_horizon: int = 2_000_000) -> tuple[float, float]:
    """Return time entropy with a per-chain bound on the neglected tail.

    The series is extended until ``F_k(i, i) <= c_i lam^k`` bounds the
    remaining terms below ``tol``. ``lam`` is the spectral radius of the
    augmented system nudged towards one, and ``c_i`` is the largest
    ``F_k(i, i) / lam^k`` seen over the last stretch of the series, which
    spans at least two full cycles of the slowest return pattern.

    Returns
    -------
    estimate, bound : float
        Partial sum of the series and the tail bound certified for it.
    """
    if tol <= 0:
        raise MetricError("tol must be positive")
    pi = np.asarray(pi, dtype=float)
    rho = augmented_spectral_radius(P, graph)
    if rho >= 1:
        raise MetricError(f"augmented spectral radius {rho:.6g} >= 1; the chain is not feasible")
    lam = rho + 1e-3 * (1 - rho)
    n, w = graph.n, graph.w_max
    window = 2 * n * w + 10
    chunk = max(horizon(pi, graph, 0.01), 4 * window)
    R = np.zeros((0, n))
    it = iter_hitting(P, graph)
    while True:
        new = np.array([np.diagonal(next(it)).copy() for _ in range(chunk)])
        R = np.concatenate([R, new])
        K = R.shape[0]
        logc = _log_envelope(R[-window:], K, lam)
        tails = np.zeros(n)
        certified = True
        for i in range(n):
            if logc[i] + (K + 1) * math.log(lam) > -1:
                certified = False
                break
            tails[i] = _geometric_tail(logc[i], lam, K + 1)
        if certified:
            bound = float(pi @ tails)
            if bound <= tol:
                return float(pi @ entr(R).sum(axis=0)), bound
        if K >= max_horizon:
            raise MetricError(f"tail bound still above {tol} after {K} steps")


def tail_bound_at(P, graph: WeightedDigraph, pi, K: int) -> float:
    """Certified bound on ``J - J_trunc`` when the series is cut after ``K`` terms.

    Uses the same per-chain constants as :func:`return_entropy_estimate`;
    returns ``inf`` when the geometric envelope has not yet entered the
    region where ``-x log x`` is increasing.
    """
    pi = np.asarray(pi, dtype=float)
    rho = augmented_spectral_radius(P, graph)
    lam = rho + 1e-3 * (1 - rho)
    n, w = graph.n, graph.w_max
    window = min(2 * n * w + 10, K)
    R = hitting_series(P, graph, K).returns()
    logc = _log_envelope(R[-window:], K, lam)
    total = 0.0
    for i in range(n):
        if logc[i] + (K + 1) * math.log(lam) > -1:
            return math.inf
        total += pi[i] * _geometric_tail(logc[i], lam, K + 1)
    return total


def entropy_rate(P, pi) -> float:
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if np.abs(pi @ P - pi).max() > 1e-6:
        raise MetricError("pi is not stationary for P")
    return float(pi @ entr(P).sum(axis=1))


def expected_return_times(P, graph: WeightedDigraph, pi) -> np.ndarray:
    """``E[T_ii] = pi^T (P o W) 1 / pi_i``."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return float(pi @ (P * graph.weights).sum(axis=1)) / pi


def max_entropy_upper_bound(pi) -> float:
    """Upper bound on the return time entropy for unit travel times.

    Each return time has mean ``1 / pi_i``; the geometric law maximizes the
    entropy at that mean. Only meaningful for unit-weight graphs.
    """
    pi = np.asarray(pi, dtype=float)
    return float((entr(pi) + entr(1 - pi)).sum())


def geometric_entropy(mu: float) -> float:
    """Entropy of the geometric law on ``{1, 2, ...}`` with mean ``mu``."""
    if mu < 1:
        raise MetricError("mean of a positive integer variable must be >= 1")
    return float(-entr(mu) + entr(mu - 1))


KEMENY_CONVENTIONS = ("return", "hitting")


def kemeny_constant(P, graph: WeightedDigraph, pi, convention: str = "return") -> float:
    """Weighted Kemeny constant: mean time to reach a ``pi``-distributed target from ``pi``.

    ``convention="return"`` (default) is ``sum_i pi_i sum_j pi_j E[T_ij]``
    with ``T_ii`` the return time, so the diagonal contributes
    ``sum_i pi_i^2 E[T_ii] = pi^T (P o W) 1``, the mean travel time of one
    step. ``convention="hitting"`` drops the diagonal; with unit travel
    times it equals ``sum_{k >= 2} 1 / (1 - lambda_k)`` and the two differ
    by exactly one.
    """
    if convention not in KEMENY_CONVENTIONS:
        raise MetricError(f"unknown Kemeny convention {convention!r}; choose from {KEMENY_CONVENTIONS}")
    pi = np.asarray(pi, dtype=float)
    M = mean_first_passage(P, graph)
    np.fill_diagonal(M, 0.0)
    K = float(pi @ M @ pi)
    if convention == "return":
        K += float(pi @ (np.asarray(P, dtype=float) * graph.weights * graph.adjacency).sum(axis=1))
    return K


def kemeny_from_eigenvalues(P) -> float:
    """``sum_{k >= 2} 1 / (1 - lambda_k)``: the unit-weight ``"hitting"`` Kemeny constant."""
    lam = np.linalg.eigvals(np.asarray(P, dtype=float))
    lam = np.delete(lam, np.argmin(np.abs(lam - 1)))
    return float(np.real(np.sum(1 / (1 - lam))))


def trajectory_entropy(P, pi, i: int) -> float:
    """Entropy of the random first-return path through state ``i``: ``H_rate / pi_i``."""
    return entropy_rate(P, pi) / float(np.asarray(pi)[i])


def closed_form_return_entropy(kind: str, **params) -> float:
    """Closed-form return time entropy for two special unit-weight chains.

    ``two_node``: parameters ``p11`` and ``p22`` of a chain on the complete
    two-node graph. ``complete_symmetric``: ``n``, ``a`` and ``b`` of
    ``P = (a - b) I + b 1 1^T`` on the complete ``n``-node graph.
    """
    if kind == "two_node":
        p11, p22 = float(params["p11"]), float(params["p22"])
        if not (0 <= p11 <= 1 and 0 <= p22 <= 1) or p11 == p22 == 1:
            raise MetricError("need p11, p22 in [0, 1], not both one")
        p12, p21 = 1 - p11, 1 - p22
        pi1 = p21 / (p12 + p21)
        pi2 = 1 - pi1
        if "pi" in params and np.abs(np.asarray(params["pi"]) - [pi1, pi2]).max() > 1e-9:
            raise MetricError("pi is not stationary for the given chain")
        return float(2 * (pi1 * (entr(p11) + entr(p12)) + pi2 * (entr(p22) + entr(p21))))
    if kind == "complete_symmetric":
        n, a, b = int(params["n"]), float(params["a"]), float(params["b"])
        if n < 2 or a < 0 or b <= 0 or abs(a + (n - 1) * b - 1) > 1e-12:
            raise MetricError("need n >= 2, a >= 0, b > 0 and a + (n - 1) b = 1")
        return float(entr(a) - (n - 1) * b * math.log((n - 1) * b * b) + (n - 1) * entr(1 - b))
    raise MetricError(f"unknown closed form {kind!r}")


@dataclass
class ChainMetrics:
    J: float
    J_trunc: float
    J_cond: float
    H_rate: float
    kemeny: float
    expected_returns: list[float]
    eta: float
    N_eta: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)
