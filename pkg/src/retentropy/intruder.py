"""A rational intruder that times its attack on the patroller's return times.

The intruder sits at node ``i``, watches the walker leave, and attacks once
the walker has been away for ``s_i`` time units. The attack takes ``tau``
units and fails if the walker comes back while it is under way. If the
walker returns before ``s_i``, the intruder starts waiting again. It will
not wait longer than its patience bound ``S_i``, the first time by which
the walker has returned with probability at least ``1 - delta``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .graphs import WeightedDigraph
from .hitting import ReturnTimeDistribution, return_time_distributions
from .metrics import duration_for_accuracy

SURVIVAL_FLOOR = 1e-12
TIE_RTOL = 1e-12


class IntruderError(ValueError):
    pass


@dataclass(frozen=True)
class IntruderParams:
    """Attack duration ``tau`` (time units) and degree of impatience ``delta``."""

    tau: int
    delta: float = 0.1

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise IntruderError("tau must be an integer >= 1")
        if not 0 < self.delta < 1:
            raise IntruderError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class AttackPlan:
    """Per-node patience bound ``S``, attack time ``s`` and capture probability."""

    S: np.ndarray
    s: np.ndarray
    capture: np.ndarray
    tau: int
    delta: float

    def to_json(self) -> str:
        return json.dumps({
            "tau": self.tau,
            "delta": self.delta,
            "nodes": [
                {"node": i, "S": int(S), "s": int(s), "capture": float(c)}
                for i, (S, s, c) in enumerate(zip(self.S, self.s, self.capture))
            ],
        }, indent=2)


@dataclass(frozen=True)
class CaptureReport:
    plan: AttackPlan
    total: float


@dataclass(frozen=True)
class SimulationReport:
    """Empirical capture rate with a 95% normal-approximation interval."""

    estimate: float
    ci_low: float
    ci_high: float
    trials: int
    seed: int

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def patience_bound(dist: ReturnTimeDistribution, delta: float) -> int:
    """Smallest ``S >= 1`` with ``P(T >= S) <= delta``.

    Raises
    ------
    IntruderError
        If the distribution's horizon is too short to find it.
    """
    if not 0 < delta < 1:
        raise IntruderError("delta must lie in (0, 1)")
    if dist.tail_mass > delta:
        raise IntruderError(f"tail mass {dist.tail_mass:.3e} beyond the horizon exceeds delta={delta}")
    # P(T >= S) = P(T > S - 1) = survival[S - 1]
    surv = dist.survival()
    ok = np.flatnonzero(surv <= delta * (1 + TIE_RTOL))
    return int(ok[0]) + 1


def _window_probabilities(surv: np.ndarray, tau: int, S: int) -> tuple[np.ndarray, np.ndarray]:
    """Admissible ``s`` in ``[0, S]`` and ``P(s < T <= s + tau | T > s)`` for each."""
    s = np.arange(S + 1)
    s = s[surv[s] > SURVIVAL_FLOOR]
    return s, (surv[s] - surv[s + tau]) / surv[s]


def _plan_node(dist: ReturnTimeDistribution, tau: int, delta: float) -> tuple[int, int, float]:
    S = patience_bound(dist, delta)
    surv = dist.survival()
    if S + tau >= surv.shape[0]:
        raise IntruderError(f"horizon {dist.K} does not cover S + tau = {S + tau}")
    s, win = _window_probabilities(surv, tau, S)
    if s.size == 0:
        raise IntruderError(f"node {dist.node} returns surely at time 0; no admissible attack time")
    best = win.min()
    k = int(np.flatnonzero(win <= best + TIE_RTOL * max(best, 1e-300))[0])
    return S, int(s[k]), float(min(max(win[k], 0.0), 1.0))


def plan_horizon(pi, graph: WeightedDigraph, params: IntruderParams) -> int:
    """Horizon that covers every patience bound plus one attack duration.

    Markov's inequality gives ``P(T_ii > N_delta) <= delta``, so
    ``S_i <= N_delta + 1``.
    """
    N = duration_for_accuracy(params.delta, float(np.min(pi)), graph.w_max)
    return N + 1 + params.tau + 1


def attack_plan(P, graph: WeightedDigraph, pi, params: IntruderParams,
                dists: list[ReturnTimeDistribution] | None = None) -> AttackPlan:
    """Best attack time of the intruder at every node.

    ``s_i`` minimizes ``P(s < T_ii <= s + tau | T_ii > s)`` over
    ``0 <= s <= S_i`` among times the walker can still be away; ties go to
    the earliest ``s``. ``dists`` may carry precomputed return time
    distributions with a long enough horizon.
    """
    if dists is None:
        dists = return_time_distributions(P, graph, plan_horizon(pi, graph, params))
    rows = [_plan_node(d, params.tau, params.delta) for d in dists]
    S, s, c = (np.array(col) for col in zip(*rows))
    return AttackPlan(S.astype(int), s.astype(int), c.astype(float), params.tau, params.delta)


def capture_probability(P, graph: WeightedDigraph, pi, params: IntruderParams,
                        dists: list[ReturnTimeDistribution] | None = None) -> CaptureReport:
    """``sum_i pi_i capture_i`` for an intruder located according to ``pi``."""
    plan = attack_plan(P, graph, pi, params, dists)
    total = float(np.asarray(pi, dtype=float) @ plan.capture)
    return CaptureReport(plan, min(max(total, 0.0), 1.0))


def capture_curve(P, graph: WeightedDigraph, pi, delta: float, tau_range) -> list[tuple[int, float]]:
    """Total capture probability for each attack duration in ``tau_range``.

    Return time distributions are computed once, to the horizon of the
    longest attack.
    """
    taus = [int(t) for t in tau_range]
    if not taus:
        raise IntruderError("tau_range is empty")
    longest = IntruderParams(max(taus), delta)
    dists = return_time_distributions(P, graph, plan_horizon(pi, graph, longest))
    return [(t, capture_probability(P, graph, pi, IntruderParams(t, delta), dists).total) for t in taus]


def curve_to_csv(curve) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["tau", "total"])
    for tau, total in curve:
        writer.writerow([tau, repr(float(total))])
    return out.getvalue()


def simulate_capture(P, graph: WeightedDigraph, pi, params: IntruderParams, trials: int,
                     seed: int = 0, plan: AttackPlan | None = None) -> SimulationReport:
    """Monte Carlo estimate of the total capture probability.

    Each trial draws the intruder's node from ``pi`` and walks the chain
    from that node, paying the travel time of every edge. A return within
    ``s_i`` restarts the wait; otherwise the attack is caught exactly when
    the walker is back within ``(s_i, s_i + tau]``. Walkers still away after
    ``s_i + tau`` are stopped early. Random numbers come from a Philox
    counter-based generator, so results are reproducible in ``seed``.
    """
    if trials < 1:
        raise IntruderError("trials must be >= 1")
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if plan is None:
        plan = attack_plan(P, graph, pi, params)
    rng = np.random.Generator(np.random.Philox(seed))
    n, tau = graph.n, params.tau
    cum = np.cumsum(P * graph.adjacency, axis=1)
    cum[:, -1] = 1.0
    W = graph.weights

    home = np.minimum(np.searchsorted(np.cumsum(pi), rng.random(trials), side="right"), n - 1)
    wait = plan.s[home]
    pos = home.copy()
    clock = np.zeros(trials, dtype=np.int64)
    caught = np.zeros(trials, dtype=bool)
    active = np.arange(trials)
    while active.size:
        u = rng.random(active.size)
        cur = pos[active]
        nxt = (cum[cur] < u[:, None]).sum(axis=1)
        nxt = np.minimum(nxt, n - 1)
        clock[active] += W[cur, nxt]
        pos[active] = nxt
        t = clock[active]
        s = wait[active]
        back = nxt == home[active]
        renew = back & (t <= s)
        hit = back & (t > s) & (t <= s + tau)
        done = hit | (t > s + tau)
        caught[active[hit]] = True
        clock[active[renew]] = 0
        active = active[~done]

    p = float(caught.mean())
    half = 1.959963984540054 * math.sqrt(p * (1 - p) / trials)
    return SimulationReport(p, max(p - half, 0.0), min(p + half, 1.0), trials, seed)
