"""Projection onto the conforming chain set and projected-gradient optimization."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .graphs import FeasibleSetSpec, validate_chain
from .gradient import truncated_entropy_and_gradient
from .hitting import HittingError
from .metrics import (
    ChainMetrics,
    conditional_return_entropy,
    entropy_rate,
    expected_return_times,
    horizon,
    kemeny_constant,
    return_entropy_estimate,
    truncated_return_entropy,
)

logger = logging.getLogger(__name__)

OBJECTIVES = ("return_entropy", "entropy_rate", "min_kemeny")


class ProjectionError(RuntimeError):
    pass


class OptimizationError(RuntimeError):
    pass


@lru_cache(maxsize=64)
def _affine_projector(spec: FeasibleSetSpec):
    A, b = spec.constraints
    # A has rank 2n - 1, so use the pseudo-inverse of the Gram matrix
    gram_pinv = np.linalg.pinv(A @ A.T, rcond=1e-12)
    return A, b, gram_pinv


def _solve_free(q, free, eps, A, b):
    act = ~free
    Af, As = A[:, free], A[:, act]
    rhs = Af @ q[free] + As @ np.full(act.sum(), eps) - b
    nu = np.linalg.lstsq(Af @ Af.T, rhs, rcond=1e-12)[0]
    x = np.full_like(q, eps)
    x[free] = q[free] - Af.T @ nu
    mu = np.zeros_like(q)
    mu[act] = eps - q[act] + As.T @ nu
    return x, mu


def _polish(q, free, spec, A, b, max_swaps: int = 50):
    """Exact projection by a primal-dual active-set refinement of ``free``.

    Each pass solves the equality-constrained problem with ``x = eps`` off
    ``free``; entries that land below ``eps`` are fixed, fixed entries with
    a negative bound multiplier are released. Returns ``None`` unless the
    final point satisfies every KKT condition of the full problem.
    """
    eps = spec.eps
    scale = max(1.0, np.abs(q).max())
    for _ in range(max_swaps):
        x, mu = _solve_free(q, free, eps, A, b)
        below = free & (x < eps - 1e-13 * scale)
        release = ~free & (mu < -1e-10 * scale)
        if not below.any() and not release.any():
            if np.abs(A @ x - b).max() > 1e-11 * scale:
                return None
            return np.maximum(x, eps)
        free = (free & ~below) | release
    return None


def project_feasible(Q, spec: FeasibleSetSpec, tol: float = 1e-10, max_rounds: int = 20_000,
                     polish_every: int = 10) -> np.ndarray:
    """Euclidean projection of ``Q`` onto the epsilon-conforming chain set.

    Dykstra's alternating projections between the affine set (row sums and
    stationarity, projected in closed form with a cached factorization) and
    the box ``x >= eps`` run over the edge entries; off-edge entries are
    dropped. Every ``polish_every`` rounds the current set of clipped
    entries is taken as a guess of the active set and the equality
    constrained problem is solved exactly; the first guess that passes the
    KKT test is returned. Otherwise the loop stops once successive iterates
    differ by less than ``tol``.

    Raises
    ------
    ProjectionError
        When no feasible point is reached within ``max_rounds``.
    """
    A, b, gram_pinv = _affine_projector(spec)
    q = spec.to_edges(Q)
    if not np.all(np.isfinite(q)):
        raise ProjectionError("input has non-finite entries")
    eps = spec.eps
    scale = max(1.0, np.abs(q).max())

    def affine(z):
        return z - A.T @ (gram_pinv @ (A @ z - b))

    x = q.copy()
    p = np.zeros_like(q)
    r = np.zeros_like(q)
    for it in range(max_rounds):
        y = affine(x + p)
        p = x + p - y
        x_new = np.maximum(y + r, eps)
        r = y + r - x_new
        step = np.abs(x_new - x).max() / scale
        x = x_new
        if it % polish_every == 0 or step < tol:
            exact = _polish(q, x > eps, spec, A, b)
            if exact is not None:
                return spec.to_matrix(exact)
        if step < tol:
            break
    resid = np.abs(A @ x - b).max()
    if resid > 1e-9:
        raise ProjectionError(f"projection did not converge: affine residual {resid:.3e} after {it + 1} rounds")
    return spec.to_matrix(x)


def kkt_residuals(Q, X, spec: FeasibleSetSpec, active_tol: float = 1e-9) -> dict[str, float]:
    """KKT residuals of ``X`` as the projection of ``Q``.

    Equality multipliers are fitted by least squares on the free
    coordinates. When many entries sit at the bound they are not unique, so
    the remaining freedom (the null space of the free columns) is spent by a
    small linear program that makes the bound multipliers as nonnegative as
    possible.
    """
    A, b = spec.constraints
    q, x = spec.to_edges(Q), spec.to_edges(X)
    free = x > spec.eps + active_tol
    act = ~free
    Af, As = A[:, free], A[:, act]
    nu = np.linalg.lstsq(Af.T, q[free] - x[free], rcond=None)[0]
    if act.any():
        null = null_space(Af.T)
        mu0 = x[act] - q[act] + As.T @ nu
        if null.shape[1]:
            # minimize t subject to -(mu0 + As^T N z) <= t, t >= 0
            M = As.T @ null
            k = null.shape[1]
            res = linprog(np.r_[np.zeros(k), 1.0], A_ub=np.c_[-M, -np.ones(len(mu0))], b_ub=mu0,
                          bounds=[(None, None)] * k + [(0, None)], method="highs")
            if res.status == 0:
                nu = nu + null @ res.x[:k]
    mu = x - q + A.T @ nu
    return {
        "stationarity": float(np.abs(mu[free]).max(initial=0.0)),
        "dual_feasibility": float(max(-mu[act].min(initial=0.0), 0.0)),
        "complementary_slackness": float(np.abs(mu * (x - spec.eps)).max()),
        "primal_equality": float(np.abs(A @ x - b).max()),
        "primal_bound": float(max(spec.eps - x.min(), 0.0)),
        "off_pattern": float(np.abs(np.asarray(X)[~spec.graph.adjacency]).max(initial=0.0)),
    }


@dataclass
class OptimizerConfig:
    eta: float = 0.1
    eps: float = 0.0
    max_iters: int = 500
    step0: float = 1.0
    shrink: float = 0.5
    sufficient_increase: float = 1e-4
    tol: float = 1e-7
    window: int = 10
    starts: int = 5
    seed: int = 0
    threads: int = 1
    kemeny_h: float = 1e-6
    gtol: float = 0.0
    noise_floor: float = 1e-13

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.eps < 0 or self.max_iters < 1 or self.starts < 1 or self.step0 <= 0:
            raise ValueError("eps must be >= 0; max_iters, starts and step0 must be positive")
        if self.tol < 0 or self.gtol < 0 or self.noise_floor < 0:
            raise ValueError("tol, gtol and noise_floor must be >= 0")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass
class OptimizeResult:
    chain: np.ndarray
    objective: float
    trace: list[float]
    converged: bool
    start_index: int
    objective_name: str = "return_entropy"
    seed: int = 0
    start_objectives: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        """JSON with the chain stored row-major under ``"n"`` and ``"p"``, like a chain file."""
        return json.dumps({
            "objective_name": self.objective_name,
            "objective": self.objective,
            "n": int(self.chain.shape[0]),
            "p": [float(x) for x in self.chain.ravel()],
            "trace": [float(t) for t in self.trace],
            "converged": self.converged,
            "start_index": self.start_index,
            "start_objectives": [float(t) for t in self.start_objectives],
            "seed": self.seed,
        }, indent=2)


class _Objective:
    """Maximization target: ``value(P)`` and ``value_and_grad(P)``."""

    def __init__(self, name: str, spec: FeasibleSetSpec, config: OptimizerConfig):
        if name not in OBJECTIVES:
            raise ValueError(f"unknown objective {name!r}; choose from {OBJECTIVES}")
        self.name, self.spec, self.config = name, spec, config
        self.sign = -1.0 if name == "min_kemeny" else 1.0

    def value(self, P) -> float:
        spec = self.spec
        try:
            if self.name == "return_entropy":
                f = truncated_return_entropy(P, spec.graph, spec.pi, self.config.eta)
            elif self.name == "entropy_rate":
                f = entropy_rate(P, spec.pi)
            else:
                f = -kemeny_constant(P, spec.graph, spec.pi)
        except (HittingError, np.linalg.LinAlgError):
            return -np.inf
        # a trial point where the objective is undefined is simply rejected
        return f if np.isfinite(f) else -np.inf

    def value_and_grad(self, P):
        f, G = self._value_and_grad(P)
        if not (np.isfinite(f) and np.all(np.isfinite(G))):
            raise FloatingPointError("objective or gradient is not finite")
        return f, G

    def _value_and_grad(self, P):
        spec = self.spec
        if self.name == "return_entropy":
            return truncated_entropy_and_gradient(P, spec.graph, spec.pi, self.config.eta)
        if self.name == "entropy_rate":
            logp = np.log(np.maximum(P, 1e-300))
            G = -spec.pi[:, None] * (1.0 + logp) * spec.graph.adjacency
            return entropy_rate(P, spec.pi), G
        h = self.config.kemeny_h
        G = np.zeros_like(P)
        for a, b, _ in spec.graph.edges:
            hi, lo = min(P[a, b] + h, 1.0), max(P[a, b] - h, 0.0)
            Pp, Pm = P.copy(), P.copy()
            Pp[a, b], Pm[a, b] = hi, lo
            G[a, b] = -(kemeny_constant(Pp, spec.graph, spec.pi)
                        - kemeny_constant(Pm, spec.graph, spec.pi)) / (hi - lo)
        return self.value(P), G


def _run_start(obj: _Objective, P0: np.ndarray, config: OptimizerConfig):
    """Projected gradient ascent from ``P0``.

    Each line search starts from a Barzilai-Borwein step computed from the
    last two iterates (``config.step0`` on the first iteration) and halves
    it until the Armijo condition holds along the projection arc. The
    spectral step matters on flat landscapes: near the uniform chain on a
    complete graph the objective is flat to high order in some directions
    and fixed-scale steps crawl.

    Once a trial value differs from the current one by less than the
    objective's resolution (``config.noise_floor``, relative), function
    values can no longer rank the two points; the step is then accepted if
    the directional derivative at the trial point is still nonnegative,
    i.e. the step has not passed the maximum along the arc.
    """
    spec = obj.spec
    A, _, gram_pinv = _affine_projector(spec)

    def tangent(G):
        # The feasible set lies in an affine subspace, so dropping the normal
        # component changes neither the projected step nor the Armijo term,
        # but it keeps round-off in the projection out of both.
        g = spec.to_edges(G)
        return spec.to_matrix(g - A.T @ (gram_pinv @ (A @ g)))

    P = P0
    f, G = obj.value_and_grad(P)
    G = tangent(G)
    trace = [f]
    alpha = config.step0
    converged = False
    for _ in range(config.max_iters):
        if config.gtol > 0 and np.abs(project_feasible(P + G, spec) - P).max() <= config.gtol:
            converged = True
            break
        noise = config.noise_floor * max(1.0, abs(f))
        a = alpha
        accepted = False
        Gn = None
        for _ in range(80):
            try:
                Pn = project_feasible(P + a * G, spec)
            except ProjectionError:
                # huge trial steps swamp P in round-off; a shorter one will do
                a *= config.shrink
                continue
            fn = obj.value(Pn)
            if fn >= f + config.sufficient_increase * float(np.sum(G * (Pn - P))) and fn >= f:
                accepted = True
                break
            if np.isfinite(fn) and abs(fn - f) <= noise:
                fn, Gn = obj.value_and_grad(Pn)
                Gn = tangent(Gn)
                if float(np.sum(Gn * (Pn - P))) >= 0:
                    accepted = True
                    break
                Gn = None
            a *= config.shrink
        if not accepted:
            converged = True
            break
        if Gn is None:
            fn, Gn = obj.value_and_grad(Pn)
            Gn = tangent(Gn)
        step, dgrad = Pn - P, G - Gn
        sy = float(np.sum(step * dgrad))
        ss = float(np.sum(step * step))
        alpha = ss / sy if sy > 0 and ss > 0 else a / config.shrink
        alpha = min(max(alpha, 1e-10 * config.step0), 1e10 * config.step0)
        P, f, G = Pn, fn, Gn
        trace.append(f)
        w = config.window
        if config.tol > 0 and len(trace) > w and \
                trace[-1] - trace[-1 - w] < config.tol * max(1.0, abs(trace[-1])):
            converged = True
            break
    return P, f, trace, converged


def start_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def optimize_chain(objective: str, spec: FeasibleSetSpec, config: OptimizerConfig | None = None) -> OptimizeResult:
    """Multi-start projected gradient ascent over the conforming chain set.

    ``objective`` is ``"return_entropy"`` (truncated at ``config.eta``),
    ``"entropy_rate"`` or ``"min_kemeny"``. Each start begins at
    :func:`random_feasible_chain` seeded from ``(config.seed, index)``; the
    step is ``project(P + alpha * grad)`` with backtracking on ``alpha``
    until the Armijo condition holds along the projection arc. The best
    start wins, ties going to the lowest index.
    """
    from .graphs import random_feasible_chain

    config = config or OptimizerConfig()
    obj = _Objective(objective, spec, config)

    def run(index):
        P0 = random_feasible_chain(spec, start_seed(config.seed, index))
        try:
            return _run_start(obj, P0, config)
        except (ProjectionError, FloatingPointError, HittingError, np.linalg.LinAlgError) as exc:
            logger.warning("start %d failed: %s", index, exc)
            return None

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            runs = list(pool.map(run, range(config.starts)))
    else:
        runs = [run(i) for i in range(config.starts)]

    best = None
    for index, res in enumerate(runs):
        if res is None:
            continue
        if best is None or res[1] > runs[best][1]:
            best = index
    if best is None:
        raise OptimizationError("every start failed; the feasible set is probably degenerate")
    P, f, trace, converged = runs[best]
    report = validate_chain(P, spec)
    if not report.feasible:
        raise OptimizationError(f"optimizer returned an infeasible chain: {report}")
    sign = obj.sign
    return OptimizeResult(
        chain=P,
        objective=sign * f,
        trace=[sign * t for t in trace],
        converged=converged,
        start_index=best,
        objective_name=objective,
        seed=config.seed,
        start_objectives=[sign * r[1] if r is not None else float("nan") for r in runs],
    )


def evaluate_all(chain, spec: FeasibleSetSpec, eta_eval: float = 0.01, tol: float = 1e-9) -> ChainMetrics:
    g, pi = spec.graph, spec.pi
    J, _ = return_entropy_estimate(chain, g, pi, tol=tol)
    return ChainMetrics(
        J=J,
        J_trunc=truncated_return_entropy(chain, g, pi, eta_eval),
        J_cond=conditional_return_entropy(chain, g, pi, eta_eval),
        H_rate=entropy_rate(chain, pi),
        kemeny=kemeny_constant(chain, g, pi),
        expected_returns=[float(x) for x in expected_return_times(chain, g, pi)],
        eta=eta_eval,
        N_eta=horizon(pi, g, eta_eval),
    )
