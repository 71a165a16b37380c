"""Weighted digraphs, stationary distributions and the epsilon-conforming chain set."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, reduce
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Raised for malformed or unsupported graph input."""


PI_SUM_TOL = 1e-12
CHAIN_TOL = 1e-9

# Quantized by-car travel times (minutes) between the twelve San Francisco
# locations A..L; row = origin, column = destination.
SF_TRAVEL_TIMES = (
    (1, 3, 3, 5, 4, 6, 3, 5, 7, 4, 6, 6),
    (3, 1, 5, 4, 2, 4, 4, 5, 5, 3, 5, 5),
    (3, 5, 1, 7, 6, 8, 3, 4, 9, 4, 8, 7),
    (6, 4, 7, 1, 5, 6, 4, 7, 5, 6, 6, 7),
    (4, 3, 6, 5, 1, 3, 5, 5, 6, 3, 4, 4),
    (6, 4, 8, 5, 3, 1, 6, 7, 3, 6, 2, 3),
    (2, 5, 3, 5, 6, 7, 1, 5, 7, 5, 7, 8),
    (3, 5, 2, 7, 6, 7, 3, 1, 9, 3, 7, 5),
    (8, 6, 9, 4, 6, 4, 6, 9, 1, 8, 5, 7),
    (4, 3, 4, 6, 3, 5, 5, 3, 7, 1, 5, 3),
    (6, 4, 8, 6, 4, 2, 6, 6, 4, 5, 1, 3),
    (6, 4, 6, 6, 3, 3, 6, 4, 5, 3, 2, 1),
)
SF_CRIME_COUNTS = (133, 90, 89, 87, 83, 83, 74, 64, 48, 43, 38, 34)


@dataclass(frozen=True)
class WeightedDigraph:
    """Directed graph on nodes ``0..n-1`` with integer travel times.

    ``edges`` is a sorted tuple of ``(u, v, w)`` triples. ``scale`` records the
    common factor removed from the weights at load time (1 when none was).
    """

    n: int
    edges: tuple[tuple[int, int, int], ...]
    scale: int = field(default=1, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        seen = set()
        for u, v, w in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) has a node index outside [0, {self.n})")
            if int(w) != w or w < 1:
                raise GraphError(f"edge ({u}, {v}) has travel time {w}; need an integer >= 1")
            if (u, v) in seen:
                raise GraphError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        object.__setattr__(self, "edges", tuple(sorted((int(u), int(v), int(w)) for u, v, w in self.edges)))
        if not is_strongly_connected(self.adjacency):
            raise GraphError("graph is not strongly connected")

    @classmethod
    def from_weights(cls, W) -> WeightedDigraph:
        W = np.asarray(W)
        us, vs = np.nonzero(W)
        return cls(W.shape[0], tuple((int(u), int(v), int(W[u, v])) for u, v in zip(us, vs)))

    @cached_property
    def weights(self) -> np.ndarray:
        W = np.zeros((self.n, self.n), dtype=np.int64)
        for u, v, w in self.edges:
            W[u, v] = w
        W.setflags(write=False)
        return W

    @cached_property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n), dtype=bool)
        for u, v, _ in self.edges:
            A[u, v] = True
        A.setflags(write=False)
        return A

    @property
    def w_max(self) -> int:
        return max(w for _, _, w in self.edges)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def unit_weights(self) -> bool:
        return self.w_max == 1

    def out_degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


def is_strongly_connected(adjacency) -> bool:
    A = csr_matrix(np.asarray(adjacency, dtype=float))
    ncomp, _ = connected_components(A, directed=True, connection="strong")
    return ncomp == 1


def check_distribution(pi, n: int | None = None) -> np.ndarray:
    """Validate a stationary distribution and renormalize it exactly."""
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or (n is not None and pi.shape[0] != n):
        raise GraphError(f"pi must be a vector of length {n}")
    if not np.all(np.isfinite(pi)) or np.any(pi <= 0):
        raise GraphError("pi entries must be positive")
    if abs(pi.sum() - 1.0) > PI_SUM_TOL:
        raise GraphError(f"pi sums to {pi.sum():.15g}, not 1")
    return pi / pi.sum()


@dataclass(frozen=True, eq=False)
class FeasibleSetSpec:
    """The set of chains on ``graph`` with stationary ``pi`` and edge entries >= ``eps``."""

    graph: WeightedDigraph
    pi: np.ndarray
    eps: float = 0.0

    def __post_init__(self):
        pi = check_distribution(self.pi, self.graph.n)
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        if self.eps < 0:
            raise GraphError("eps must be nonnegative")
        if self.eps * self.graph.out_degree().max() > 1 + 1e-15:
            raise GraphError("eps times the maximum out-degree exceeds 1; the feasible set is empty")

    @cached_property
    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column index arrays of the edges, in ``graph.edges`` order."""
        rows = np.array([u for u, _, _ in self.graph.edges])
        cols = np.array([v for _, v, _ in self.graph.edges])
        return rows, cols

    @cached_property
    def constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """Equality system ``A x = b`` over edge variables.

        The first ``n`` rows are row sums, the next ``n`` are stationarity
        (``pi^T P = pi^T``). The system is rank deficient by one.
        """
        n, m = self.graph.n, self.graph.m
        rows, cols = self.edge_index
        A = np.zeros((2 * n, m))
        A[rows, np.arange(m)] = 1.0
        A[n + cols, np.arange(m)] = self.pi[rows]
        b = np.concatenate([np.ones(n), self.pi])
        return A, b

    def to_edges(self, P) -> np.ndarray:
        rows, cols = self.edge_index
        return np.asarray(P, dtype=float)[rows, cols]

    def to_matrix(self, x) -> np.ndarray:
        rows, cols = self.edge_index
        P = np.zeros((self.graph.n, self.graph.n))
        P[rows, cols] = x
        return P


def build_graph(kind: str, **params) -> tuple[WeightedDigraph, np.ndarray]:
    """Construct one of the reference graphs together with its visit distribution.

    Parameters
    ----------
    kind : {"ring", "grid", "complete", "sf_crime_map"}
    **params
        ``n`` for ring (default 8) and complete (default 4); ``rows`` and
        ``cols`` for grid (default 4 x 4). The SF map takes no parameters.

    Notes
    -----
    Ring and grid graphs are bidirected with unit travel times and carry a
    self-loop at every node. The 8-node ring uses the alternating
    distribution ``[1/12, 1/6, ...]``, other rings are uniform; the grid
    distribution is proportional to the node degree with the self-loop
    counted (3, 4 or 5 on a grid with at least three rows and columns).
    """
    if kind == "ring":
        n = int(params.get("n", 8))
        if n < 3:
            raise GraphError("ring needs n >= 3")
        edges = [(i, i, 1) for i in range(n)]
        edges += [(i, (i + 1) % n, 1) for i in range(n)] + [((i + 1) % n, i, 1) for i in range(n)]
        if n == 8:
            pi = np.array([1 / 12, 1 / 6] * 4)
        else:
            pi = np.full(n, 1 / n)
        return WeightedDigraph(n, tuple(edges)), pi
    if kind == "grid":
        rows, cols = int(params.get("rows", 4)), int(params.get("cols", 4))
        if rows < 2 or cols < 2:
            raise GraphError("grid needs rows, cols >= 2")
        n = rows * cols
        edges = [(i, i, 1) for i in range(n)]
        deg = np.ones(n)
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols:
                        edges.append((i, rr * cols + cc, 1))
                        deg[i] += 1
        return WeightedDigraph(n, tuple(edges)), deg / deg.sum()
    if kind == "complete":
        n = int(params.get("n", 4))
        if n < 2:
            raise GraphError("complete graph needs n >= 2")
        edges = tuple((i, j, 1) for i in range(n) for j in range(n))
        return WeightedDigraph(n, edges), np.full(n, 1 / n)
    if kind == "sf_crime_map":
        graph = WeightedDigraph.from_weights(np.array(SF_TRAVEL_TIMES))
        counts = np.array(SF_CRIME_COUNTS, dtype=float)
        return graph, counts / counts.sum()
    raise GraphError(f"unknown graph kind {kind!r}")


def graph_to_json(graph: WeightedDigraph, pi) -> dict:
    return {
        "n": graph.n,
        "edges": [{"u": u, "v": v, "w": w} for u, v, w in graph.edges],
        "pi": [float(x) for x in pi],
    }


def load_graph(path) -> tuple[WeightedDigraph, np.ndarray]:
    """Read a graph file and normalize the travel times by their gcd.

    A ``UserWarning`` is emitted when the weights shared a common factor;
    the removed factor is kept in ``graph.scale``.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        n = int(data["n"])
        raw = [(int(e["u"]), int(e["v"]), e["w"]) for e in data["edges"]]
        pi = data["pi"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise GraphError(f"cannot parse graph file {path}: {exc}") from exc
    for u, v, w in raw:
        if not isinstance(w, int) or isinstance(w, bool) or w < 1:
            raise GraphError(f"edge ({u}, {v}) has travel time {w!r}; need an integer >= 1")
    if not raw:
        raise GraphError("graph has no edges")
    g = reduce(math.gcd, (w for _, _, w in raw))
    if g > 1:
        warnings.warn(f"travel times share the factor {g}; dividing it out", UserWarning, stacklevel=2)
        raw = [(u, v, w // g) for u, v, w in raw]
    graph = WeightedDigraph(n, tuple(raw), scale=g)
    return graph, check_distribution(pi, n)


def save_graph(path, graph: WeightedDigraph, pi) -> None:
    Path(path).write_text(json.dumps(graph_to_json(graph, pi), indent=2) + "\n", encoding="utf-8")


def chain_to_json(P) -> dict:
    P = np.asarray(P, dtype=float)
    return {"n": int(P.shape[0]), "p": [float(x) for x in P.ravel()]}


def load_chain(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        n = int(data["n"])
        P = np.array(data["p"], dtype=float).reshape(n, n)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise GraphError(f"cannot parse chain file {path}: {exc}") from exc
    return P


def save_chain(path, P) -> None:
    Path(path).write_text(json.dumps(chain_to_json(P)) + "\n", encoding="utf-8")


@dataclass
class ValidationReport:
    """Worst-case residual per violated constraint family; empty means feasible."""

    violations: dict[str, float] = field(default_factory=dict)
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __str__(self) -> str:
        if self.feasible:
            return "feasible"
        return "; ".join(f"{k}: worst residual {v:.3e}" for k, v in self.violations.items())


def validate_chain(P, spec: FeasibleSetSpec, tol: float = CHAIN_TOL) -> ValidationReport:
    P = np.asarray(P, dtype=float)
    n = spec.graph.n
    if P.shape != (n, n):
        raise GraphError(f"chain has shape {P.shape}, expected {(n, n)}")
    A = spec.graph.adjacency
    res = {
        "pattern": float(np.abs(P[~A]).max(initial=0.0)),
        "range": float(max(-P.min(), P.max() - 1.0, 0.0)),
        "row_sums": float(np.abs(P.sum(axis=1) - 1.0).max()),
        "stationarity": float(np.abs(spec.pi @ P - spec.pi).max()),
        "eps_lower_bound": float(max((spec.eps - P[A]).max(), 0.0)),
    }
    report = ValidationReport(residuals=res)
    for name, r in res.items():
        if not np.isfinite(r) or r > tol:
            report.violations[name] = r
    return report


def random_feasible_chain(spec: FeasibleSetSpec, seed: int) -> np.ndarray:
    """Project a random matrix on the graph pattern onto the feasible set.

    Edge entries are drawn uniformly from [1, 2) and rows normalized before
    projecting, which keeps the start away from the boundary.
    """
    from .optimize import project_feasible

    rng = np.random.default_rng(seed)
    Q = (1.0 + rng.uniform(size=(spec.graph.n, spec.graph.n))) * spec.graph.adjacency
    Q /= Q.sum(axis=1, keepdims=True)
    return project_feasible(Q, spec)
