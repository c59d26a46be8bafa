"""Weighted directed communication graphs and Laplacian algebra.

An edge ``(i, j, w)`` means agent ``j`` is an out-neighbor of agent ``i``:
agent ``i`` receives the broadcasts of ``j`` and weights them by ``w``.
Agents are indexed from 0.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

BALANCE_TOL = 1e-9


class GraphError(ValueError):
    """Raised when a graph description is malformed or unusable."""


@dataclass(frozen=True)
class WeightedDigraph:
    n: int
    edges: tuple[tuple[int, int, float], ...]
    # per-agent out-neighbor lists, filled in __post_init__
    out_neighbors: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)
    out_weights: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise GraphError(f"agent count must be a positive integer, got {self.n!r}")
        edges = tuple((int(i), int(j), float(w)) for i, j, w in self.edges)
        seen = set()
        for i, j, w in edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) references an agent outside 0..{self.n - 1}")
            if i == j:
                raise GraphError(f"self-loop on agent {i}")
            if not (w > 0 and np.isfinite(w)):
                raise GraphError(f"edge ({i}, {j}) has non-positive weight {w}")
            if (i, j) in seen:
                raise GraphError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        object.__setattr__(self, "edges", edges)

        nbrs = [[] for _ in range(self.n)]
        wts = [[] for _ in range(self.n)]
        for i, j, w in sorted(edges):
            nbrs[i].append(j)
            wts[i].append(w)
        for i in range(self.n):
            if not nbrs[i]:
                raise GraphError(
                    f"agent {i} has zero out-degree; its minimum inter-event time sigma/d is undefined"
                )
        object.__setattr__(self, "out_neighbors", tuple(np.array(v, dtype=np.int64) for v in nbrs))
        object.__setattr__(self, "out_weights", tuple(np.array(v, dtype=float) for v in wts))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[float]]) -> "WeightedDigraph":
        return cls(n, tuple((e[0], e[1], e[2]) for e in edges))

    @classmethod
    def from_laplacian(cls, lap, tol: float = BALANCE_TOL) -> "WeightedDigraph":
        """Build a graph from an explicit Laplacian.

        Off-diagonal entries must be non-positive and each row must sum to
        zero (within ``tol``); the diagonal is implied by the off-diagonals.
        """
        lap = np.asarray(lap, dtype=float)
        if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
            raise GraphError(f"Laplacian must be square, got shape {lap.shape}")
        n = lap.shape[0]
        edges = []
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if lap[i, j] > 0:
                    raise GraphError(f"Laplacian entry L[{i},{j}] = {lap[i, j]} is positive")
                if lap[i, j] < 0:
                    edges.append((i, j, -lap[i, j]))
        rows = lap.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows) > tol)
        if bad.size:
            i = int(bad[0])
            raise GraphError(f"Laplacian row {i} sums to {rows[i]}, expected 0")
        return cls(n, tuple(edges))

    @cached_property
    def out_degree(self) -> np.ndarray:
        return np.array([w.sum() for w in self.out_weights])

    @property
    def in_degree(self) -> np.ndarray:
        d = np.zeros(self.n)
        for _, j, w in self.edges:
            d[j] += w
        return d

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            a[i, j] = w
        return a

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edges as parallel (source, target, weight) arrays, sorted by source."""
        return self._edge_arrays

    @cached_property
    def _edge_arrays(self):
        src = np.concatenate([np.full(len(nb), i) for i, nb in enumerate(self.out_neighbors)])
        dst = np.concatenate(self.out_neighbors)
        w = np.concatenate(self.out_weights)
        return src.astype(np.int64), dst.astype(np.int64), w

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [[i, j, w] for i, j, w in self.edges]}


def laplacian(g: WeightedDigraph) -> np.ndarray:
    a = g.adjacency()
    return np.diag(a.sum(axis=1)) - a


def is_weight_balanced(g: WeightedDigraph, tol: float = BALANCE_TOL) -> bool:
    return bool(np.all(np.abs(g.in_degree - g.out_degree) <= tol))


def _reaches_all(adj: list[list[int]], start: int) -> bool:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(adj)


def is_strongly_connected(g: WeightedDigraph) -> bool:
    # forward and reverse reachability from agent 0
    fwd = [[] for _ in range(g.n)]
    rev = [[] for _ in range(g.n)]
    for i, j, _ in g.edges:
        fwd[i].append(j)
        rev[j].append(i)
    return _reaches_all(fwd, 0) and _reaches_all(rev, 0)


def apply_laplacian(g: WeightedDigraph, xhat) -> np.ndarray:
    """Return ``L @ xhat`` computed from the edge list."""
    xhat = np.asarray(xhat, dtype=float)
    if xhat.shape != (g.n,):
        raise GraphError(f"expected a vector of length {g.n}, got shape {xhat.shape}")
    src, dst, w = g.edge_arrays()
    return np.bincount(src, weights=w * (xhat[src] - xhat[dst]), minlength=g.n)


def five_agent_digraph() -> WeightedDigraph:
    """Five-agent weight-balanced, strongly connected digraph with degrees (2, 2, 2, 3, 3)."""
    return WeightedDigraph.from_laplacian(
        [
            [2, -1, 0, 0, -1],
            [0, 2, 0, 0, -2],
            [-2, 0, 2, 0, 0],
            [0, -1, -2, 3, 0],
            [0, 0, 0, -3, 3],
        ]
    )


def ring(n: int, weight: float = 1.0, bidirectional: bool = True) -> WeightedDigraph:
    if n == 2:
        return WeightedDigraph(2, ((0, 1, weight), (1, 0, weight)))
    edges = [(i, (i + 1) % n, weight) for i in range(n)]
    if bidirectional:
        edges += [((i + 1) % n, i, weight) for i in range(n)]
    return WeightedDigraph(n, tuple(edges))
