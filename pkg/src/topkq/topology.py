"""
Communication graphs and the consensus weight matrix W = I - rho * L.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

# W is kept dense up to this many agents
DENSE_LIMIT = 2048
MAX_RESAMPLES = 1000


class GraphGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on agents 0..n-1."""

    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a graph needs at least one node")
        canon = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside [0, {self.n})")
            canon.append((min(i, j), max(i, j)))
        canon.sort()
        if len(set(canon)) != len(canon):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", tuple(canon))

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def bfs_distances(self, source: int) -> np.ndarray:
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self.adjacency[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def is_connected(self) -> bool:
        return bool(np.all(self.bfs_distances(0) >= 0))

    def diameter(self) -> int:
        if not self.is_connected():
            raise ValueError("diameter of a disconnected graph is infinite")
        return int(max(self.bfs_distances(s).max() for s in range(self.n)))

    def laplacian(self) -> np.ndarray:
        L = np.zeros((self.n, self.n))
        if self.edges:
            e = np.array(self.edges)
            L[e[:, 0], e[:, 1]] = -1.0
            L[e[:, 1], e[:, 0]] = -1.0
        L[np.diag_indices(self.n)] = self.degrees
        return L


def neighbors(g: Graph, i: int) -> set[int]:
    if not 0 <= i < g.n:
        raise IndexError(f"agent {i} outside [0, {g.n})")
    return set(g.adjacency[i])


def _pair_from_index(idx: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # row-major enumeration of the strict upper triangle
    rows = np.arange(n, dtype=np.int64)
    row_start = rows * (2 * n - rows - 1) // 2
    i = np.searchsorted(row_start, idx, side="right") - 1
    j = idx - row_start[i] + i + 1
    return i, j


def gen_erdos_renyi(n: int, m_edges: int, seed: int) -> Graph:
    """
    Uniform random graph with exactly `m_edges` edges, resampled until connected.

    Each retry draws from a fresh generator derived from (seed, attempt), so
    the result depends only on the arguments.
    """
    if n < 2:
        raise ValueError("need at least two agents")
    total = n * (n - 1) // 2
    if m_edges < n - 1:
        raise ValueError(f"{m_edges} edges cannot connect {n} agents")
    if m_edges > total:
        raise ValueError(f"at most {total} edges on {n} agents")
    for attempt in range(MAX_RESAMPLES):
        rng = np.random.default_rng([seed, attempt])
        idx = np.sort(rng.choice(total, size=m_edges, replace=False))
        i, j = _pair_from_index(idx, n)
        g = Graph(n, tuple(zip(i.tolist(), j.tolist())))
        if g.is_connected():
            return g
    raise GraphGenerationError(
        f"no connected sample in {MAX_RESAMPLES} tries (n={n}, edges={m_edges})"
    )


def gen_ring(n: int) -> Graph:
    if n < 3:
        raise ValueError("a ring needs at least three agents")
    return Graph(n, tuple((i, (i + 1) % n) for i in range(n)))


def gen_complete(n: int) -> Graph:
    return Graph(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))


@dataclass(frozen=True)
class MixingTopology:
    graph: Graph
    W: np.ndarray | sp.csr_matrix = field(repr=False)
    rho: float
    sigma2: float
    laplacian_eigenvalues: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def scalars_per_round(self) -> int:
        """One scalar in each direction along every edge."""
        return 2 * self.graph.num_edges

    def mix(self, x: np.ndarray) -> np.ndarray:
        return self.W @ x

    def dense(self) -> np.ndarray:
        return self.W.toarray() if sp.issparse(self.W) else np.asarray(self.W)


def mixing_matrix(g: Graph) -> MixingTopology:
    """
    Build W = I - rho*L with rho = 2 / (lambda_1 + lambda_{n-1}).

    lambda_1 is the largest Laplacian eigenvalue and lambda_{n-1} the
    smallest nonzero one for a connected graph. Since W shares eigenvectors
    with L, its singular values are |1 - rho*lambda_i|.
    """
    if not g.is_connected():
        raise ValueError("mixing matrix needs a connected graph")
    L = g.laplacian()
    lam = np.linalg.eigvalsh(L)[::-1]  # descending
    if g.n == 1:
        # lone agent: nothing to mix with
        W = np.ones((1, 1))
        return MixingTopology(g, W, 1.0, 0.0, lam)
    rho = 2.0 / (lam[0] + lam[g.n - 2])
    sv = np.sort(np.abs(1.0 - rho * lam))[::-1]
    sigma2 = float(sv[1])
    if g.n <= DENSE_LIMIT:
        W = np.eye(g.n) - rho * L
    else:
        W = (sp.identity(g.n, format="csr") - rho * sp.csr_matrix(L)).tocsr()
    return MixingTopology(g, W, float(rho), sigma2, lam)


# -- text format ----------------------------------------------------------------

def write_graph(path, g: Graph) -> None:
    lines = [f"n {g.n}"] + [f"{i} {j}" for i, j in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path) -> Graph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or rows[0][0] != "n" or len(rows[0]) != 2:
        raise ValueError("graph file must start with 'n <count>'")
    n = int(rows[0][1])
    return Graph(n, tuple((int(a), int(b)) for a, b in rows[1:]))
