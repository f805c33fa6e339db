"""
Scores, quantile selection and exact top-k ground truth.

Everything here is centralized and brute force. The distributed solvers
never call into these functions from inside an agent update; they are used
to build instances and to judge the solvers afterwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GapUndefinedError(ValueError):
    """The multiset holds a single distinct value, so the minimum gap is undefined."""


class AmbiguousMinimizerError(ValueError):
    """N*p is an integer and the pinball objective has a flat bottom."""


def as_scores(values) -> np.ndarray:
    """Validate a score multiset and return it as a float array."""
    s = np.asarray(values, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("a score multiset needs at least one value")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


@dataclass(frozen=True)
class LocalDataset:
    """Scores held by one agent. `indices` are positions in the global multiset."""

    agent_id: int
    scores: np.ndarray
    indices: np.ndarray | None = None

    def __post_init__(self):
        s = as_scores(self.scores)
        object.__setattr__(self, "scores", s)
        if self.indices is not None:
            idx = np.asarray(self.indices, dtype=np.int64).ravel()
            if idx.shape != s.shape:
                raise ValueError("indices and scores must have the same length")
            object.__setattr__(self, "indices", idx)
        if self.agent_id < 0:
            raise ValueError("agent_id must be non-negative")

    def __len__(self):
        return self.scores.size


@dataclass(frozen=True)
class QuantileSpec:
    """Admissible (N, k, p) triple for turning top-k into quantile estimation."""

    N: int
    k: int
    p: float

    def __post_init__(self):
        if not 1 <= self.k <= self.N:
            raise ValueError(f"k={self.k} outside [1, {self.N}]")
        lo, hi = (self.N - self.k) / self.N, (self.N - self.k + 1) / self.N
        if not lo < self.p < hi:
            raise ValueError(f"p={self.p} outside ({lo}, {hi})")
        if _is_integer(self.N * self.p):
            raise AmbiguousMinimizerError(f"N*p = {self.N * self.p} is an integer")

    @classmethod
    def for_topk(cls, N: int, k: int) -> "QuantileSpec":
        return cls(N, k, select_p(N, k))


@dataclass(frozen=True)
class TopKGroundTruth:
    theta_k: float
    delta: float
    m: int
    m_bar: int
    m_under: int
    g_m: float
    k: int
    N: int

    @property
    def solution_interval(self) -> tuple[float, float]:
        return (self.theta_k - self.delta / 2, self.theta_k + self.delta / 2)

    @property
    def threshold_interval(self) -> tuple[float, float]:
        return (self.theta_k - self.delta, self.theta_k)

    @property
    def g_r(self) -> float:
        return self.m_bar - 0.5

    @property
    def g_l(self) -> float:
        return -self.m_under - 0.5

    def holders(self, scores) -> np.ndarray:
        """Indices of all scores >= theta_k (ties included)."""
        return np.flatnonzero(as_scores(scores) >= self.theta_k)

    def as_dict(self) -> dict:
        return {
            "theta_k": self.theta_k,
            "Delta": self.delta,
            "m": self.m,
            "m_bar": self.m_bar,
            "m_under": self.m_under,
            "g_m": self.g_m,
        }


def _is_integer(x: float, tol: float = 1e-9) -> bool:
    return abs(x - round(x)) < tol


# -- scoring ------------------------------------------------------------------

def score_linear(a, sigma: float) -> float:
    """Informativeness of a linear observation: ||a||^2 / sigma^2."""
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("observation vector is empty")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return float(a @ a) / sigma**2


def score_quadratic(A, b, P, sigma: float | None = None) -> float:
    """
    Informativeness of a quadratic observation, Tr(A P A^T) + ||b||^2.

    Passing `sigma` divides the result by sigma^2, matching the weighted
    objective the score is derived from. Left as None, the unweighted score
    is returned.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    P = np.atleast_2d(np.asarray(P, dtype=float))
    m = A.shape[0]
    if A.shape != (m, m) or P.shape != (m, m) or b.shape != (m,):
        raise ValueError(f"dimension mismatch: A{A.shape}, b{b.shape}, P{P.shape}")
    if not np.allclose(P, P.T):
        raise ValueError("P must be symmetric")
    s = float(np.trace(A @ P @ A.T) + b @ b)
    if sigma is not None:
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        s /= sigma**2
    return s


def quantize(z, delta: float):
    """
    Round scores to the nearest multiple of `delta`.

    Halfway cases round away from zero. Works on scalars and arrays.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    u = np.asarray(z, dtype=float) / delta
    q = np.sign(u) * np.floor(np.abs(u) + 0.5) * delta
    q = q + 0.0  # no negative zeros
    return float(q) if q.ndim == 0 else q


# -- quantile machinery -------------------------------------------------------

def select_p(N: int, k: int) -> float:
    """Midpoint quantile level (N - k)/N + 1/(2N) for the k-th largest score."""
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside [1, {N}]")
    return (N - k) / N + 1 / (2 * N)


def ground_truth(scores, k: int) -> TopKGroundTruth:
    """Exact k-th largest score, its tie counts and minimum gap, by sorting."""
    s = as_scores(scores)
    N = s.size
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside [1, {N}]")
    desc = np.sort(s)[::-1]
    theta = float(desc[k - 1])
    m_bar = int(np.count_nonzero(desc[:k] == theta))
    m_under = int(np.count_nonzero(desc[k:] == theta))
    others = s[s != theta]
    if others.size == 0:
        raise GapUndefinedError("all scores are equal; the minimum gap is undefined")
    delta = float(np.min(np.abs(others - theta)))
    return TopKGroundTruth(
        theta_k=theta,
        delta=delta,
        m=m_bar + m_under,
        m_bar=m_bar,
        m_under=m_under,
        g_m=min(m_bar - 0.5, m_under + 0.5),
        k=k,
        N=N,
    )


def pinball(x, p: float):
    """Pinball (check) loss: p*x for x >= 0, -(1 - p)*x otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, p * x, (p - 1) * x)
    return float(out) if out.ndim == 0 else out


def aggregate_loss(scores, p: float, x):
    """
    f(x) = sum_i pinball(s_i - x). `x` may be a scalar or an array of
    evaluation points.
    """
    s = as_scores(scores)
    x = np.asarray(x, dtype=float)
    r = s[:, None] - x.reshape(1, -1)
    out = np.where(r >= 0, p * r, (p - 1) * r).sum(axis=0)
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def brute_force_minimizer(scores, p: float) -> float:
    """Minimize the aggregate pinball loss by evaluating it at every distinct score."""
    s = as_scores(scores)
    if _is_integer(s.size * p):
        raise AmbiguousMinimizerError(f"N*p = {s.size * p} is an integer")
    cand = np.unique(s)
    return float(cand[np.argmin(aggregate_loss(s, p, cand))])


def sample_quantile(scores, p: float) -> float:
    """Smallest score x with empirical CDF F(x) >= p."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    s = as_scores(scores)
    vals, counts = np.unique(s, return_counts=True)
    cdf = np.cumsum(counts) / s.size
    return float(vals[np.argmax(cdf >= p)])


def threshold_from_estimate(s_est: float, delta: float) -> float:
    return s_est - delta / 2


def declare_topk(local: LocalDataset, T: float) -> np.ndarray:
    """Per-score flag: does this score beat the threshold?"""
    return local.scores > T


# -- partitions ---------------------------------------------------------------

def one_per_agent(scores) -> list[LocalDataset]:
    s = as_scores(scores)
    return [LocalDataset(i, s[i : i + 1], np.array([i])) for i in range(s.size)]


def round_robin_partition(scores, n: int, rng: np.random.Generator) -> list[LocalDataset]:
    """Shuffle the scores and deal them out round robin; every agent gets at least one."""
    s = as_scores(scores)
    if not 1 <= n <= s.size:
        raise ValueError(f"cannot give each of {n} agents a score from {s.size} scores")
    order = rng.permutation(s.size)
    return [LocalDataset(a, s[order[a::n]], order[a::n]) for a in range(n)]


def partition_from_assignment(scores, assignment) -> list[LocalDataset]:
    """Build local datasets from (agent_id, score_index) pairs."""
    s = as_scores(scores)
    owners: dict[int, list[int]] = {}
    for agent, idx in assignment:
        owners.setdefault(int(agent), []).append(int(idx))
    n = max(owners) + 1
    seen = sorted(i for idxs in owners.values() for i in idxs)
    if seen != list(range(s.size)):
        raise ValueError("assignment must cover every score index exactly once")
    missing = set(range(n)) - owners.keys()
    if missing:
        raise ValueError(f"agents without scores: {sorted(missing)}")
    return [LocalDataset(a, s[owners[a]], owners[a]) for a in range(n)]


# -- text formats -------------------------------------------------------------

def write_scores(path, scores) -> None:
    s = as_scores(scores)
    Path(path).write_text("".join(f"{v!r}\n" for v in s.tolist()))


def read_scores(path) -> np.ndarray:
    lines = Path(path).read_text().split()
    return as_scores([float(t) for t in lines])


def write_partition(path, datasets: list[LocalDataset]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent_id", "score_index"])
        for d in datasets:
            if d.indices is None:
                raise ValueError(f"agent {d.agent_id} has no score indices")
            for idx in d.indices.tolist():
                w.writerow([d.agent_id, idx])


def read_partition(path, scores) -> list[LocalDataset]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]
    return partition_from_assignment(scores, ((int(a), int(i)) for a, i in rows))


def flatten(datasets: list[LocalDataset]) -> np.ndarray:
    return np.concatenate([d.scores for d in datasets])


__all__ = [
    "AmbiguousMinimizerError",
    "GapUndefinedError",
    "LocalDataset",
    "QuantileSpec",
    "TopKGroundTruth",
    "aggregate_loss",
    "as_scores",
    "brute_force_minimizer",
    "declare_topk",
    "flatten",
    "ground_truth",
    "one_per_agent",
    "partition_from_assignment",
    "pinball",
    "quantize",
    "read_partition",
    "read_scores",
    "round_robin_partition",
    "sample_quantile",
    "score_linear",
    "score_quadratic",
    "select_p",
    "threshold_from_estimate",
    "write_partition",
    "write_scores",
]
