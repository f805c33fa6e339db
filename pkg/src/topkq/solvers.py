"""
Decentralized quantile solvers.

* EXTRA primal-dual iteration on smoothed local objectives.
* DGD: consensus averaging plus a pinball subgradient step.
* STop-k: flooding of bounded top-k lists until no list changes.

Iterations run as synchronous rounds over a `MixingTopology`. The ground
truth, when supplied, is used only for stopping and for the recorded error
statistics; it never enters an agent update.
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .scoremodel import LocalDataset, TopKGroundTruth
from .topology import MixingTopology


class DivergenceError(FloatingPointError):
    """An iterate became non-finite or left the divergence guard box."""


class BracketingError(RuntimeError):
    pass


class StopRule(enum.Enum):
    ORACLE_INTERVAL = "oracle_interval"
    FIXED_BUDGET = "fixed_budget"
    CERTIFIED_BUDGET = "certified_budget"


# -- problem data -------------------------------------------------------------------

@dataclass(frozen=True)
class _Problem:
    """Flattened view of the local datasets: scores[j] is held by agent owner[j]."""

    scores: np.ndarray
    owner: np.ndarray
    n: int
    one_each: bool
    counts: np.ndarray

    @classmethod
    def build(cls, datasets: list[LocalDataset], n: int) -> "_Problem":
        if len(datasets) != n:
            raise ValueError(f"{len(datasets)} datasets for {n} agents")
        ids = sorted(d.agent_id for d in datasets)
        if ids != list(range(n)):
            raise ValueError("datasets must cover agent ids 0..n-1 exactly once")
        ordered = sorted(datasets, key=lambda d: d.agent_id)
        scores = np.concatenate([d.scores for d in ordered])
        counts = np.array([len(d) for d in ordered], dtype=np.int64)
        owner = np.repeat(np.arange(n), counts)
        return cls(scores, owner, n, bool(np.all(counts == 1)), counts)

    @property
    def N(self) -> int:
        return self.scores.size

    def initial_point(self) -> np.ndarray:
        first = np.concatenate(([0], np.cumsum(self.counts)[:-1]))
        return self.scores[first].copy()

    def smoothed_gradient(self, smoother, w: np.ndarray) -> np.ndarray:
        if self.one_each:
            return -np.asarray(smoother.dloss(self.scores - w))
        per_score = -np.asarray(smoother.dloss(self.scores - w[self.owner]))
        return np.bincount(self.owner, weights=per_score, minlength=self.n)

    def subgradient(self, p: float, w: np.ndarray) -> np.ndarray:
        x = w if self.one_each else w[self.owner]
        per_score = np.where(self.scores > x, -p, np.where(self.scores < x, 1 - p, 0.5 - p))
        if self.one_each:
            return per_score
        return np.bincount(self.owner, weights=per_score, minlength=self.n)

    def smoothed_objective(self, smoother, x: float) -> float:
        return float(np.sum(smoother.loss(self.scores - x)))


# -- configuration ---------------------------------------------------------------

def extra_default_steps(M_h: float, n: int, sigma2: float) -> tuple[float, float]:
    """Step sizes (alpha, beta) for which the running-average convergence bounds hold."""
    if not 0 <= sigma2 < 1:
        raise ValueError(f"sigma2={sigma2} must lie in [0, 1)")
    if M_h <= 0 or n < 1:
        raise ValueError("M_h and n must be positive")
    beta = M_h / (n * math.sqrt(1 - sigma2))
    alpha = 1 / (2 * (M_h / n + beta))
    return alpha, beta


def agent_smoothness(smoother, datasets: list[LocalDataset]) -> float:
    """Largest per-agent gradient-Lipschitz constant, n_i times the per-score curvature."""
    return max(len(d) for d in datasets) * smoother.curvature


@dataclass(frozen=True)
class ExtraConfig:
    alpha: float
    beta: float
    max_iters: int = 100_000
    stop_rule: StopRule = StopRule.ORACLE_INTERVAL
    use_running_average: bool = True
    time_limit: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    @classmethod
    def certified(cls, topology: MixingTopology, smoother, datasets, **kw) -> "ExtraConfig":
        """Step sizes under which the error bounds and the certified budget hold."""
        N = sum(len(d) for d in datasets)
        M_h = smoother.constants(N).M_h
        alpha, beta = extra_default_steps(M_h, topology.n, topology.sigma2)
        return cls(alpha, beta, **kw)

    @classmethod
    def manual(cls, smoother, datasets, **kw) -> "ExtraConfig":
        """
        alpha = 1/(2 L), beta = 2 L with L the largest agent smoothness.

        For the unit box kernel with one score per agent this is alpha = h,
        beta = 1/h.
        """
        L = agent_smoothness(smoother, datasets)
        return cls(1 / (2 * L), 2 * L, **kw)


@dataclass
class SolverState:
    w: np.ndarray
    v: np.ndarray
    w_sum: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, w0: np.ndarray) -> "SolverState":
        w0 = np.asarray(w0, dtype=float).copy()
        return cls(w0, np.zeros_like(w0), np.zeros_like(w0), 0)

    @property
    def w_bar(self) -> np.ndarray:
        if self.t == 0:
            raise ValueError("running average is undefined before the first iteration")
        return self.w_sum / self.t


# -- trajectory ----------------------------------------------------------------------

@dataclass
class Trajectory:
    """
    Per-iteration records, index t-1 holding iteration t.

    `sup_err` is the raw ||w^t - theta 1||_inf and `avg_sup_err` the same
    for the running averages. `fn_err` is the smoothed objective gap at the
    network mean of the running averages and `consensus` the mean squared
    deviation of the running averages from that mean.
    """

    method: str
    scalars_per_round: int
    sup_err: list[float] = field(default_factory=list)
    avg_sup_err: list[float] = field(default_factory=list)
    fn_err: list[float] = field(default_factory=list)
    consensus: list[float] = field(default_factory=list)
    converged: bool = False
    iterations_to_interval: int | None = None
    stopped_by: str = ""
    final_w: np.ndarray | None = None
    final_w_bar: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.consensus)

    @property
    def tx_scalars(self) -> np.ndarray:
        return np.full(self.iterations, self.scalars_per_round, dtype=np.int64)

    def best_sup_err(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.sup_err, dtype=float))

    def estimate(self, use_running_average: bool = True) -> np.ndarray:
        return self.final_w_bar if use_running_average else self.final_w

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["iter", "sup_err", "fn_err", "consensus", "tx_scalars"])
            sup = self.sup_err or [math.nan] * self.iterations
            for t in range(self.iterations):
                out.writerow(
                    [t + 1, repr(sup[t]), repr(self.fn_err[t]), repr(self.consensus[t]),
                     self.scalars_per_round]
                )


def comm_cost(result) -> int:
    """Scalars transmitted in total by a finished run."""
    if isinstance(result, StopkResult):
        return result.scalars_transmitted
    if isinstance(result, Trajectory):
        return result.iterations * result.scalars_per_round
    raise TypeError(f"no communication cost for {type(result).__name__}")


# -- oracle utilities ------------------------------------------------------------------

def smoothed_minimizer(smoother, scores, tol: float = 1e-12) -> float:
    """Root of the aggregate smoothed gradient, found by bisection."""
    if isinstance(scores, (list, tuple)) and scores and isinstance(scores[0], LocalDataset):
        s = np.concatenate([d.scores for d in scores])
    else:
        s = np.asarray(getattr(scores, "scores", scores), dtype=float).ravel()

    def grad(x):
        return float(-np.sum(smoother.dloss(s - x)))

    lo = float(s.min()) - smoother.support
    hi = float(s.max()) + smoother.support
    g_lo, g_hi = grad(lo), grad(hi)
    if not (g_lo < 0 < g_hi):
        raise BracketingError(f"gradient does not change sign on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if grad(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BudgetInputs:
    g_m: float
    delta: float
    sigma2: float
    M_h: float
    L_h: float
    n: int
    R_1: float
    R_2: float

    @classmethod
    def build(cls, topology, smoother, datasets, truth: TopKGroundTruth, *,
              delta: float | None = None, w0=None, oracle: bool = True):
        """
        Collect the budget inputs. With `oracle` the radius R_1 uses the exact
        smoothed minimizer; otherwise a bound from the score range.
        """
        prob = _Problem.build(datasets, topology.n)
        const = smoother.constants(prob.N)
        w0 = prob.initial_point() if w0 is None else np.asarray(w0, dtype=float)
        if oracle:
            th = smoothed_minimizer(smoother, prob.scores)
            R_1 = max(float(np.max((w0 - th) ** 2)), th * th)
        else:
            R_1 = (abs(prob.scores.max()) + abs(prob.scores.min()) + smoother.support) ** 2
        p = smoother.p
        return cls(
            g_m=truth.g_m,
            delta=truth.delta if delta is None else delta,
            sigma2=topology.sigma2,
            M_h=const.M_h,
            L_h=const.L_h,
            n=topology.n,
            R_1=R_1,
            R_2=max(p * p, (1 - p) ** 2),
        )


def _gap_root(sigma2: float) -> float:
    if not 0 <= sigma2 < 1:
        raise ValueError(f"sigma2={sigma2} must lie in [0, 1)")
    return math.sqrt(1 - sigma2)


def certified_budget(b: BudgetInputs) -> int:
    """Iterations after which every running average is certified inside the solution interval."""
    root = _gap_root(b.sigma2)
    a = 272 * (b.R_1 * b.M_h + b.R_2 * b.n**2 / b.M_h)
    c = 32 * b.L_h * math.sqrt(b.n) * (math.sqrt(b.R_1) + math.sqrt(b.R_2) * b.n / b.M_h)
    T = math.ceil(max(a, c) / (b.g_m * b.delta * root))
    return max(T, math.ceil(1 / root))


def bound_min_T(sigma2: float) -> int:
    return math.ceil(1 / _gap_root(sigma2))


def error_bounds(T: int, b: BudgetInputs) -> tuple[float, float]:
    """(function-error bound, consensus bound) after T iterations."""
    root = _gap_root(b.sigma2)
    if T < 1 / root:
        raise ValueError(f"T={T} is below the validity threshold {1 / root:.6g}")
    fn = 34 * (b.R_1 * b.M_h + b.R_2 * b.n**2 / b.M_h) / (T * root)
    cons = 16 * (b.R_1 + b.R_2 * b.n**2 / b.M_h**2) / (T**2 * (1 - b.sigma2))
    return fn, cons


# -- EXTRA ------------------------------------------------------------------------------------

def _guard(w: np.ndarray, bound: float) -> None:
    if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > bound:
        raise DivergenceError("iterate diverged")


def _guard_bound(scores: np.ndarray) -> float:
    return 1e6 * max(float(np.ptp(scores)), 1.0)


def _extra_update(state, topology, smoother, prob, alpha, beta, Ww):
    grad = prob.smoothed_gradient(smoother, state.w)
    w = state.w - alpha * (grad + state.v + 0.5 * beta * (state.w - Ww))
    Ww_next = topology.mix(w)
    v = state.v + 0.5 * beta * (w - Ww_next)
    return SolverState(w, v, state.w_sum + w, state.t + 1), Ww_next


def extra_step(state: SolverState, topology: MixingTopology, smoother,
               datasets: list[LocalDataset], alpha: float, beta: float) -> SolverState:
    """One synchronous round: primal pass for every agent, then the dual pass."""
    prob = _Problem.build(datasets, topology.n)
    if state.w.shape != (topology.n,):
        raise ValueError("state does not match the number of agents")
    new, _ = _extra_update(state, topology, smoother, prob, alpha, beta, topology.mix(state.w))
    _guard(new.w, _guard_bound(prob.scores))
    return new


class _Recorder:
    """Shared per-iteration bookkeeping for EXTRA and DGD."""

    def __init__(self, traj, prob, smoother, truth, delta, use_avg, theta_h):
        self.traj = traj
        self.prob = prob
        self.smoother = smoother
        self.theta = None if truth is None else truth.theta_k
        self.radius = None if delta is None else delta / 2
        self.use_avg = use_avg
        self.theta_h = theta_h
        self.f_star = None if theta_h is None else prob.smoothed_objective(smoother, theta_h)

    def record(self, w: np.ndarray, w_sum: np.ndarray, t: int) -> bool:
        """Log iteration t and report whether the oracle stopping test passed."""
        traj = self.traj
        w_bar = w_sum / t
        mean = float(np.mean(w_bar))
        traj.consensus.append(float(np.mean((w_bar - mean) ** 2)))
        if self.f_star is not None:
            traj.fn_err.append(self.prob.smoothed_objective(self.smoother, mean) - self.f_star)
        else:
            traj.fn_err.append(math.nan)
        if self.theta is None:
            return False
        raw = float(np.max(np.abs(w - self.theta)))
        avg = float(np.max(np.abs(w_bar - self.theta)))
        traj.sup_err.append(raw)
        traj.avg_sup_err.append(avg)
        stat = avg if self.use_avg else raw
        if stat < self.radius and traj.iterations_to_interval is None:
            traj.iterations_to_interval = t
            return True
        return False


def _iteration_cap(config, budget_inputs) -> int:
    if config.stop_rule is StopRule.CERTIFIED_BUDGET:
        if budget_inputs is None:
            raise ValueError("the certified budget rule needs budget inputs")
        return certified_budget(budget_inputs)
    return config.max_iters


def extra_run(topology: MixingTopology, smoother, datasets: list[LocalDataset],
              config: ExtraConfig, truth: TopKGroundTruth | None = None, *,
              delta: float | None = None, w0=None,
              budget_inputs: BudgetInputs | None = None,
              record_function_error: bool = True) -> Trajectory:
    """
    Iterate EXTRA until the configured stop rule fires.

    Parameters
    ----------
    topology, smoother, datasets
        Network, smoothed loss and the agents' local scores.
    config
        Step sizes and stopping behaviour.
    truth
        Ground truth used for the interval test and error records. Required
        by the oracle-interval rule.
    delta
        Solution-interval width; defaults to ``truth.delta``. Any positive
        value not exceeding the true minimum gap keeps the interval valid.
    w0
        Initial primal iterate; defaults to each agent's first score.
    budget_inputs
        Needed by the certified-budget rule.

    Returns
    -------
    Trajectory
    """
    prob = _Problem.build(datasets, topology.n)
    if config.stop_rule is StopRule.ORACLE_INTERVAL and truth is None:
        raise ValueError("the oracle interval rule needs the ground truth")
    if truth is not None and delta is None:
        delta = truth.delta
    cap = _iteration_cap(config, budget_inputs)
    theta_h = smoothed_minimizer(smoother, prob.scores) if record_function_error else None
    traj = Trajectory("extra", topology.scalars_per_round)
    rec = _Recorder(traj, prob, smoother, truth, delta, config.use_running_average, theta_h)
    bound = _guard_bound(prob.scores)

    state = SolverState.initial(prob.initial_point() if w0 is None else w0)
    Ww = topology.mix(state.w)
    start = time.perf_counter()
    traj.stopped_by = "budget"
    while state.t < cap:
        state, Ww = _extra_update(state, topology, smoother, prob, config.alpha, config.beta, Ww)
        _guard(state.w, bound)
        hit = rec.record(state.w, state.w_sum, state.t)
        if hit and config.stop_rule is StopRule.ORACLE_INTERVAL:
            traj.stopped_by = "interval"
            break
        if config.time_limit is not None and time.perf_counter() - start > config.time_limit:
            traj.stopped_by = "time_limit"
            break
    traj.wall_time = time.perf_counter() - start
    traj.converged = traj.iterations_to_interval is not None
    traj.final_w = state.w
    traj.final_w_bar = state.w_bar if state.t else state.w.copy()
    return traj


# -- DGD --------------------------------------------------------------------------------------

def dgd_run(topology: MixingTopology, datasets: list[LocalDataset], p: float,
            step_size: float, truth: TopKGroundTruth | None = None, *,
            max_iters: int = 100_000, stop_rule: StopRule = StopRule.ORACLE_INTERVAL,
            use_running_average: bool = True, delta: float | None = None,
            time_limit: float | None = None, w0=None) -> Trajectory:
    """Consensus step followed by a constant-size pinball subgradient step."""
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if stop_rule is StopRule.CERTIFIED_BUDGET:
        raise ValueError("the certified budget applies to EXTRA only")
    if stop_rule is StopRule.ORACLE_INTERVAL and truth is None:
        raise ValueError("the oracle interval rule needs the ground truth")
    prob = _Problem.build(datasets, topology.n)
    if truth is not None and delta is None:
        delta = truth.delta
    traj = Trajectory("dgd", topology.scalars_per_round)
    # fn_err is left undefined: DGD minimizes the nonsmooth loss
    rec = _Recorder(traj, prob, None, truth, delta, use_running_average, None)
    bound = _guard_bound(prob.scores)

    w = prob.initial_point() if w0 is None else np.asarray(w0, dtype=float).copy()
    w_sum = np.zeros_like(w)
    start = time.perf_counter()
    traj.stopped_by = "budget"
    t = 0
    while t < max_iters:
        w = topology.mix(w) - step_size * prob.subgradient(p, w)
        t += 1
        _guard(w, bound)
        w_sum += w
        hit = rec.record(w, w_sum, t)
        if hit and stop_rule is StopRule.ORACLE_INTERVAL:
            traj.stopped_by = "interval"
            break
        if time_limit is not None and time.perf_counter() - start > time_limit:
            traj.stopped_by = "time_limit"
            break
    traj.wall_time = time.perf_counter() - start
    traj.converged = traj.iterations_to_interval is not None
    traj.final_w = w
    traj.final_w_bar = w_sum / t if t else w.copy()
    return traj


# -- STop-k -------------------------------------------------------------------------------------

@dataclass
class StopkResult:
    """
    Final per-agent lists (global score indices, best first), the number of
    rounds including the final quiescent one, and the scalar count.

    With `bottom` set, lists hold the N - k smallest scores instead.
    """

    lists: list[np.ndarray]
    rounds: int
    scalars_transmitted: int
    bottom: bool
    k: int
    per_round: list[int] = field(default_factory=list)

    def values(self, scores: np.ndarray, agent: int) -> np.ndarray:
        return np.asarray(scores)[self.lists[agent]]


def stopk_run(topology: MixingTopology, datasets: list[LocalDataset], k: int,
              max_rounds: int | None = None) -> StopkResult:
    """Flood and merge bounded score lists until a round changes nothing."""
    prob = _Problem.build(datasets, topology.n)
    N = prob.N
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside [1, {N}]")
    bottom = k > N / 2
    keep = N - k if bottom else k
    # rank 0 is the best entry; ties broken by global position
    if any(d.indices is None for d in datasets):
        gidx = np.arange(N)
    else:
        gidx = np.concatenate([d.indices for d in sorted(datasets, key=lambda d: d.agent_id)])
    key = prob.scores if bottom else -prob.scores
    order = np.lexsort((gidx, key))
    rank = np.empty(N, dtype=np.int64)
    rank[order] = np.arange(N)
    by_rank = gidx[order]

    adj = topology.graph.adjacency
    deg = topology.graph.degrees
    lists = [np.sort(rank[prob.owner == i])[:keep] for i in range(prob.n)]
    rounds, total, per_round = 0, 0, []
    cap = max_rounds if max_rounds is not None else prob.n + 1
    while rounds < cap:
        sent = int(sum(len(lists[i]) * deg[i] for i in range(prob.n)))
        merged = [
            np.union1d(lists[i], np.concatenate([lists[j] for j in adj[i]]) if adj[i] else lists[i])[:keep]
            for i in range(prob.n)
        ]
        rounds += 1
        total += sent
        per_round.append(sent)
        changed = any(not np.array_equal(a, b) for a, b in zip(lists, merged))
        lists = merged
        if not changed:
            break
    return StopkResult([by_rank[l] for l in lists], rounds, total, bottom, k, per_round)


def exact_lists(scores, k: int, indices=None) -> np.ndarray:
    """Centralized reference for `stopk_run`: the global indices it should converge to."""
    s = np.asarray(scores, dtype=float)
    N = s.size
    gidx = np.arange(N) if indices is None else np.asarray(indices)
    bottom = k > N / 2
    keep = N - k if bottom else k
    order = np.lexsort((gidx, s if bottom else -s))
    return gidx[order][:keep]


__all__ = [
    "BracketingError",
    "DivergenceError",
    "ExtraConfig",
    "SolverState",
    "StopRule",
    "StopkResult",
    "BudgetInputs",
    "Trajectory",
    "agent_smoothness",
    "comm_cost",
    "dgd_run",
    "exact_lists",
    "extra_default_steps",
    "extra_run",
    "extra_step",
    "bound_min_T",
    "error_bounds",
    "smoothed_minimizer",
    "stopk_run",
    "certified_budget",
]
