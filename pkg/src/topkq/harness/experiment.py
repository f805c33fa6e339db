"""Seeded Monte Carlo runs of the solver families."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import scoremodel as sm
from .. import smoothing, solvers
from .. import topology as topo
from .config import ExperimentConfig, SweepPoint

TRIAL_FIELDS = [
    "trial", "seed", "n", "N", "k", "delta", "solver", "iterations",
    "converged", "comm_cost", "declared", "correct",
]
SUMMARY_FIELDS = [
    "solver", "n", "N", "k", "delta", "trials", "converged",
    "mean_iters", "std_iters", "median_iters", "mean_cost", "mean_declared",
]


def seed_fanout(base_seed: int, *index: int) -> int:
    """64-bit seed from a hash of the base seed and an index tuple."""
    payload = b"".join(int(v).to_bytes(16, "little", signed=True) for v in (base_seed, *index))
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass
class TrialResult:
    trial: int
    seed: int
    n: int
    N: int
    k: int
    delta: float
    solver: str
    iterations: int
    converged: bool
    comm_cost: int
    declared: int
    correct: bool
    wall_time: float


@dataclass
class Instance:
    scores: np.ndarray
    datasets: list
    topology: topo.MixingTopology
    truth: sm.TopKGroundTruth
    p: float


def build_instance(cfg: ExperimentConfig, pt: SweepPoint, trial_seed: int) -> Instance:
    """
    Raw scores and graph depend only on (trial seed, n, N), so sweeps over
    k or delta reuse them and differ only in the swept quantity.
    """
    inst_seed = seed_fanout(trial_seed, pt.n, pt.N)
    rng = np.random.default_rng(inst_seed)
    raw = rng.normal(0.0, math.sqrt(cfg.variance), pt.N)
    scores = sm.quantize(raw, pt.delta)
    if cfg.graph == "ring":
        g = topo.gen_ring(pt.n)
    else:
        g = topo.gen_erdos_renyi(pt.n, cfg.num_edges(pt.n), seed_fanout(inst_seed, 1))
    if pt.N == pt.n:
        datasets = sm.one_per_agent(scores)
    else:
        datasets = sm.round_robin_partition(scores, pt.n, np.random.default_rng(seed_fanout(inst_seed, 2)))
    return Instance(scores, datasets, topo.mixing_matrix(g), sm.ground_truth(scores, pt.k),
                    sm.select_p(pt.N, pt.k))


def make_smoother(cfg: ExperimentConfig, inst: Instance, delta: float):
    kind = "conv" if cfg.smoother == "conv" else "nesterov"
    base = smoothing.make_smoother(kind, inst.p, 1.0, cfg.kernel)
    if cfg.h_policy == "hmax":
        h = base.hmax(inst.truth.N, inst.truth.g_m, delta)
    elif cfg.h_policy == "relative":
        h = cfg.h * delta
    else:
        h = cfg.h
    return base.with_h(h)


def declared_holders(inst: Instance, estimates: np.ndarray, delta: float) -> np.ndarray:
    """Global indices flagged by each agent against its own threshold."""
    flagged = []
    for d in inst.datasets:
        T = sm.threshold_from_estimate(float(estimates[d.agent_id]), delta)
        flagged.append(d.indices[sm.declare_topk(d, T)])
    return np.sort(np.concatenate(flagged))


def _iterative_result(traj, inst, delta, use_avg, base) -> TrialResult:
    est = traj.estimate(use_avg)
    declared = declared_holders(inst, est, delta)
    truth_set = inst.truth.holders(inst.scores)
    iters = traj.iterations_to_interval if traj.converged else traj.iterations
    return TrialResult(
        **base,
        iterations=int(iters),
        converged=traj.converged,
        comm_cost=int(iters) * traj.scalars_per_round,
        declared=int(declared.size),
        correct=bool(np.array_equal(declared, truth_set)),
        wall_time=traj.wall_time,
    )


def run_point(cfg: ExperimentConfig, pt: SweepPoint, trial: int, trial_seed: int,
              traj_dir: Path | None = None) -> list[TrialResult]:
    inst = build_instance(cfg, pt, trial_seed)
    delta = pt.delta
    use_avg = cfg.stop_on == "average"
    base = dict(trial=trial, seed=trial_seed, n=pt.n, N=pt.N, k=pt.k, delta=delta)
    out = []
    for name in cfg.solvers:
        if name == "extra":
            smoother = make_smoother(cfg, inst, delta)
            kw = dict(max_iters=cfg.max_iters, use_running_average=use_avg, time_limit=cfg.time_limit)
            if cfg.steps == "certified":
                ec = solvers.ExtraConfig.certified(inst.topology, smoother, inst.datasets, **kw)
            else:
                ec = solvers.ExtraConfig.manual(smoother, inst.datasets, **kw)
            traj = solvers.extra_run(inst.topology, smoother, inst.datasets, ec, inst.truth,
                                     delta=delta, record_function_error=traj_dir is not None)
        elif name == "dgd":
            traj = solvers.dgd_run(inst.topology, inst.datasets, inst.p, cfg.dgd_step, inst.truth,
                                   max_iters=cfg.max_iters, use_running_average=use_avg,
                                   delta=delta, time_limit=cfg.time_limit)
        else:
            t0 = time.perf_counter()
            res = solvers.stopk_run(inst.topology, inst.datasets, pt.k)
            ok = all(np.array_equal(l, solvers.exact_lists(inst.scores, pt.k)) for l in res.lists)
            out.append(TrialResult(**base, solver=name, iterations=res.rounds, converged=ok,
                                   comm_cost=solvers.comm_cost(res), declared=pt.k, correct=ok,
                                   wall_time=time.perf_counter() - t0))
            continue
        if traj_dir is not None:
            traj.write_csv(traj_dir / f"trial{trial:03d}_{name}_n{pt.n}_k{pt.k}_d{delta:g}.csv")
        out.append(_iterative_result(traj, inst, delta, use_avg, dict(base, solver=name)))
    return out


def _run_trial(args) -> list[TrialResult]:
    cfg, trial, traj_dir = args
    trial_seed = seed_fanout(cfg.seed, trial)
    res = []
    for pt in cfg.points():
        res.extend(run_point(cfg, pt, trial, trial_seed, traj_dir))
    return res


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1) -> list[TrialResult]:
    """
    Run every trial of `cfg`; with `out_dir`, also write trials.csv,
    summary.csv, timing.csv and, for the convergence kind, trajectories.
    """
    cfg.validate()
    traj_dir = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.kind == "convergence":
            traj_dir = out_dir / "trajectories"
            traj_dir.mkdir(exist_ok=True)
    jobs = [(cfg, t, traj_dir) for t in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, jobs))
    else:
        per_trial = [_run_trial(j) for j in jobs]
    results = [r for rs in per_trial for r in rs]
    if out_dir is not None:
        write_results(results, out_dir)
    return results


# -- aggregation and output ------------------------------------------------------------

def summarize(results: list[TrialResult]) -> list[dict]:
    groups: dict[tuple, list[TrialResult]] = {}
    for r in results:
        groups.setdefault((r.solver, r.n, r.N, r.k, r.delta), []).append(r)
    rows = []
    for (solver, n, N, k, delta), rs in groups.items():
        iters = [r.iterations for r in rs]
        rows.append(dict(
            solver=solver, n=n, N=N, k=k, delta=delta, trials=len(rs),
            converged=sum(r.converged for r in rs),
            mean_iters=statistics.fmean(iters),
            std_iters=statistics.pstdev(iters),
            median_iters=statistics.median(iters),
            mean_cost=statistics.fmean(r.comm_cost for r in rs),
            mean_declared=statistics.fmean(r.declared for r in rs),
        ))
    return rows


def _header(fh) -> None:
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    fh.write(f"# generated {stamp}\n")


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_results(results: list[TrialResult], out_dir) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "trials.csv", "w", newline="") as fh:
        _header(fh)
        w = csv.writer(fh)
        w.writerow(TRIAL_FIELDS)
        for r in results:
            d = asdict(r)
            w.writerow([_fmt(d[f]) for f in TRIAL_FIELDS])
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        _header(fh)
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for row in summarize(results):
            w.writerow([_fmt(row[f]) for f in SUMMARY_FIELDS])
    # wall times are kept apart so the two files above are reproducible
    with open(out_dir / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "solver", "n", "k", "delta", "wall_time"])
        for r in results:
            w.writerow([r.trial, r.solver, r.n, r.k, r.delta, f"{r.wall_time:.6f}"])
