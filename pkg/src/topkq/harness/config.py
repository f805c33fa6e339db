"""Experiment configuration read from INI files."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

KINDS = ("convergence", "vs_k", "vs_delta", "vs_n", "comm_cost")
SOLVERS = ("extra", "dgd", "stopk")
SECTION = "experiment"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


@dataclass(frozen=True)
class SweepPoint:
    n: int
    N: int
    k: int
    delta: float


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    n: tuple[int, ...]
    k: tuple[int, ...] = ()
    k_fraction: float | None = None
    delta: tuple[float, ...] = (0.1,)
    scores_per_agent: int = 1
    edge_multiplier: float = 5.0
    graph: str = "erdos_renyi"
    variance: float = 10.0
    smoother: str = "conv"
    kernel: str = "uniform"
    h_policy: str = "relative"
    h: float = 2.0
    steps: str = "manual"
    solvers: tuple[str, ...] = ("extra",)
    dgd_step: float = 0.01
    stop_on: str = "raw"
    max_iters: int = 200_000
    time_limit: float | None = None
    trials: int = 20
    seed: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.validate()

    # sweeps --------------------------------------------------------------

    def points(self) -> list[SweepPoint]:
        out = []
        for n in self.n:
            N = n * self.scores_per_agent
            ks = self.k if self.k else (max(1, round(self.k_fraction * n)),)
            for k in ks:
                for d in self.delta:
                    out.append(SweepPoint(n, N, k, d))
        return out

    @property
    def sweep_key(self) -> str:
        return {"vs_k": "k", "vs_delta": "delta", "vs_n": "n", "comm_cost": "k"}.get(self.kind, "k")

    def num_edges(self, n: int) -> int:
        return n if self.graph == "ring" else int(round(self.edge_multiplier * n))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # validation ------------------------------------------------------------

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.kind in KINDS, f"kind must be one of {KINDS}")
        need(len(self.n) > 0 and len(self.delta) > 0, "sweeps must be non-empty")
        need(bool(self.k) != (self.k_fraction is not None), "give exactly one of k, k_fraction")
        if self.k_fraction is not None:
            need(0 < self.k_fraction < 1, "k_fraction must lie in (0, 1)")
        need(self.trials >= 1, "trials must be at least 1")
        need(self.scores_per_agent >= 1, "scores_per_agent must be at least 1")
        need(all(d > 0 for d in self.delta), "delta must be positive")
        need(self.variance > 0 and self.edge_multiplier > 0, "scale parameters must be positive")
        need(self.graph in ("erdos_renyi", "ring"), "graph must be erdos_renyi or ring")
        need(self.smoother in ("conv", "nesterov"), "smoother must be conv or nesterov")
        need(self.h_policy in ("hmax", "manual", "relative"), "h_policy must be hmax, manual or relative")
        need(self.h > 0 and self.dgd_step > 0, "h and dgd_step must be positive")
        need(self.steps in ("certified", "manual"), "steps must be certified or manual")
        need(self.stop_on in ("raw", "average"), "stop_on must be raw or average")
        need(len(self.solvers) > 0 and set(self.solvers) <= set(SOLVERS), f"solvers must be drawn from {SOLVERS}")
        need(self.max_iters >= 1, "max_iters must be at least 1")
        for pt in self.points():
            need(pt.n >= 2, "need at least two agents")
            need(1 <= pt.k <= pt.N, f"k={pt.k} outside [1, {pt.N}]")
            m = self.num_edges(pt.n)
            if self.graph == "ring":
                need(pt.n >= 3, "a ring needs at least three agents")
            else:
                need(pt.n - 1 <= m <= pt.n * (pt.n - 1) // 2,
                     f"{m} edges cannot form a connected simple graph on {pt.n} agents")


_INT_TUPLES = {"n", "k"}
_FLOAT_TUPLES = {"delta"}
_STR_TUPLES = {"solvers"}
_INTS = {"scores_per_agent", "max_iters", "trials", "seed"}
_FLOATS = {"k_fraction", "edge_multiplier", "variance", "h", "dgd_step", "time_limit"}
_STRS = {"kind", "graph", "smoother", "kernel", "h_policy", "steps", "stop_on"}


def parse_config(text: str, name: str = "") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if SECTION not in cp:
        raise ConfigError(f"missing [{SECTION}] section")
    kw: dict = {}
    try:
        for key, raw in cp[SECTION].items():
            if key in _INT_TUPLES:
                kw[key] = _ints(raw)
            elif key in _FLOAT_TUPLES:
                kw[key] = _floats(raw)
            elif key in _STR_TUPLES:
                kw[key] = tuple(t for t in raw.replace(",", " ").split())
            elif key in _INTS:
                kw[key] = int(raw)
            elif key in _FLOATS:
                kw[key] = float(raw)
            elif key in _STRS:
                kw[key] = raw.strip()
            else:
                raise ConfigError(f"unknown key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value: {exc}") from exc
    if "kind" not in kw or "n" not in kw:
        raise ConfigError("kind and n are required")
    try:
        return ExperimentConfig(name=name, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, name=path.stem)
