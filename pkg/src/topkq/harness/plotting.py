"""Minimal SVG plots of harness CSV output."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEMAS = {
    "convergence": {"iter", "sup_err"},
    "vs_k": {"solver", "k", "mean_iters", "std_iters"},
    "vs_delta": {"solver", "delta", "mean_iters", "std_iters"},
    "vs_n": {"solver", "n", "mean_iters", "std_iters"},
    "comm_cost": {"solver", "k", "mean_cost"},
}
X_KEY = {"vs_k": "k", "vs_delta": "delta", "vs_n": "n", "comm_cost": "k"}


class FormatError(ValueError):
    pass


def _read(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise FormatError(f"{path} is empty")
    rows = list(csv.DictReader(lines))
    if not rows:
        raise FormatError(f"{path} has a header but no rows")
    return rows


def emit_plot(csv_path, kind: str, out_path=None) -> Path:
    """Render `csv_path` as an SVG next to it (or at `out_path`)."""
    if kind not in SCHEMAS:
        raise FormatError(f"unknown plot kind {kind!r}")
    rows = _read(csv_path)
    missing = SCHEMAS[kind] - set(rows[0])
    if missing:
        raise FormatError(f"columns {sorted(missing)} missing for kind {kind!r}")
    out_path = Path(out_path) if out_path else Path(csv_path).with_suffix(".svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "convergence":
        it = np.array([float(r["iter"]) for r in rows])
        err = np.array([float(r["sup_err"]) for r in rows])
        ax.semilogy(it, err)
        ax.set_xlabel("iteration")
        ax.set_ylabel("max variable error")
    else:
        x_key = X_KEY[kind]
        y_key = "mean_cost" if kind == "comm_cost" else "mean_iters"
        for solver in sorted({r["solver"] for r in rows}):
            sel = sorted((r for r in rows if r["solver"] == solver), key=lambda r: float(r[x_key]))
            x = np.array([float(r[x_key]) for r in sel])
            y = np.array([float(r[y_key]) for r in sel])
            ax.plot(x, y, marker="o", label=solver)
            if "std_iters" in sel[0] and y_key == "mean_iters":
                sd = np.array([float(r["std_iters"]) for r in sel])
                ax.fill_between(x, y - sd, y + sd, alpha=0.2)
        ax.set_xlabel(x_key)
        ax.set_ylabel(y_key)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
