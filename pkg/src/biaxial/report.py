"""Render training-curve figures from a metric log.

The metric log is comma-separated (iteration, loss, per_step_ll, seconds)
lines with no header.  Figures land next to the log (or in --out-dir) as
<stem>_loss.png and <stem>_loglik.png.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read_metrics(path: str | Path) -> np.ndarray:
    """Returns a (n, 4) float array of iteration, loss, per_step_ll, seconds."""
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.size == 0 or rows.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 comma-separated columns")
    return rows


def render(metrics_path: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    metrics_path = Path(metrics_path)
    rows = read_metrics(metrics_path)
    target = Path(out_dir) if out_dir is not None else metrics_path.parent
    target.mkdir(parents=True, exist_ok=True)
    stem = metrics_path.stem

    written = []
    for col, label, suffix in ((1, "training loss", "loss"), (2, "per-step log-likelihood", "loglik")):
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        ax.plot(rows[:, 0], rows[:, col], lw=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        out = target / f"{stem}_{suffix}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written
