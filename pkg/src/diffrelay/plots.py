"""Figure rendering for experiment reports.

Every report path that writes a CSV also renders a PNG next to it. Figures
are written through the Agg backend with the date metadata stripped so that
repeated runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KW = {"dpi": 120, "metadata": {"Date": None}}


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_run_metrics(reports, path: str | Path) -> Path:
    """Per-run metric values across seeded repeats."""
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    runs = range(len(reports))
    for ax, attr, label in zip(
        axes,
        ("sliced_w2", "spatial_fidelity_err", "temporal_consistency_err"),
        ("sliced $W_2$", "spatial fidelity error", "temporal consistency error"),
    ):
        ax.plot(runs, [getattr(r, attr) for r in reports], "o-")
        ax.set_xlabel("run")
        ax.set_title(label, fontsize=10)
        ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_te_ablation(rows, path: str | Path) -> Path:
    """Error trends against the re-injection depth."""
    te = [r["te"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(te, [r["spatial_fidelity_err"] for r in rows], "o-",
            label="spatial fidelity err")
    ax.plot(te, [r["temporal_consistency_err"] for r in rows], "s-",
            label="temporal consistency err")
    ax.set_xlabel("re-injection depth")
    ax.set_ylabel("median error")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_mode_ablation(rows, path: str | Path) -> Path:
    """Grouped bars of spatial/temporal error per refinement mode."""
    modes = [r["mode"] for r in rows]
    x = range(len(modes))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar([i - width / 2 for i in x],
           [r["spatial_fidelity_err"] for r in rows], width,
           label="spatial fidelity err")
    ax.bar([i + width / 2 for i in x],
           [r["temporal_consistency_err"] for r in rows], width,
           label="temporal consistency err")
    ax.set_xticks(list(x))
    ax.set_xticklabels(modes, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("median error")
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    return _finish(fig, path)


def plot_long_ablation(rows, path: str | Path) -> Path:
    """Junction discontinuity and inter-segment correlation per variant."""
    variants = [r["variant"] for r in rows]
    x = range(len(variants))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.bar(x, [r["junction_jump"] for r in rows])
    ax1.set_xticks(list(x))
    ax1.set_xticklabels(variants, rotation=20, ha="right", fontsize=8)
    ax1.set_ylabel("median junction jump")
    ax1.grid(alpha=0.3, axis="y")
    ax2.bar(x, [r["inter_segment_corr"] for r in rows], color="tab:orange")
    ax2.set_xticks(list(x))
    ax2.set_xticklabels(variants, rotation=20, ha="right", fontsize=8)
    ax2.set_ylabel("median inter-segment corr")
    ax2.grid(alpha=0.3, axis="y")
    return _finish(fig, path)
