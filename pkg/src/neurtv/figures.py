"""Matplotlib renderings saved next to the delimited outputs of a run.

Everything uses the Agg backend and writes PNG files; no interactive state.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_image_panels",
    "save_loss_trace",
    "save_error_curves",
    "save_shift_curves",
    "save_scatter_panels",
]

_SAVE_OPTS = dict(dpi=110, metadata={"Software": None})


def _finish(fig, path):
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
    return str(path)


def save_image_panels(path, panels):
    """Grayscale side-by-side panels; ``panels`` maps title -> 2-D array."""
    panels = {k: np.asarray(v, dtype=np.float64) for k, v in panels.items()}
    if not panels:
        raise ValueError("no panels to draw")
    for name, panel in panels.items():
        if panel.ndim != 2:
            raise ValueError(f"panel {name!r} is not a 2-D array")
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.4))
    if len(panels) == 1:
        axes = [axes]
    lo = min(p.min() for p in panels.values())
    hi = max(p.max() for p in panels.values())
    if hi <= lo:
        hi = lo + 1.0
    for ax, (name, panel) in zip(axes, panels.items()):
        ax.imshow(panel, cmap="gray", vmin=lo, vmax=hi, interpolation="nearest")
        ax.set_title(name, fontsize=10)
        ax.set_axis_off()
    fig.tight_layout()
    return _finish(fig, path)


def save_loss_trace(path, traces):
    """Semi-log training-loss curves; ``traces`` maps label -> 1-D array."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for label, trace in traces.items():
        trace = np.asarray(trace, dtype=np.float64)
        if trace.size == 0:
            raise ValueError(f"trace {label!r} is empty")
        ax.semilogy(np.arange(1, trace.size + 1), trace, label=str(label))
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if len(traces) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)


def save_error_curves(path, report):
    """Log-log truncation-error curves from an ErrorReport."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ns = np.asarray(report.ns, dtype=np.float64)
    for mode in sorted(report.errors):
        errors = np.asarray(report.errors[mode], dtype=np.float64)
        keep = errors > 0
        if keep.any():
            ax.loglog(ns[keep], errors[keep], marker="o", label=mode)
    guide = report.exact if report.exact > 0 else 1.0
    ax.loglog(ns, guide / ns, linestyle="--", color="gray", label="1/n guide")
    ax.set_xlabel("partition count n")
    ax.set_ylabel("absolute error")
    ax.set_title(report.fn_name, fontsize=10)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)


def save_shift_curves(path, rows, fn_name=""):
    """Uniform vs shifted-breakpoint truncation errors over n, one pair per δ.

    ``rows`` holds (n, j, delta, r_uniform, r_shifted) tuples.
    """
    rows = sorted(rows, key=lambda r: (r[2], r[0]))
    deltas = sorted({r[2] for r in rows})
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    for delta in deltas:
        group = [r for r in rows if r[2] == delta]
        ns = [r[0] for r in group]
        ax.loglog(ns, [r[3] for r in group], marker="o",
                  label=f"uniform, d={delta:g}")
        ax.loglog(ns, [r[4] for r in group], marker="s", linestyle="--",
                  label=f"shifted, d={delta:g}")
    ax.set_xlabel("partition count n")
    ax.set_ylabel("truncation error")
    if fn_name:
        ax.set_title(fn_name, fontsize=10)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)


def save_scatter_panels(path, coords, panels, dims=(0, 1)):
    """Scatter plots over two chosen coordinate columns, colored by value."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] <= max(dims):
        raise ValueError("coordinate array does not cover the plot dimensions")
    fig, axes = plt.subplots(1, len(panels), figsize=(3.6 * len(panels), 3.4))
    if len(panels) == 1:
        axes = [axes]
    values = np.concatenate([np.asarray(v, dtype=np.float64) for v in panels.values()])
    lo, hi = values.min(), values.max()
    if hi <= lo:
        hi = lo + 1.0
    for ax, (name, panel) in zip(axes, panels.items()):
        panel = np.asarray(panel, dtype=np.float64)
        if panel.shape[0] != coords.shape[0]:
            raise ValueError(f"panel {name!r} does not match the coordinate rows")
        scatter = ax.scatter(
            coords[:, dims[0]], coords[:, dims[1]], c=panel, s=14,
            cmap="viridis", vmin=lo, vmax=hi,
        )
        ax.set_title(name, fontsize=10)
        ax.set_aspect("equal", adjustable="datalim")
    fig.colorbar(scatter, ax=axes[-1], shrink=0.85)
    fig.tight_layout()
    return _finish(fig, path)
