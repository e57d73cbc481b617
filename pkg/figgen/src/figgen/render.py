"""Figure builders.

All rendering is deterministic: fixed style constants, Agg backend, no
timestamps or machine-specific metadata in the PNG, so re-rendering the
same inputs reproduces the file byte for byte.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Patch

from .csvdata import read_convergence, read_problem_grid, read_region
from .errors import DataError, FigureError
from .spec import FigureSpec

# Centralized style: keep every figure visually consistent.
SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                 "#8c564b", "#17becf", "#7f7f7f")
GUIDE_COLOR = "#555555"
EXACT_REGION_COLOR = "#c9d4e0"
METHOD_REGION_COLOR = "#1f77b4"
FIGSIZE_SINGLE = (6.0, 4.5)
FIGSIZE_DOUBLE = (11.0, 4.5)
PNG_METADATA = {"Software": "figgen"}


def _save(fig, spec: FigureSpec) -> str:
    out = Path(spec.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, dpi=spec.dpi, metadata=PNG_METADATA)
    except OSError as exc:
        raise FigureError(f"cannot write figure {out}: {exc}")
    finally:
        plt.close(fig)
    return str(out)


def _series_label(file_label: str, method: str, n_inputs: int) -> str:
    if file_label and n_inputs > 1:
        return f"{file_label} {method}"
    return file_label or method


def _plot_series(ax, xs, series, label, color):
    ax.plot(xs, series.error, "o-", color=color, label=label,
            markersize=4.5, linewidth=1.3)
    lo = np.maximum(series.error - series.stderr, series.error * 1e-3)
    ax.fill_between(xs, lo, series.error + series.stderr,
                    color=color, alpha=0.2, linewidth=0)


def _guide_lines(ax, h_anchor, e_anchor, h_range, slopes):
    h = np.array([h_range[0], h_range[1]])
    for s in slopes:
        y = e_anchor * (h / h_anchor) ** s
        ax.plot(h, y, "--", color=GUIDE_COLOR, linewidth=1.0)
        ax.annotate(f"slope {s:g}", (h[1], y[1]), textcoords="offset points",
                    xytext=(4, -4), fontsize=8, color=GUIDE_COLOR)


def convergence_figure(spec: FigureSpec):
    """Log-log error vs stepsize (and optionally vs force evaluations)."""
    all_series = []
    for k, path in enumerate(spec.inputs):
        file_label = spec.labels[k] if spec.labels else ""
        for series in read_convergence(path):
            all_series.append((file_label, series))
    plotted = [s for _, s in all_series if s.h.size]
    if not plotted:
        raise DataError("no finite data points to plot in "
                        + ", ".join(spec.inputs))

    n_axes = 2 if spec.cost_panel else 1
    figsize = FIGSIZE_DOUBLE if spec.cost_panel else FIGSIZE_SINGLE
    fig, axes = plt.subplots(1, n_axes, figsize=figsize, squeeze=False)
    ax_h = axes[0, 0]
    for i, (file_label, series) in enumerate(all_series):
        if not series.h.size:
            continue
        label = _series_label(file_label, series.method, len(spec.inputs))
        if series.unstable_h:
            label += f" (unstable h >= {min(series.unstable_h):g})"
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        _plot_series(ax_h, series.h, series, label, color)
        if spec.cost_panel:
            _plot_series(axes[0, 1], series.n_force, series, label, color)

    # Anchor guides at the first series' geometric-mean point so synthetic
    # h^p data lies exactly on the slope-p guide.
    first = plotted[0]
    h_anchor = float(np.exp(np.mean(np.log(first.h))))
    e_anchor = float(np.exp(np.mean(np.log(np.maximum(first.error, 1e-300)))))
    h_all = np.concatenate([s.h for s in plotted])
    _guide_lines(ax_h, h_anchor, e_anchor, (h_all.min(), h_all.max()),
                 spec.slopes)

    ax_h.set_xscale("log")
    ax_h.set_yscale("log")
    ax_h.set_xlabel("stepsize h")
    ax_h.set_ylabel("error")
    ax_h.legend(fontsize=8)
    if spec.cost_panel:
        ax_c = axes[0, 1]
        ax_c.set_xscale("log")
        ax_c.set_yscale("log")
        ax_c.set_xlabel("force evaluations")
        ax_c.set_ylabel("error")
        ax_c.legend(fontsize=8)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


def _edges(centers: np.ndarray) -> np.ndarray:
    """Cell edges around grid centers; width 1 fallback for a single cell."""
    if centers.size == 1:
        c = float(centers[0])
        return np.array([c - 0.5, c + 0.5])
    mids = 0.5 * (centers[1:] + centers[:-1])
    first = centers[0] - (mids[0] - centers[0])
    last = centers[-1] + (centers[-1] - mids[-1])
    return np.concatenate([[first], mids, [last]])


def stability_figure(spec: FigureSpec):
    """Filled method stability region with the exact region shaded under."""
    region = read_region(spec.inputs[0])
    fig, ax = plt.subplots(figsize=FIGSIZE_SINGLE)
    p_edges = _edges(region.p_grid)
    q2_edges = _edges(region.q2_grid)

    # pcolormesh expects (ny, nx); our arrays are (p, q2).
    exact = np.ma.masked_where(~region.exact_stable.T, np.ones_like(region.rho.T))
    ax.pcolormesh(p_edges, q2_edges, exact, cmap=_flat_cmap(EXACT_REGION_COLOR),
                  vmin=0, vmax=1, shading="flat")
    stable = np.ma.masked_where(~region.stable.T, np.ones_like(region.rho.T))
    ax.pcolormesh(p_edges, q2_edges, stable, cmap=_flat_cmap(METHOD_REGION_COLOR),
                  vmin=0, vmax=1, alpha=0.75, shading="flat")

    label = spec.labels[0] if spec.labels else "method"
    ax.legend(handles=[
        Patch(facecolor=EXACT_REGION_COLOR, label="exact: p + q²/2 < 0"),
        Patch(facecolor=METHOD_REGION_COLOR, alpha=0.75,
              label=f"{label} stable"),
    ], fontsize=8, loc="upper right")
    ax.set_xlabel("p")
    ax.set_ylabel("q²")
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return fig


def _flat_cmap(color):
    from matplotlib.colors import ListedColormap

    return ListedColormap([color])


def problem_panel_figure(spec: FigureSpec):
    """V(x) and Sigma(x) on a shared abscissa."""
    x, v, sigma = read_problem_grid(spec.inputs[0])
    fig, ax = plt.subplots(figsize=FIGSIZE_SINGLE)
    ax.plot(x, v, color=SERIES_COLORS[0], label="V(x)", linewidth=1.4)
    ax.plot(x, sigma, color=SERIES_COLORS[1], label="Σ(x)", linewidth=1.4)
    ax.set_xlabel("x")
    ax.legend(fontsize=9)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return fig


_BUILDERS = {
    "convergence": convergence_figure,
    "stability": stability_figure,
    "problem_panel": problem_panel_figure,
}


def render(spec: FigureSpec) -> str:
    """Build and save the figure a spec describes; returns the output path."""
    spec.validate()
    fig = _BUILDERS[spec.kind](spec)
    return _save(fig, spec)


def render_convergence(spec: FigureSpec) -> str:
    if spec.kind != "convergence":
        raise FigureError(f"spec kind is {spec.kind!r}, not convergence")
    return render(spec)


def render_stability(spec: FigureSpec) -> str:
    if spec.kind != "stability":
        raise FigureError(f"spec kind is {spec.kind!r}, not stability")
    return render(spec)


def render_problem_panel(spec: FigureSpec) -> str:
    if spec.kind != "problem_panel":
        raise FigureError(f"spec kind is {spec.kind!r}, not problem_panel")
    return render(spec)
