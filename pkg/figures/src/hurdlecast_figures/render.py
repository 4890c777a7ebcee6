"""The four figure kinds and the render() entry point.

Rendering is a pure function of the input files: matplotlib's SVG id
hash salt is pinned and no timestamps are written, so rendering the
same inputs twice produces byte-identical PNG and SVG files.
"""

from dataclasses import dataclass, field

import matplotlib
import numpy as np

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "hurdlecast-figures"

import matplotlib.pyplot as plt

from .kde import map_point
from .schemas import (SchemaError, read_assignment, read_forecast,
                      read_hulls, read_panel_fatalities, read_report,
                      read_simulation)

FIGURE_KINDS = ("interval_fan", "crps_surface", "country_scatter",
                "cluster_map")

# central prediction intervals of the fan, widest first so narrow bands
# paint on top
INTERVAL_LEVELS = (95, 90, 75, 50, 25)

_METRIC_PANELS = ("crps", "mis", "ign")


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: dict
    out_base: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}, expected "
                              f"one of {', '.join(FIGURE_KINDS)}")


def _need(spec: FigureSpec, *labels):
    missing = [lab for lab in labels if lab not in spec.inputs]
    if missing:
        raise SchemaError(f"{spec.kind} needs input files "
                          f"{', '.join(missing)}")
    return [spec.inputs[lab] for lab in labels]


def _save(fig, out_base):
    png, svg = f"{out_base}.png", f"{out_base}.svg"
    fig.savefig(png, dpi=150)
    fig.savefig(svg, metadata={"Date": None})
    plt.close(fig)
    return [png, svg]


def _fan_axes(ax, months, vectors, observed, title):
    upper_drawn = False
    for level in INTERVAL_LEVELS:
        half = level / 200.0
        lo = [float(np.quantile(v, 0.5 - half)) for v in vectors]
        hi = [float(np.quantile(v, 0.5 + half)) for v in vectors]
        # the caption rule: an interval only exists where its upper
        # bound is non-zero
        keep = np.asarray(hi) > 0
        if not keep.any():
            continue
        upper_drawn = True
        shade = 0.12 + 0.09 * INTERVAL_LEVELS.index(level)
        ax.fill_between(months, lo, hi, where=keep, step=None,
                        color="tab:blue", alpha=shade, linewidth=0,
                        label=f"{level}%")
    maps = [map_point(v) if v.size > 1 else float(v[0]) for v in vectors]
    ax.plot(months, maps, "x", color="tab:red", markersize=6, label="MAP")
    ax.plot(months, observed, "-o", color="black", markersize=3.5,
            linewidth=1.2, label="observed")
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("month")
    ax.set_ylabel("fatalities")
    if not upper_drawn:
        ax.set_ylim(bottom=-0.5)
    return upper_drawn


def _render_interval_fan(spec: FigureSpec):
    forecast_path, panel_path = _need(spec, "forecast", "panel")
    entries = read_forecast(forecast_path)
    counts, _ = read_panel_fatalities(panel_path)

    by_cell = {}
    for (cell, month), vec in entries.items():
        by_cell.setdefault(cell, {})[month] = vec
    wanted = spec.options.get("cells")
    if wanted is None:
        # default to the most violent cells of the window, busiest first
        totals = sorted(
            ((sum(counts.get((c, m), 0) for m in ms), -c), c)
            for c, ms in by_cell.items())
        wanted = [c for _, c in reversed(totals)][:4]
    else:
        absent = [c for c in wanted if c not in by_cell]
        if absent:
            raise SchemaError(f"{forecast_path}: no forecast for cells "
                              f"{absent}")

    n = len(wanted)
    ncols = 2 if n > 1 else 1
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, squeeze=False,
                             figsize=(5.5 * ncols, 3.4 * nrows))
    for ax in axes.flat[n:]:
        ax.axis("off")
    for ax, cell in zip(axes.flat, wanted):
        months = sorted(by_cell[cell])
        vectors = [np.sort(by_cell[cell][m]) for m in months]
        observed = [counts.get((cell, m), 0) for m in months]
        _fan_axes(ax, months, vectors, observed, f"cell {cell}")
    handles, labels = axes.flat[0].get_legend_handles_labels()
    fig.legend(handles, labels, loc="lower center",
               ncol=min(len(labels), 7), fontsize=8, frameon=False)
    fig.suptitle("Prediction intervals vs observed fatalities", fontsize=12)
    fig.tight_layout(rect=(0, 0.05, 1, 1))
    return _save(fig, spec.out_base)


def _render_crps_surface(spec: FigureSpec):
    (sim_path,) = _need(spec, "simulation")
    surface = read_simulation(sim_path)
    alphas = sorted({a for a, _ in surface}, reverse=True)
    noises = sorted({n for _, n in surface})

    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    for i, noise in enumerate(noises):
        ys = [surface[(a, noise)] for a in alphas]
        ax.plot(alphas, ys, marker="o", markersize=4,
                color=plt.get_cmap("viridis")(i / max(len(noises) - 1, 1)),
                label=f"noise {noise:g}")
    ax.invert_xaxis()   # reads left to right as skill degrades
    ax.set_xlabel("accuracy α")
    ax.set_ylabel("mean CRPS")
    ax.set_title("CRPS by forecast accuracy and noise")
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    return _save(fig, spec.out_base)


def _render_country_scatter(spec: FigureSpec):
    (report_path,) = _need(spec, "report")
    reports = read_report(report_path)
    with_countries = [r for r in reports if r["countries"]]
    if not with_countries:
        raise SchemaError(f"{report_path}: no per-country rows; rerun "
                          "scoring with a country map")

    fig, axes = plt.subplots(1, len(_METRIC_PANELS),
                             figsize=(4.0 * len(_METRIC_PANELS), 4.0))
    names = [r["model_name"] for r in with_countries]
    for ax, metric in zip(np.atleast_1d(axes), _METRIC_PANELS):
        for i, rep in enumerate(with_countries):
            countries = sorted(rep["countries"])
            ys = [rep["countries"][c][metric] for c in countries]
            # deterministic horizontal spread, one slot per country
            xs = i + (np.arange(len(ys)) - (len(ys) - 1) / 2) * \
                (0.55 / max(len(ys), 1))
            ax.plot(xs, ys, ".", color="tab:blue", alpha=0.6, markersize=5)
            ax.plot([i], [rep["aggregate"][metric]], "D", color="black",
                    markersize=6)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(metric.upper(), fontsize=10)
    axes_flat = np.atleast_1d(axes)
    axes_flat[0].set_ylabel("score")
    fig.suptitle("Aggregate (diamond) vs per-country scores", fontsize=12)
    fig.tight_layout(rect=(0, 0, 1, 0.95))
    return _save(fig, spec.out_base)


def _render_cluster_map(spec: FigureSpec):
    assignment_path, hulls_path, panel_path = _need(
        spec, "assignment", "hulls", "panel")
    assignment = read_assignment(assignment_path)
    hulls = read_hulls(hulls_path)
    _, coords = read_panel_fatalities(panel_path)
    missing = sorted(c for c in assignment if c not in coords)[:5]
    if missing:
        raise SchemaError(f"{panel_path}: panel lacks coordinates for "
                          f"assigned cells {missing}")

    cids = sorted({cid for cid in assignment.values()})
    cmap = plt.get_cmap("tab10")
    color_of = {cid: cmap(i % 10) for i, cid in enumerate(cids)}

    fig, ax = plt.subplots(figsize=(6.5, 6.0))
    for cell in sorted(assignment):
        lat, lon = coords[cell]
        ax.add_patch(plt.Rectangle((lon - 0.25, lat - 0.25), 0.5, 0.5,
                                   facecolor=color_of[assignment[cell]],
                                   edgecolor="white", linewidth=0.3))
    for cid in sorted(hulls):
        poly = hulls[cid]
        closed = np.vstack([poly, poly[:1]])
        ax.plot(closed[:, 1], closed[:, 0], "-", color="black",
                linewidth=1.1)
        centroid = poly.mean(axis=0)
        ax.text(centroid[1], centroid[0], str(cid), ha="center",
                va="center", fontsize=9, fontweight="bold")
    lats = [coords[c][0] for c in assignment]
    lons = [coords[c][1] for c in assignment]
    ax.set_xlim(min(lons) - 0.75, max(lons) + 0.75)
    ax.set_ylim(min(lats) - 0.75, max(lats) + 0.75)
    ax.set_aspect("equal")   # plate carrée: degrees straight to axes
    ax.set_xlabel("lon")
    ax.set_ylabel("lat")
    ax.set_title("Cluster assignment and hulls")
    fig.tight_layout()
    return _save(fig, spec.out_base)


_RENDERERS = {
    "interval_fan": _render_interval_fan,
    "crps_surface": _render_crps_surface,
    "country_scatter": _render_country_scatter,
    "cluster_map": _render_cluster_map,
}


def render(spec: FigureSpec) -> list:
    """Write the figure as PNG and SVG; returns the written paths."""
    return _RENDERERS[spec.kind](spec)
