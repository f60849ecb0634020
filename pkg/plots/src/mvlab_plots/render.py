"""CSV-to-figure renderers, one per recognized artifact.

Figures are regenerated deterministically: SVG ids are salted with a fixed
string and date metadata is stripped, so re-rendering unchanged CSVs yields
byte-identical files.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "mvlab-plots"

__all__ = ["MalformedCsvError", "ReportSpec", "render"]


class MalformedCsvError(Exception):
    """A CSV cell failed to parse; carries file name and line number."""

    def __init__(self, path, line_no, detail):
        super().__init__(f"{os.path.basename(path)}:{line_no}: {detail}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class ReportSpec:
    """Input run directory plus output choices for one rendering pass."""

    run_dir: str
    out_dir: str | None = None
    fmt: str = "svg"

    def resolved_out(self) -> str:
        return self.out_dir or os.path.join(self.run_dir, "figures")


def _read_csv(path, numeric_columns):
    """Rows as dicts with the named columns parsed to float ('' -> nan)."""
    rows = []
    with open(path, newline="") as fp:
        reader = csv.DictReader(fp)
        if reader.fieldnames is None:
            raise MalformedCsvError(path, 1, "empty file")
        for col in numeric_columns:
            if col not in reader.fieldnames:
                raise MalformedCsvError(path, 1, f"missing column '{col}'")
        for line_no, row in enumerate(reader, start=2):
            parsed = dict(row)
            for col in numeric_columns:
                cell = row[col]
                if cell == "" or cell is None:
                    parsed[col] = float("nan")
                    continue
                try:
                    parsed[col] = float(cell)
                except ValueError:
                    raise MalformedCsvError(
                        path, line_no, f"non-numeric value {cell!r} in column '{col}'"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise MalformedCsvError(path, 2, "no data rows")
    return rows


def _save(fig, out_dir, stem, fmt):
    os.makedirs(out_dir, exist_ok=True)
    target = os.path.join(out_dir, f"{stem}.{fmt}")
    fig.savefig(target, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
    plt.close(fig)
    return target


def render_picard(path, out_dir, fmt):
    rows = _read_csv(path, ["iter", "entropy_gap", "stderr", "tv_bound"])
    iters = [r["iter"] for r in rows]
    gaps = [r["entropy_gap"] for r in rows]
    errs = [3 * r["stderr"] for r in rows]
    tv = [r["tv_bound"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(iters, gaps, yerr=errs, marker="o", label="entropy gap (3 s.e.)")
    ax.plot(iters, tv, marker="s", linestyle="--", label="TV bound sqrt(2 gap)")
    if any(g > 0 for g in gaps):  # an exactly-converged run plots linearly
        ax.set_yscale("log")
    ax.set_xlabel("Picard iteration")
    ax.set_ylabel("gap")
    ax.set_title("Fixed-point entropy gap")
    ax.legend()
    fig.tight_layout()
    return _save(fig, out_dir, "picard_gap", fmt)


def render_chaos(path, out_dir, fmt, rate_fit_path=None):
    rows = _read_csv(path, ["N", "value", "stderr"])
    fits = {}
    if rate_fit_path and os.path.exists(rate_fit_path):
        for r in _read_csv(rate_fit_path, ["slope", "half_width"]):
            fits[r["stat"]] = (r["slope"], r["half_width"])
    fig, ax = plt.subplots(figsize=(6, 4))
    stats = [s for s in ("drift_gap_t0", "drift_gap_T", "entropy_per_particle")
             if any(r["stat"] == s for r in rows)]
    anchor = None
    for stat in stats:
        ns = [r["N"] for r in rows if r["stat"] == stat]
        vals = [r["value"] for r in rows if r["stat"] == stat]
        errs = [3 * r["stderr"] for r in rows if r["stat"] == stat]
        label = stat
        if stat in fits:
            label += f" (slope {fits[stat][0]:.2f} +- {fits[stat][1]:.2f})"
        ax.errorbar(ns, vals, yerr=errs, marker="o", label=label)
        if anchor is None and vals[0] > 0:
            anchor = (ns[0], vals[0])
    if anchor is not None:
        ns_ref = np.array(sorted({r["N"] for r in rows}), float)
        for slope, style in ((-1.0, ":"), (-2.0, "-.")):
            ref = anchor[1] * (ns_ref / anchor[0]) ** slope
            ax.plot(ns_ref, ref, style, color="gray", label=f"slope {slope:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("N particles")
    ax.set_ylabel("statistic")
    ax.set_title("Propagation-of-chaos rates")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_dir, "chaos_rates", fmt)


def render_fbm_cov(path, out_dir, fmt):
    rows = _read_csv(path, ["i", "j", "t_i", "t_j", "empirical", "exact"])
    nodes = sorted({r["i"] for r in rows})
    index = {v: k for k, v in enumerate(nodes)}
    n = len(nodes)
    emp = np.full((n, n), np.nan)
    exact = np.full((n, n), np.nan)
    for r in rows:
        emp[index[r["i"]], index[r["j"]]] = r["empirical"]
        exact[index[r["i"]], index[r["j"]]] = r["exact"]
    tmax = max(r["t_i"] for r in rows)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    extent = (0, tmax, tmax, 0)
    vmax = np.nanmax(exact)
    for ax, mat, title in ((axes[0], emp, "empirical"), (axes[1], exact, "exact")):
        im = ax.imshow(mat, extent=extent, vmin=0, vmax=vmax, cmap="viridis")
        ax.set_title(f"fBM covariance ({title})")
        ax.set_xlabel("t")
    axes[0].set_ylabel("s")
    fig.colorbar(im, ax=axes, shrink=0.85)
    return _save(fig, out_dir, "fbm_cov", fmt)


def render_mode_variance(path, out_dir, fmt):
    rows = _read_csv(path, ["k", "variance", "exact_free"])
    ks = [r["k"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.4
    ax.bar([k - width / 2 for k in ks], [r["variance"] for r in rows],
           width=width, log=True, label="sampled")
    ax.bar([k + width / 2 for k in ks], [r["exact_free"] for r in rows],
           width=width, log=True, label="exact (no forcing)")
    ax.set_xlabel("mode k")
    ax.set_ylabel("terminal variance")
    ax.set_title("SPDE mode variances")
    ax.legend()
    fig.tight_layout()
    return _save(fig, out_dir, "mode_variance", fmt)


_RENDERERS = {
    "picard_log.csv": render_picard,
    "chaos_log.csv": render_chaos,
    "fbm_cov.csv": render_fbm_cov,
    "mode_variance.csv": render_mode_variance,
}


def render(spec: ReportSpec) -> list:
    """Render every recognized CSV in the run directory; returns figure paths.

    The run directory's artifacts are read-only inputs; figures land in
    spec.out_dir (default: <run_dir>/figures).  An empty directory renders
    nothing and only warns.
    """
    if spec.fmt not in ("svg", "png"):
        raise ValueError(f"unsupported format {spec.fmt!r}")
    if not os.path.isdir(spec.run_dir):
        raise FileNotFoundError(f"run directory {spec.run_dir} does not exist")
    if not os.path.exists(os.path.join(spec.run_dir, "manifest.json")):
        warnings.warn(f"{spec.run_dir} has no manifest.json; continuing on bare CSVs")
    out_dir = spec.resolved_out()
    produced = []
    for name, renderer in sorted(_RENDERERS.items()):
        path = os.path.join(spec.run_dir, name)
        if not os.path.exists(path):
            continue
        if name == "chaos_log.csv":
            produced.append(renderer(path, out_dir, spec.fmt,
                                     os.path.join(spec.run_dir, "rate_fit.csv")))
        else:
            produced.append(renderer(path, out_dir, spec.fmt))
    if not produced:
        warnings.warn(f"no recognized CSV artifacts in {spec.run_dir}; nothing rendered")
    return produced
