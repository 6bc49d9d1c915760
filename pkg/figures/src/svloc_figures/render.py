"""Render simulation-study CSVs into figures.

The CSV schema is the whole contract with the producing tool: metadata lines
prefixed '#', one header row, then comma-separated data rows. Each plot kind
validates the columns it needs and fails loudly on a mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_KINDS = ("heatmap", "lines", "cdf", "bars", "timeseries")


class SchemaError(ValueError):
    """Input CSV does not carry the columns a plot kind needs."""


@dataclass
class PlotSpec:
    inputs: Sequence[str]
    kind: str
    out: str
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    labels: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}; "
                             f"choose from {PLOT_KINDS}")
        if not self.inputs:
            raise ValueError("need at least one input CSV")


@dataclass
class Table:
    columns: tuple
    rows: list
    meta: dict

    def column(self, name) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([r[idx] for r in self.rows], dtype=float)


def read_table(path) -> Table:
    meta, columns, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
                continue
            parts = line.split(",")
            if columns is None:
                columns = tuple(parts)
                continue
            out = []
            for p in parts:
                try:
                    out.append(float(p))
                except ValueError:
                    out.append(p)
            rows.append(tuple(out))
    if columns is None:
        raise SchemaError(f"{path}: no header row found")
    return Table(columns, rows, meta)


def _require(table: Table, needed, path) -> None:
    missing = [c for c in needed if c not in table.columns]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}; "
                          f"found {list(table.columns)}")
    if not table.rows:
        raise SchemaError(f"{path}: no data rows under the header")


def _save(fig, out) -> None:
    fig.savefig(out, dpi=150, metadata={"Software": "svloc-figures"})
    plt.close(fig)


def render_heatmap(spec: PlotSpec) -> None:
    table = read_table(spec.inputs[0])
    _require(table, ("x_m", "y_m", "median_err_m"), spec.inputs[0])
    x, y = table.column("x_m"), table.column("y_m")
    err_cm = table.column("median_err_m") * 100.0
    xs, ys = np.unique(x), np.unique(y)
    grid = np.full((len(ys), len(xs)), np.nan)
    ix = np.searchsorted(xs, x)
    iy = np.searchsorted(ys, y)
    grid[iy, ix] = err_cm
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(grid, origin="lower", cmap="viridis",
                   extent=(xs.min(), xs.max(), ys.min(), ys.max()),
                   aspect="equal")
    fig.colorbar(im, ax=ax, label="median error (cm)")
    ax.set_xlabel(spec.xlabel or "x (m)")
    ax.set_ylabel(spec.ylabel or "y (m)")
    ax.set_title(spec.title or table.meta.get("scenario", ""))
    _save(fig, spec.out)


def render_lines(spec: PlotSpec) -> None:
    table = read_table(spec.inputs[0])
    _require(table, ("sigma_theta_deg", "sigma_t_ps", "median_err_m"),
             spec.inputs[0])
    st = table.column("sigma_t_ps")
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    for val in np.unique(st):
        sel = st == val
        x = table.column("sigma_theta_deg")[sel]
        y = table.column("median_err_m")[sel] * 100.0
        order = np.argsort(x)
        ax.plot(x[order], y[order], marker="o", label=f"{val:g} ps")
    ax.set_xlabel(spec.xlabel or "phase error std (deg)")
    ax.set_ylabel(spec.ylabel or "median error (cm)")
    ax.set_yscale("log")
    ax.legend(title="time error std", fontsize=8)
    ax.grid(True, alpha=0.3)
    ax.set_title(spec.title)
    _save(fig, spec.out)


def render_cdf(spec: PlotSpec) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for k, path in enumerate(spec.inputs):
        table = read_table(path)
        err_col = next((c for c in ("err_m", "median_err_m")
                        if c in table.columns), None)
        if err_col is None:
            raise SchemaError(f"{path}: need an err_m or median_err_m column; "
                              f"found {list(table.columns)}")
        if not table.rows:
            raise SchemaError(f"{path}: no data rows under the header")
        vals = np.sort(table.column(err_col) * 100.0)
        cdf = np.arange(1, len(vals) + 1) / len(vals)
        label = spec.labels[k] if k < len(spec.labels) \
            else table.meta.get("scenario", Path(path).stem)
        ax.plot(vals, cdf, label=label)
    ax.set_xlabel(spec.xlabel or "error (cm)")
    ax.set_ylabel(spec.ylabel or "CDF")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    ax.set_title(spec.title)
    _save(fig, spec.out)


def render_bars(spec: PlotSpec) -> None:
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    width = 0.8 / len(spec.inputs)
    for k, path in enumerate(spec.inputs):
        table = read_table(path)
        _require(table, ("tag_id", "ratio"), path)
        tags = table.column("tag_id")
        ratio = table.column("ratio")
        label = spec.labels[k] if k < len(spec.labels) \
            else table.meta.get("mode", Path(path).stem)
        ax.bar(tags + (k - (len(spec.inputs) - 1) / 2) * width, ratio,
               width=width, label=label)
    ax.set_xlabel(spec.xlabel or "tag")
    ax.set_ylabel(spec.ylabel or "packet success ratio")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title(spec.title)
    _save(fig, spec.out)


def render_timeseries(spec: PlotSpec) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for k, path in enumerate(spec.inputs):
        table = read_table(path)
        _require(table, ("window_start_s", "tag_id", "ratio"), path)
        t = table.column("window_start_s")
        tag = table.column("tag_id")
        ratio = table.column("ratio")
        base = spec.labels[k] if k < len(spec.labels) \
            else table.meta.get("mode", Path(path).stem)
        # highlight the best and worst tags of each run
        per_tag = {int(g): ratio[tag == g].mean() for g in np.unique(tag)}
        chosen = [min(per_tag, key=per_tag.get), max(per_tag, key=per_tag.get)]
        for g in chosen:
            sel = tag == g
            order = np.argsort(t[sel])
            ax.plot(t[sel][order], ratio[sel][order], marker=".",
                    label=f"{base} tag {g}")
    ax.set_xlabel(spec.xlabel or "time (s)")
    ax.set_ylabel(spec.ylabel or "packet success ratio")
    ax.set_ylim(-0.02, 1.05)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    ax.set_title(spec.title)
    _save(fig, spec.out)


RENDERERS = {
    "heatmap": render_heatmap,
    "lines": render_lines,
    "cdf": render_cdf,
    "bars": render_bars,
    "timeseries": render_timeseries,
}


def render(spec: PlotSpec) -> None:
    """Validate inputs and write the figure for `spec` (raster image)."""
    for path in spec.inputs:
        if not Path(path).exists():
            raise SchemaError(f"input {path} does not exist")
    RENDERERS[spec.kind](spec)
