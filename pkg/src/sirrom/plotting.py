"""Figure data bundles: one CSV per figure plus a PNG rendered with matplotlib (Agg)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no timestamps or version strings in the PNG so reruns are byte-identical
_PNG_META = {"Software": None}


def write_columns(path, columns: Mapping[str, Sequence]) -> None:
    """CSV with one column per entry; shorter columns are padded with blanks."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    length = max(len(c) for c in cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(length):
            row = []
            for c in cols:
                if k >= len(c):
                    row.append("")
                elif c.dtype.kind in "fc":
                    row.append(repr(float(c[k])))
                else:
                    row.append(str(c[k]))
            w.writerow(row)


def line_figure(path, x, series: Mapping[str, Sequence], *, title: str = "", xlabel: str = "t (days)",
                ylabel: str = "", logy: bool = False, markers: Sequence[str] = (),
                vline: float | None = None) -> None:
    """Render ``series`` against ``x`` into a PNG at ``path``."""
    fig, ax = plt.subplots(figsize=(7, 4), dpi=100)
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        xs = np.asarray(x, dtype=float)[: y.size]
        style = "o" if name in markers else "-"
        ax.plot(xs, y, style, label=name, markersize=3)
    if vline is not None:
        ax.axvline(vline, color="grey", linestyle=":", linewidth=1)
    if logy:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if series:
        ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def bundle(directory, name: str, x, series: Mapping[str, Sequence], *, xname: str = "t",
           **figure_kw) -> list:
    """Write ``<name>.csv`` and ``<name>.png``; returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    csv_path = d / f"{name}.csv"
    png_path = d / f"{name}.png"
    write_columns(csv_path, {xname: x, **series})
    line_figure(png_path, x, series, **figure_kw)
    return [csv_path, png_path]
