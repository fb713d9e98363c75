"""Matplotlib rendering of study reports to files, next to the CSV output."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _numeric_columns(report):
    cols = {}
    for row in report.rows:
        for key, val in row.items():
            if isinstance(val, (int, float)) and np.isfinite(val):
                cols.setdefault(key, 0)
                cols[key] += 1
    return [c for c, count in cols.items() if count >= 2]


def render_report(report, path):
    """Render one figure per report: rate plots for fitted studies, ratio
    plots otherwise.  Returns the path on success, None if there was nothing
    to draw."""
    numeric = _numeric_columns(report)
    param = report.parameter
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    drawn = False

    if report.fits and param in numeric:
        # log-log rate plot against the parameter column
        ycols = [c for c in numeric if c not in (param,) and
                 all(row.get(c, 0) > 0 for row in report.rows if c in row)]
        xs = np.array([row[param] for row in report.rows if param in row], dtype=float)
        for c in ycols[:4]:
            ys = np.array([row.get(c, np.nan) for row in report.rows
                           if param in row], dtype=float)
            good = np.isfinite(ys) & (ys > 0) & (xs > 0)
            if good.sum() >= 2:
                ax.loglog(xs[good], ys[good], "o-", label=c)
                drawn = True
        title = "; ".join(f"{k}: slope {fit.slope:.3f}" for k, fit in
                          sorted(report.fits.items()))
        ax.set_title(f"{report.name}\n{title}", fontsize=9)
        ax.set_xlabel(param)
    else:
        idx = np.arange(len(report.rows))
        for c in numeric[:4]:
            if c == param:
                continue
            ys = np.array([row.get(c, np.nan) for row in report.rows], dtype=float)
            if np.isfinite(ys).sum() >= 2:
                ax.plot(idx, ys, "o-", label=c)
                drawn = True
        ax.set_title(report.name, fontsize=9)
        ax.set_xlabel(f"row ({param})")

    if not drawn:
        plt.close(fig)
        return None
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
