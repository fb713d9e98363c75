"""Study reports: tabular results, log-log rate fits, verdicts, CSV output."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dc_field

import numpy as np


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


@dataclass(frozen=True)
class Verdict:
    name: str
    status: str  # "pass" | "fail" | "inconclusive"
    value: float
    threshold: str  # human-readable statement of what was judged

    @property
    def passed(self):
        return self.status == "pass"


def fit_loglog(x, y):
    """Least-squares slope of log y against log x with its R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return FitResult(float("nan"), float("nan"), 0.0, int(x.size))
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), r2, int(x.size))


def rate_verdict(name, fit, floor, r2_floor=0.98):
    """Pass iff the fitted slope clears the floor on a trustworthy fit.

    A fit with R^2 below the floor is never a pass, only inconclusive.
    """
    if fit.r_squared < r2_floor:
        status = "inconclusive"
    elif fit.slope >= floor:
        status = "pass"
    else:
        status = "fail"
    return Verdict(name, status, fit.slope,
                   f"fitted slope >= {floor} with R^2 >= {r2_floor} "
                   f"(R^2 = {fit.r_squared:.6f})")


def spread_verdict(name, ratios, limit):
    """Pass iff max/min over the finite positive ratios is within ``limit``."""
    vals = np.asarray([r for r in ratios if np.isfinite(r) and r > 0], dtype=float)
    if vals.size == 0:
        return Verdict(name, "inconclusive", float("nan"),
                       f"ratio spread max/min <= {limit} (no finite ratios)")
    spread = float(vals.max() / vals.min())
    return Verdict(name, "pass" if spread <= limit else "fail", spread,
                   f"ratio spread max/min <= {limit}")


@dataclass
class StudyReport:
    """CSV-ready study result: rows, fitted rates, pass/fail verdicts."""

    name: str
    parameter: str
    rows: list
    fits: dict = dc_field(default_factory=dict)
    verdicts: list = dc_field(default_factory=list)
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda row: _sort_key(row.get(self.parameter)))

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)

    @property
    def columns(self):
        cols = []
        for row in self.rows:
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def to_csv_text(self):
        buf = io.StringIO()
        buf.write(f"# study = {self.name}\n")
        for key in sorted(self.metadata):
            buf.write(f"# {key} = {_fmt(self.metadata[key])}\n")
        for key in sorted(self.fits):
            fit = self.fits[key]
            buf.write(f"# fit {key}: slope = {_fmt(fit.slope)}, "
                      f"r_squared = {_fmt(fit.r_squared)}, n = {fit.n_points}\n")
        for v in self.verdicts:
            buf.write(f"# verdict {v.name} = {v.status} "
                      f"(value = {_fmt(v.value)}; threshold: {v.threshold})\n")
        writer = csv.writer(buf, lineterminator="\n")
        cols = self.columns
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c, "")) for c in cols])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())

    def summary_line(self):
        states = ", ".join(f"{v.name}={v.status}" for v in self.verdicts) or "no verdicts"
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({states})"


def _sort_key(value):
    if value is None:
        return (2, 0.0, "")
    if isinstance(value, (int, float, np.floating)):
        return (0, float(value), "")
    return (1, 0.0, str(value))


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)
