"""Render spectrum, compensated, ratio, and bracket figures from CSV tables.

Input schemas (produced by the tracerlab CLI):

  report CSV   kappa,observed_mean,observed_var,stderr,predicted_main,
               remainder_bound,variance_bound,energy_mean,ratio
  bracket CSV  kx,ky,kz,a,chi,bracket_series,bracket_quadrature,abs_diff

The ``compensated`` kind multiplies the observed dyad means by
kappa^(-exponent); when no exponent is given, the least-squares log-log slope
of the data is used, so an exact power law plots as a flat line.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.4, 4.2)
DPI = 130

KINDS = ("spectrum", "compensated", "ratio", "bracket")

_REQUIRED = {
    "spectrum": ("kappa", "observed_mean", "stderr", "predicted_main"),
    "compensated": ("kappa", "observed_mean"),
    "ratio": ("kappa", "ratio"),
    "bracket": ("a", "chi", "bracket_series", "bracket_quadrature"),
}


class SchemaError(ValueError):
    """Input CSV is missing required columns or holds no data rows."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    csv_path: str
    out_path: str
    exponent: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"figure kind must be one of {KINDS}, got {self.kind!r}")


def read_table(path, required):
    """Column arrays from a CSV; raises SchemaError on missing columns/rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        missing = [c for c in required if c not in names]
        if missing:
            raise SchemaError(
                f"{path}: missing required columns {', '.join(missing)}", missing
            )
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    table = {}
    for col in required:
        table[col] = np.array([float(row[col]) for row in rows])
    return table


def _positive(values, what):
    if np.any(values <= 0.0):
        raise SchemaError(f"{what} values must be positive for log-log plotting")


def render(spec: FigureSpec) -> str:
    """Write the figure described by ``spec``; returns the output path."""
    table = read_table(spec.csv_path, _REQUIRED[spec.kind])
    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    try:
        if spec.kind == "spectrum":
            _plot_spectrum(ax, table)
        elif spec.kind == "compensated":
            _plot_compensated(ax, table, spec.exponent)
        elif spec.kind == "ratio":
            _plot_ratio(ax, table)
        else:
            _plot_bracket(ax, table)
        fig.tight_layout()
        fig.savefig(spec.out_path)
    finally:
        plt.close(fig)
    return spec.out_path


def _plot_spectrum(ax, t):
    _positive(t["kappa"], "kappa")
    ax.errorbar(
        t["kappa"],
        t["observed_mean"],
        yerr=t["stderr"],
        fmt="o",
        capsize=3,
        label="ensemble mean",
    )
    ax.loglog(t["kappa"], t["predicted_main"], "k--", label="main-term prediction")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"$\kappa$")
    ax.set_ylabel(r"$\|P_{\kappa,2\kappa}\vartheta\|^2$")
    ax.set_title("Dyadic tracer spectrum")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)


def fitted_exponent(kappa, values):
    _positive(values, "observed_mean")
    slope, _ = np.polyfit(np.log(kappa), np.log(values), 1)
    return float(slope)


def _plot_compensated(ax, t, exponent):
    _positive(t["kappa"], "kappa")
    if exponent is None:
        exponent = fitted_exponent(t["kappa"], t["observed_mean"])
    comp = t["observed_mean"] * t["kappa"] ** (-exponent)
    ax.semilogx(t["kappa"], comp, "o-")
    ax.axhline(comp.mean(), color="k", linestyle=":", alpha=0.6)
    ax.set_xlabel(r"$\kappa$")
    ax.set_ylabel(rf"value $\times\ \kappa^{{{-exponent:.3f}}}$")
    ax.set_title("Compensated spectrum (flat = pure power law)")
    ax.grid(True, which="both", alpha=0.3)


def _plot_ratio(ax, t):
    _positive(t["kappa"], "kappa")
    _positive(t["ratio"], "ratio")
    ax.loglog(t["kappa"], t["ratio"], "o-", label="tracer/energy dyad ratio")
    anchor = t["ratio"][0] * t["kappa"][0] ** 4
    ax.loglog(
        t["kappa"], anchor * t["kappa"] ** -4.0, "k--", label=r"$\kappa^{-4}$ reference"
    )
    ax.set_xlabel(r"$\kappa$")
    ax.set_ylabel("ratio")
    ax.set_title("Tracer-to-energy spectral ratio")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)


def _plot_bracket(ax, t):
    x = t["chi"] / t["a"]
    order = np.argsort(x)
    ax.plot(x[order], t["bracket_series"][order], "o-", label="series")
    ax.plot(x[order], t["bracket_quadrature"][order], "s--", label="quadrature")
    ax.set_xlabel(r"$\chi / a$")
    ax.set_ylabel("long-time bracket")
    ax.set_title("Correlation-time bracket: series vs quadrature")
    ax.legend()
    ax.grid(True, alpha=0.3)
