"""Figures for the crossover and convergence reports (Agg backend, PNG)."""

from __future__ import annotations

from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.markersize": 5,
    "savefig.bbox": "tight",
}


def _num(x):
    return float(x) if x not in ("", None) else np.nan


def plot_crossover(rows: Sequence[dict], path: str) -> str:
    """E_P and E_M - mu against |E_B| on a log axis."""
    e_b = np.array([_num(r["e_b"]) for r in rows])
    e_p = np.array([_num(r["e_polaron"]) for r in rows])
    e_m = np.array([_num(r["e_molecule_minus_mu"]) for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(-e_b, e_p, "o-", label=r"polaron $E_P$")
        ok = np.isfinite(e_m)
        ax.plot(-e_b[ok], e_m[ok], "s--", label=r"molecule $E_M-\mu$")
        ax.set_xscale("log")
        ax.set_xlabel(r"$|E_B|\ /\ \kappa^2$")
        ax.set_ylabel(r"energy $/\ \kappa^2$")
        ax.legend()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_convergence(ladders: Dict[str, List], fits: Dict[str, object], path: str) -> str:
    """Ground energy against 1/Lambda per scheme with the extrapolated limits."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, (kind, rows) in enumerate(ladders.items()):
            color = f"C{i}"
            r = np.array([row.radius for row in rows])
            e = np.array([row.energy for row in rows])
            ax.plot(1.0 / r, e, "o-", color=color, label=kind)
            fit = fits.get(kind)
            if fit is not None and fit.limit is not None:
                ax.plot([0.0], [fit.limit], "*", color=color, markersize=10,
                        label=f"{kind} limit {fit.limit:.6f}")
        ax.set_xlim(left=0.0)
        ax.set_xlabel(r"$\kappa/\Lambda$")
        ax.set_ylabel(r"$N=2$ ground energy $/\ \kappa^2$")
        ax.legend()
        fig.savefig(path)
        plt.close(fig)
    return path
