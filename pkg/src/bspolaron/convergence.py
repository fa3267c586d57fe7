"""Cutoff ladders, asymptotic fits and the scheme-independence comparison.

The N = 2, Q = 0 ground energy of the regularized Hamiltonian approaches its
limit as c/Lambda for sharp cutoffs (the hard edge of the ball) and as
(a + b log Lambda)/Lambda^2 for the gaussian scheme.  Limits are read off by
least squares with those asymptotic bases; the spread between fits on the
full ladder and with the first rung dropped is reported as an uncertainty.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .fock import angel_function, pair_ground_energy
from .lattice import ModelParams, make_scheme
from .renorm import mu_tau

DEFAULT_LADDERS = {
    "sharp": (16.0, 20.0, 24.0, 28.0, 32.0, 40.0, 48.0, 56.0, 64.0),
    "gaussian": (8.0, 10.0, 12.0, 14.0, 16.0),
    "beta_only": (8.0, 10.0, 12.0, 14.0, 16.0, 20.0, 24.0, 28.0, 32.0),
}
AGREEMENT_TOL = 1e-3


def _basis(kind: str, radii: np.ndarray) -> np.ndarray:
    r = np.asarray(radii, dtype=float)
    one = np.ones_like(r)
    if kind == "gaussian":
        cols = [one, r ** -2, np.log(r) * r ** -2, r ** -3]
    else:
        cols = [one, 1.0 / r, r ** -2]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class LimitFit:
    kind: str
    limit: Optional[float]
    spread: Optional[float]
    decay_exponent: Optional[float]
    n_rungs: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def decay_exponent(radii: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Slope of log|successive difference| against log radius."""
    r, v = np.asarray(radii, float), np.asarray(values, float)
    if len(r) < 3:
        return None
    d = np.abs(np.diff(v)) / np.diff(r)
    mid = np.sqrt(r[1:] * r[:-1])
    ok = d > 0
    if ok.sum() < 2:
        return None
    slope = np.polyfit(np.log(mid[ok]), np.log(d[ok]), 1)[0]
    # differences of c r^-p scale like r^-(p+1)
    return float(-slope - 1.0)


def fit_limit(kind: str, radii: Sequence[float], values: Sequence[float]) -> LimitFit:
    r, v = np.asarray(radii, float), np.asarray(values, float)
    nb = _basis(kind, r[:1]).shape[1]
    if len(r) < nb:
        return LimitFit(kind, None, None, decay_exponent(r, v), len(r))
    full = np.linalg.lstsq(_basis(kind, r), v, rcond=None)[0][0]
    spread = None
    if len(r) > nb:
        short = np.linalg.lstsq(_basis(kind, r[1:]), v[1:], rcond=None)[0][0]
        spread = float(abs(full - short))
    return LimitFit(kind, float(full), spread, decay_exponent(r, v), len(r))


@dataclass(frozen=True)
class LadderRow:
    kind: str
    radius: float
    energy: float
    seconds: float


def ground_energy_ladder(params: ModelParams, kind: str, radii: Sequence[float]) -> List[LadderRow]:
    """Symmetric N = 2, Q = 0 ground energies along a cutoff ladder (radii in kappa)."""
    rows = []
    for r in radii:
        t0 = time.perf_counter()
        e = pair_ground_energy(make_scheme(kind, r * params.kappa, params), params)
        rows.append(LadderRow(kind, float(r), e, time.perf_counter() - t0))
    return rows


@dataclass(frozen=True)
class SchemeComparison:
    fits: Dict[str, LimitFit]
    discrepancy: Optional[float]

    @property
    def agree(self) -> bool:
        return self.discrepancy is not None and self.discrepancy <= AGREEMENT_TOL


def compare_schemes(ladders: Dict[str, List[LadderRow]]) -> SchemeComparison:
    fits = {k: fit_limit(k, [r.radius for r in rows], [r.energy for r in rows])
            for k, rows in ladders.items()}
    limits = [f.limit for f in fits.values() if f.limit is not None]
    disc = float(max(limits) - min(limits)) if len(limits) >= 2 else None
    return SchemeComparison(fits, disc)


def mu_tau_ladder(params: ModelParams, kind: str, radii: Sequence[float], tau: float,
                  q=(0, 0), p2: float = 0.0) -> List[tuple]:
    """(radius, mu_{tau,n}(q, P^2)) for the finite-cutoff phi0 eigenvalue."""
    out = []
    for r in radii:
        scheme = make_scheme(kind, r * params.kappa, params)
        out.append((float(r), angel_function(scheme, params, tau - p2, q)))
    return out


def mu_tau_comparison(params: ModelParams, radii: Dict[str, Sequence[float]], tau: float,
                      q=(0, 0), p2: float = 0.0) -> dict:
    """Extrapolated mu_{tau,n} per scheme against the renormalized mu_tau."""
    ref = mu_tau(params, tau, q, p2)
    fits = {}
    for kind, rr in radii.items():
        lad = mu_tau_ladder(params, kind, rr, tau, q, p2)
        fits[kind] = fit_limit(kind, [a for a, _ in lad], [b for _, b in lad])
    worst = max(abs(f.limit - ref.value) for f in fits.values() if f.limit is not None)
    return {"reference": ref, "fits": fits, "max_deviation": float(worst)}
