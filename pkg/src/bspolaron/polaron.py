"""Polaron secular problem in the limit Birman-Schwinger form.

On the trial block spanned by m_q^* a_q |FS_mu>, q^2 <= mu, the form of
phi(E_mu - lam) is the matrix P(lam) = T(lam) - |xi><xi|/lam with T diagonal,
T_qq = G_mu(lam - q^2, q), and xi the all-ones vector.  The polaron energy is
E_P = E_mu - lam* with lam* the largest zero of mu_1(P(lam)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import optimize

from .lattice import FermiSea, ModelParams, fermi_sea, kinetic
from .renorm import g_mu_batch

LAMBDA_MIN = 1e-6       # in units of kappa^2
LAMBDA_MAX = 1e6
GRID_PER_DECADE = 8
DEGENERACY_TOL = 1e-10


def t_lambda(params: ModelParams, lam: float, sea: Optional[FermiSea] = None):
    """Diagonal of T(lam) and its certified errors, in Fermi-sea order."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    sea = sea if sea is not None else fermi_sea(params)
    return g_mu_batch(params, lam - kinetic(sea.occupied, params.kappa), sea.occupied)


def p_lambda(params: ModelParams, lam: float, sea: Optional[FermiSea] = None) -> np.ndarray:
    """P(lam) = T(lam) - (1/lam) |xi><xi|, a real symmetric N_mu x N_mu matrix."""
    diag, _ = t_lambda(params, lam, sea)
    return np.diag(diag) - np.ones((diag.size, diag.size)) / lam


def mu1(params: ModelParams, lam: float, sea: Optional[FermiSea] = None) -> float:
    return float(np.linalg.eigvalsh(p_lambda(params, lam, sea))[0])


def chevy_residual(params: ModelParams, lam: float, sea: Optional[FermiSea] = None,
                   zero_tol: float = 1e-12) -> float:
    """lam - sum_q G_mu(lam - q^2, q)^-1."""
    diag, _ = t_lambda(params, lam, sea)
    if np.any(np.abs(diag) <= zero_tol):
        raise ValueError("polaron equation undefined: a diagonal G_mu vanishes")
    return float(lam - np.sum(1.0 / diag))


@dataclass(frozen=True)
class PolaronSolution:
    lambda_star: float
    e_polaron: float
    residual: float
    mu1_check: float
    kernel_residual: float
    coefficients: np.ndarray        # alpha_q = G_mu(lam* - q^2, q)^-1
    momenta: np.ndarray
    g_error: float                  # largest certified error of the G_mu entries
    sign_changes: List[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "e_polaron": self.e_polaron,
            "residual": self.residual,
            "mu1_check": self.mu1_check,
            "kernel_residual": self.kernel_residual,
            "g_error_bound": self.g_error,
            "sign_changes": list(self.sign_changes),
            "coefficients": [[int(q[0]), int(q[1]), float(c)]
                             for q, c in zip(self.momenta, self.coefficients)],
        }


def _sign_census(params, sea, grid):
    vals = np.array([mu1(params, lam, sea) for lam in grid])
    flips = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    return vals, flips


def solve_polaron(params: ModelParams, xtol: float = 1e-13) -> PolaronSolution:
    """Largest lam with mu_1(P(lam)) = 0, and the optimal trial coefficients."""
    if params.fermi_energy < 0:
        raise ValueError("the polaron needs mu >= 0")
    sea = fermi_sea(params)
    k2 = params.kappa ** 2
    lo, hi = LAMBDA_MIN * k2, LAMBDA_MAX * k2
    for _ in range(6):
        n = int(round(GRID_PER_DECADE * np.log10(hi / lo))) + 1
        grid = np.geomspace(lo, hi, n)
        vals, flips = _sign_census(params, sea, grid)
        if flips.size and vals[-1] > 0:
            break
        lo, hi = lo / 100.0, hi * 100.0
    else:
        sample = ", ".join(f"({x:.3g}, {y:.3g})" for x, y in zip(grid[::8], vals[::8]))
        raise ValueError(f"no sign change of mu_1(P) bracketed; samples: {sample}")
    changes = []
    for i in flips:
        root = optimize.brentq(lambda x: mu1(params, x, sea), grid[i], grid[i + 1],
                               xtol=xtol * k2, rtol=4 * np.finfo(float).eps, maxiter=500)
        if not changes or abs(root - changes[-1]) > 1e-9 * max(1.0, root):
            changes.append(float(root))
    lam = max(changes)
    diag, err = t_lambda(params, lam, sea)
    coef = 1.0 / diag
    p = np.diag(diag) - np.ones((diag.size, diag.size)) / lam
    ker = float(np.linalg.norm(p @ coef) / np.linalg.norm(coef))
    return PolaronSolution(
        lambda_star=lam, e_polaron=sea.e_mu - lam,
        residual=abs(lam - float(np.sum(coef))),
        mu1_check=float(np.linalg.eigvalsh(p)[0]),
        kernel_residual=ker, coefficients=coef, momenta=sea.occupied,
        g_error=float(np.max(err)), sign_changes=changes)


@dataclass(frozen=True)
class InterlacingReport:
    lam: float
    t_eigs: np.ndarray
    p_eigs: np.ndarray
    chain_ok: bool
    strict_first: bool
    multiplicities: List[int]

    @property
    def ok(self) -> bool:
        return self.chain_ok and self.strict_first


def interlacing_report(params: ModelParams, lam: float, tol: float = 1e-12,
                       sea: Optional[FermiSea] = None) -> InterlacingReport:
    """mu_{l-1}(T) <= mu_l(P) <= mu_l(T) for l >= 2 and mu_1(P) < mu_1(T)."""
    diag, _ = t_lambda(params, lam, sea)
    t = np.sort(diag)
    p = np.linalg.eigvalsh(np.diag(diag) - np.ones((diag.size, diag.size)) / lam)
    scale = tol * max(1.0, float(np.max(np.abs(t))))
    chain = bool(np.all(t[:-1] <= p[1:] + scale) and np.all(p[1:] <= t[1:] + scale))
    mult, run = [], 1
    for a, b in zip(t[:-1], t[1:]):
        if abs(b - a) <= DEGENERACY_TOL * max(1.0, abs(a)):
            run += 1
        else:
            mult.append(run)
            run = 1
    mult.append(run)
    return InterlacingReport(lam, t, p, chain, bool(p[0] < t[0]), mult)


def finite_cutoff_polaron_energy(scheme, params: ModelParams) -> float:
    """Polaron bound of the regularized model: zero of mu_1 on the trial block of phi_n.

    Uses the same angel sector as the exact ground energy, so by the variational
    principle for phi_n the result is never below that ground energy.
    """
    from . import fock
    sea = fermi_sea(params)
    if sea.n_mu == 0:
        raise ValueError("empty Fermi sea")
    angel = fock.build_sector(params, sea.n_mu - 1, fock.ANGEL, scheme.support_radius,
                              tuple(int(x) for x in sea.occupied.sum(axis=0)))
    phi = fock.NormalOrderedPhi(scheme, params, angel)
    w = fock.fermi_sea_trial_vectors(params, angel, sea.occupied)
    return fock.bs_ground_energy(scheme, params, sea.n_mu, phi=fock.ProjectedPhi(phi, w))
