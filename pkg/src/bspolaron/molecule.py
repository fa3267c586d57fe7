"""Molecule secular problem and the polaron-molecule crossover.

The trial state m_0^*|FS> + sum gamma_{Kq} m_{q-K}^* a_K^* a_q |FS> turns the
form of phi(E) into scalar + 2 l.gamma + gamma^T A gamma with real symmetric A.
Stationarity is A gamma = -l; closing with the form's zero gives the scalar
equation G_mu(E_mu - E, 0) + l.gamma = 0 whose root is E_M.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy import optimize

from .lattice import FermiSea, ModelParams, fermi_sea
from .polaron import solve_polaron
from .renorm import MoleculeForm, WindowError, phi_limit_molecule_form

DIRECT_LIMIT = 4096
K_CAP_LADDER = (4.0, 8.0, 16.0)     # in units of kappa
LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6
GRID_PER_DECADE = 8
COND_LIMIT = 1e13


class StationarityError(ValueError):
    pass


def _linear_vector(form: MoleculeForm) -> np.ndarray:
    return np.repeat(form.linear, len(form.q_momenta))


def assemble_molecule_system(params: ModelParams, energy: float, k_cap: float,
                             sea: Optional[FermiSea] = None, form: Optional[MoleculeForm] = None):
    """Stationarity system A gamma = rhs, unknowns ordered (K outer, q inner).

    Returns (A, rhs, form).
    """
    form = form if form is not None else phi_limit_molecule_form(params, energy, k_cap, sea)
    nk, nq = form.diag.shape
    a = np.zeros((nk, nq, nk, nq))
    # exchange couples (K,q) with (L,q)
    for iq in range(nq):
        a[:, iq, :, iq] += form.exchange[iq]
    # hole exchange couples (K,q) with (K,p)
    for ik in range(nk):
        a[ik, :, ik, :] += form.hole[ik]
    a = a.reshape(nk * nq, nk * nq)
    a[np.diag_indices(nk * nq)] += form.diag.ravel()
    return a, -_linear_vector(form), form


def _solve(a: np.ndarray, rhs: np.ndarray, energy: float) -> np.ndarray:
    n = len(rhs)
    if n <= DIRECT_LIMIT:
        try:
            lu, piv, x, info = sla.lapack.dsysv(a, rhs)
        except Exception as exc:  # pragma: no cover - lapack failure
            raise StationarityError(f"stationarity degenerate at E={energy!r}") from exc
        if info != 0 or not np.all(np.isfinite(x)):
            raise StationarityError(f"stationarity degenerate at E={energy!r}")
        if np.linalg.cond(a) > COND_LIMIT:
            raise StationarityError(f"stationarity degenerate at E={energy!r}")
        return x
    x, info = spla.minres(a, rhs, rtol=1e-14, maxiter=20 * n)
    if info != 0:
        raise StationarityError(f"stationarity degenerate at E={energy!r}")
    return x


@dataclass(frozen=True)
class MoleculeState:
    energy: float
    gamma: np.ndarray
    form: MoleculeForm
    stationarity_residual: float
    scalar_residual: float      # signed G_mu(E_mu - E, 0) + l.gamma


def molecule_state(params: ModelParams, energy: float, k_cap: float,
                   sea: Optional[FermiSea] = None) -> MoleculeState:
    a, rhs, form = assemble_molecule_system(params, energy, k_cap, sea)
    gamma = _solve(a, rhs, energy)
    stat = float(np.max(np.abs(a @ gamma - rhs)))
    scalar = form.scalar + float(_linear_vector(form) @ gamma)
    return MoleculeState(energy, gamma.reshape(form.diag.shape), form, stat, scalar)


def molecule_scalar_residual(params: ModelParams, energy: float, k_cap: float,
                             sea: Optional[FermiSea] = None) -> float:
    """G_mu(E_mu - E, 0) + sum gamma_{Kq}(E) / ((1+1/M)K^2 + E_mu - E)."""
    return molecule_state(params, energy, k_cap, sea).scalar_residual


@dataclass(frozen=True)
class MoleculeSolution:
    e_molecule: Optional[float]
    k_cap: float
    stationarity_residual: float
    scalar_residual: float
    form_value: float
    k_momenta: np.ndarray
    q_momenta: np.ndarray
    gamma: np.ndarray
    roots: List[float] = field(default_factory=list)
    ladder: List[tuple] = field(default_factory=list)     # (k_cap, E_M)
    extrapolated: Optional[float] = None
    message: str = ""

    @property
    def found(self) -> bool:
        return self.e_molecule is not None

    def to_json(self) -> dict:
        gam = []
        for ik, k in enumerate(self.k_momenta):
            for iq, q in enumerate(self.q_momenta):
                gam.append([int(k[0]), int(k[1]), int(q[0]), int(q[1]), float(self.gamma[ik, iq])])
        return {
            "e_molecule": self.e_molecule,
            "k_cap": self.k_cap,
            "stationarity_residual": self.stationarity_residual,
            "scalar_residual": self.scalar_residual,
            "form_value": self.form_value,
            "roots": list(self.roots),
            "ladder": [[float(k), e] for k, e in self.ladder],
            "extrapolated": self.extrapolated,
            "message": self.message,
            "gamma": gam,
        }


def _residual_or_nan(params, energy, k_cap, sea):
    try:
        return molecule_scalar_residual(params, energy, k_cap, sea)
    except StationarityError:
        return float("nan")


def _solve_single(params: ModelParams, k_cap: float, xtol: float) -> MoleculeSolution:
    sea = fermi_sea(params)
    k2 = params.kappa ** 2
    e_mu = sea.e_mu
    lams = np.geomspace(LAMBDA_MIN * k2, LAMBDA_MAX * k2,
                        int(round(GRID_PER_DECADE * np.log10(LAMBDA_MAX / LAMBDA_MIN))) + 1)
    energies = e_mu - lams[::-1]          # ascending in E, all below E_mu
    vals = np.array([_residual_or_nan(params, e, k_cap, sea) for e in energies])
    roots = []
    for i in range(len(energies) - 1):
        y0, y1 = vals[i], vals[i + 1]
        if not (np.isfinite(y0) and np.isfinite(y1)) or np.sign(y0) == np.sign(y1):
            continue
        try:
            r = optimize.brentq(lambda e: molecule_scalar_residual(params, e, k_cap, sea),
                                energies[i], energies[i + 1], xtol=xtol * k2,
                                rtol=4 * np.finfo(float).eps, maxiter=500)
        except StationarityError:
            continue
        st = molecule_state(params, r, k_cap, sea)
        # a sign change through a pole of the residual is not a root
        if abs(st.scalar_residual) <= 1e-6 * max(1.0, abs(y0), abs(y1)):
            if not roots or abs(r - roots[-1]) > 1e-9 * max(1.0, abs(r)):
                roots.append(float(r))
    if not roots:
        form = phi_limit_molecule_form(params, energies[-1], k_cap, sea)
        return MoleculeSolution(None, k_cap, float("nan"), float("nan"), float("nan"),
                                form.k_momenta, form.q_momenta, np.zeros(form.diag.shape),
                                message="no molecule solution in window")
    e_m = min(roots)
    st = molecule_state(params, e_m, k_cap, sea)
    return MoleculeSolution(e_m, k_cap, st.stationarity_residual, abs(st.scalar_residual),
                            st.form.value(st.gamma), st.form.k_momenta, st.form.q_momenta,
                            st.gamma, roots=roots)


def richardson(caps: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Three-point extrapolation assuming a power law in the cap; None if not monotone."""
    if len(values) < 3:
        return None
    (c0, c1, c2), (e0, e1, e2) = caps[-3:], values[-3:]
    d1, d2 = e0 - e1, e1 - e2
    if d1 == 0 or d2 == 0 or np.sign(d1) != np.sign(d2) or abs(d2) >= abs(d1):
        return None
    if not (np.isclose(c1 / c0, c2 / c1)):
        return None
    ratio = c1 / c0
    p = np.log(d1 / d2) / np.log(ratio)
    return float(e2 - d2 / (ratio ** p - 1.0))


def solve_molecule(params: ModelParams, k_cap: Optional[float] = None,
                   ladder: Optional[Sequence[float]] = None, xtol: float = 1e-9) -> MoleculeSolution:
    """Lowest root of the scalar residual below E_mu; optional K_cap ladder.

    ``k_cap`` and ``ladder`` are in units of kappa.  With a ladder the returned
    record is the largest cap's solution carrying the ladder and extrapolation.
    """
    if params.fermi_energy < 0:
        raise ValueError("the molecule needs mu >= 0")
    if ladder is None:
        ladder = [k_cap if k_cap is not None else K_CAP_LADDER[-1]]
    caps = sorted(float(c) for c in ladder)
    sols = [_solve_single(params, c * params.kappa, xtol) for c in caps]
    last = sols[-1]
    found = [(c, s.e_molecule) for c, s in zip(caps, sols) if s.found]
    extra = richardson([c for c, _ in found], [e for _, e in found]) if len(found) == len(caps) else None
    return MoleculeSolution(last.e_molecule, caps[-1], last.stationarity_residual, last.scalar_residual,
                            last.form_value, last.k_momenta, last.q_momenta, last.gamma,
                            roots=last.roots, ladder=found, extrapolated=extra, message=last.message)


CROSSOVER_COLUMNS = ("e_b", "e_polaron", "e_molecule", "e_molecule_minus_mu", "winner",
                     "polaron_residual", "molecule_stationarity_residual",
                     "molecule_scalar_residual", "k_cap", "flag")


def crossover_sweep(params: ModelParams, e_b_grid: Sequence[float], k_cap: float = K_CAP_LADDER[-1]):
    """Rows (E_B, E_P, E_M, E_M - mu, winner, residuals...) in grid order.

    Per-row failures are recorded in the ``flag`` column and the sweep goes on.
    """
    rows = []
    mu = params.fermi_energy
    for e_b in e_b_grid:
        p = params.with_(binding_energy=float(e_b))
        row = dict.fromkeys(CROSSOVER_COLUMNS, "")
        row.update(e_b=float(e_b), k_cap=float(k_cap))
        flags = []
        try:
            pol = solve_polaron(p)
            row.update(e_polaron=pol.e_polaron, polaron_residual=pol.residual)
        except (ValueError, WindowError) as exc:
            flags.append(f"polaron failed: {exc}")
            pol = None
        try:
            mol = solve_molecule(p, k_cap=k_cap)
        except (ValueError, WindowError) as exc:
            flags.append(f"molecule failed: {exc}")
            mol = None
        if mol is not None and mol.found:
            row.update(e_molecule=mol.e_molecule, e_molecule_minus_mu=mol.e_molecule - mu,
                       molecule_stationarity_residual=mol.stationarity_residual,
                       molecule_scalar_residual=mol.scalar_residual)
        elif mol is not None:
            flags.append(mol.message)
        if pol is not None and mol is not None and mol.found:
            row["winner"] = "polaron" if pol.e_polaron < mol.e_molecule - mu else "molecule"
        elif pol is not None:
            row["winner"] = "polaron"
            flags.append("only the polaron bound exists")
        row["flag"] = "; ".join(flags)
        rows.append(row)
    return rows
