"""A single particle with a renormalized point interaction in the periodic box.

H_n = -Laplace - g_n |eta_n><eta_n| with eta_n the indicator of the cutoff ball
and 1/g_n = sum_{|k| <= n} 1/(k^2 - E_B), so E_B is an eigenvalue at every
cutoff with eigenvector (k^2 - E_B)^-1.  The limit Birman-Schwinger function
is phi(z) = sum_k [1/(k^2 - E_B) - 1/(k^2 - z)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import schur
from .lattice import ModelParams, enumerate_ball, kinetic, tail_corrected_sum, TWO_PI
from .renorm import DEFAULT_INNER_RADIUS, RenormSum, generic_sum


def phi_delta(params: ModelParams, z: float, inner_radius: float = None) -> RenormSum:
    """Tail-corrected sum_k [1/(k^2 - E_B) - 1/(k^2 - z)] for z < 0."""
    if not z < 0:
        raise ValueError("phi_delta needs z < 0")
    radius = inner_radius if inner_radius is not None else DEFAULT_INNER_RADIUS * params.kappa
    return generic_sum(1.0, -params.binding_energy, -z, params.kappa, radius)


def delta_model(params: ModelParams, cutoff_radius: float) -> schur.BsModel:
    """Rank-one model on the momentum ball |k| <= cutoff_radius."""
    modes = enumerate_ball(params, cutoff_radius)
    h0 = kinetic(modes, params.kappa)
    ginv = float(math.fsum(1.0 / (h0 - params.binding_energy)))
    return schur.rank_one_model(h0, np.ones(len(h0)), 1.0 / ginv)


def eta_norm(params: ModelParams) -> RenormSum:
    """sqrt of sum_k (k^2 - E_B)^-2 over the whole lattice."""
    b = -params.binding_energy
    res = tail_corrected_sum(
        lambda n: 1.0 / (kinetic(n, params.kappa) + b) ** 2,
        DEFAULT_INNER_RADIUS * params.kappa, params.kappa,
        majorant=lambda t: 1.0 / (t * t + b) ** 2,
        radial_average=lambda r: TWO_PI / (r * r + b) ** 2)
    return RenormSum(math.sqrt(res.value), res.error_bound / (2 * math.sqrt(res.value)), res.inner_radius)


@dataclass(frozen=True)
class DeltaReport:
    cutoff_radius: float
    dim: int
    ground_energy: float
    energy_error: float
    eigvec_residual: float
    phi_at_eb: float
    resolvent_error: float
    limit_distance: float       # |v_n - eta/|eta|| with v_n padded by zeros

    def to_json(self) -> dict:
        return dict(self.__dict__)


def delta_ground_state_check(params: ModelParams, cutoff_radius: float, z: float = None) -> DeltaReport:
    model = delta_model(params, cutoff_radius)
    h0 = model.h0_diag
    rep = schur.spectral_report(model.hamiltonian())
    e0 = float(rep.energies[0])
    v = np.real_if_close(rep.vectors[:, 0])
    target = 1.0 / (h0 - params.binding_energy)
    target /= np.linalg.norm(target)
    v = v * np.sign(v @ target)
    phi_eb = float(schur.phi_of_z(model, params.binding_energy)[0, 0].real)
    z = z if z is not None else params.binding_energy - 1.0
    r_direct = schur.direct_resolvent(model, z)
    r_krein = schur.krein_resolvent(model, z)
    res_err = float(np.max(np.abs(r_direct - r_krein)) / max(1.0, np.max(np.abs(r_direct))))
    n_n = math.sqrt(math.fsum(1.0 / (h0 - params.binding_energy) ** 2))
    ratio = min(1.0, n_n / eta_norm(params).value)
    return DeltaReport(cutoff_radius, model.dim, e0, abs(e0 - params.binding_energy),
                       float(np.linalg.norm(v - target)), phi_eb, res_err,
                       math.sqrt(2.0 * (1.0 - ratio)))


def delta_ladder(params: ModelParams, radii: Sequence[float]) -> List[DeltaReport]:
    return [delta_ground_state_check(params, r) for r in radii]
