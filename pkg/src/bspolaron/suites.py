"""Seeded verification suites shared by the CLI and the test-suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import schur
from .fock import sector_counting
from .lattice import ModelParams, make_scheme


@dataclass
class IdentitySummary:
    n_models: int = 0
    resolvent_max: float = 0.0
    inverse_phi_max: float = 0.0
    factorization_max: float = 0.0
    counting_cases: int = 0
    counting_mismatches: int = 0
    monotone_failures: int = 0
    psd_min: float = np.inf
    failures: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["psd_min"] = None if not np.isfinite(self.psd_min) else self.psd_min
        return out


def _complex_z(rng, model):
    return complex(rng.uniform(-5.0, 15.0), rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 3.0))


def random_identity_suite(seed: int, n_models: int = 100, n_energies: int = 20,
                          max_dim: int = 64) -> IdentitySummary:
    """Schur/Krein identities, counting and monotonicity on random models."""
    rng = np.random.default_rng(seed)
    out = IdentitySummary()
    for i in range(n_models):
        dim = int(rng.integers(2, max_dim + 1))
        aux = int(rng.integers(1, min(dim, 8) + 1))
        model = schur.random_model(rng, dim, aux)
        z = _complex_z(rng, model)
        direct = schur.direct_resolvent(model, z)
        krein = schur.krein_resolvent(model, z)
        res = float(np.max(np.abs(direct - krein)) / max(1.0, np.max(np.abs(direct))))
        inv = schur.inverse_phi_identity_check(model, z)
        fac = max(schur.schur_factorization_check(model, z))
        out.resolvent_max = max(out.resolvent_max, res)
        out.inverse_phi_max = max(out.inverse_phi_max, inv)
        out.factorization_max = max(out.factorization_max, fac)
        h_min = float(np.linalg.eigvalsh(model.hamiltonian())[0])
        top = float(model.h0_diag.min())
        energies = np.sort(rng.uniform(h_min - 1.0, top - 1e-3, size=n_energies))
        for e, ch, cp in schur.counting_census(model, energies):
            out.counting_cases += 1
            if ch != cp:
                out.counting_mismatches += 1
                out.failures.append(f"model {i}: E={e:.6g} count_H={ch} count_phi={cp}")
        taus = np.linspace(h_min - 2.0, top - 1e-2, 10)
        mono = schur.phi_monotonicity_check(model, taus)
        if mono.injective and not mono.strictly_decreasing:
            out.monotone_failures += 1
            out.failures.append(f"model {i}: mu_1(phi) not strictly decreasing")
        out.psd_min = min(out.psd_min, mono.psd_min)
        out.n_models += 1
    return out


def sector_counting_suite(params: ModelParams, cutoff_radius: float, n_fermions_list=(1, 2),
                          n_energies: int = 20, kind: str = "sharp", basis_radius: float = None) -> dict:
    """Counting principle on fock sectors: E-grid of equally spaced points below 0.

    The basis defaults to the cutoff support.
    """
    scheme = make_scheme(kind, cutoff_radius, params)
    basis_radius = scheme.support_radius if basis_radius is None else basis_radius
    grid = np.linspace(params.binding_energy - 2.0, -0.01, n_energies)
    rows, mismatches = [], 0
    for n in n_fermions_list:
        for e, ch, cp in sector_counting(scheme, params, n, basis_radius, grid):
            rows.append({"n_fermions": n, "energy": e, "count_h": ch, "count_phi": cp})
            mismatches += int(ch != cp)
    return {"cases": len(rows), "mismatches": mismatches, "rows": rows}
