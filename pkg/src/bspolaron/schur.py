"""Birman-Schwinger machinery for finite models H = H0 - g A^* A.

H0 is diagonal with nonnegative entries, A maps the model space to an
auxiliary space and g > 0.  The Birman-Schwinger operator is

    phi(z) = 1/g - A (H0 - z)^{-1} A^*

and the helpers here check its exact relations to H on dense matrices:
the Krein resolvent formula, the inverse identity, both Schur
factorizations of the block operator, the kernel isomorphisms and the
eigenvalue counting principle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import scipy.linalg as sla

ZERO_BAND = 1e-10
NUDGE = 1e-12
DEGENERACY_GAP = 1e-9
DENSE_CAP = 2048


@dataclass(frozen=True)
class BsModel:
    h0_diag: np.ndarray
    a_matrix: np.ndarray
    g: float

    def __post_init__(self):
        h0 = np.asarray(self.h0_diag, dtype=float).ravel()
        a = np.atleast_2d(np.asarray(self.a_matrix))
        if np.any(h0 < 0):
            raise ValueError("h0_diag must be nonnegative")
        if a.shape[1] != h0.size:
            raise ValueError(f"a_matrix has {a.shape[1]} columns, expected {h0.size}")
        if not self.g > 0:
            raise ValueError(f"coupling g must be positive, got {self.g}")
        if h0.size > DENSE_CAP or a.shape[0] > DENSE_CAP:
            raise ValueError(f"model dimension {max(h0.size, a.shape[0])} exceeds dense cap {DENSE_CAP}")
        object.__setattr__(self, "h0_diag", h0)
        object.__setattr__(self, "a_matrix", a)

    @property
    def dim(self) -> int:
        return self.h0_diag.size

    @property
    def aux_dim(self) -> int:
        return self.a_matrix.shape[0]

    def hamiltonian(self) -> np.ndarray:
        a = self.a_matrix
        return np.diag(self.h0_diag).astype(a.dtype) - self.g * (a.conj().T @ a)


@dataclass
class SpectralReport:
    energies: np.ndarray
    eigvec_residuals: np.ndarray
    vectors: np.ndarray = field(default=None, repr=False)


def random_model(rng: np.random.Generator, dim: int, aux_dim: int, g: float = None,
                 h0_max: float = 10.0, complex_entries: bool = True) -> BsModel:
    """Random model with h0 in (0, h0_max) and a Gaussian A."""
    h0 = rng.uniform(0.05, h0_max, size=dim)
    a = rng.normal(size=(aux_dim, dim))
    if complex_entries:
        a = a + 1j * rng.normal(size=(aux_dim, dim))
    a /= np.sqrt(dim)
    if g is None:
        g = float(rng.uniform(0.5, 3.0))
    return BsModel(h0, a, g)


def rank_one_model(h0_diag: Sequence[float], eta: Sequence[complex], g: float) -> BsModel:
    """H = H0 - g |eta><eta|, i.e. A psi = <eta, psi>."""
    eta = np.asarray(eta)
    return BsModel(np.asarray(h0_diag, dtype=float), eta.conj()[None, :], g)


def _check_pole(model: BsModel, z: complex):
    gap = np.min(np.abs(model.h0_diag - z)) if model.dim else np.inf
    if gap <= 1e-14 * max(1.0, float(np.max(model.h0_diag, initial=0.0))):
        raise ValueError(f"resolvent pole: z = {z} lies on the spectrum of H0")


def free_resolvent_diag(model: BsModel, z: complex) -> np.ndarray:
    _check_pole(model, z)
    return 1.0 / (model.h0_diag - z)


def phi_of_z(model: BsModel, z: complex) -> np.ndarray:
    """phi(z) = 1/g - A R0(z) A^*."""
    r0 = free_resolvent_diag(model, z)
    a = model.a_matrix
    phi = np.eye(model.aux_dim) / model.g - (a * r0[None, :]) @ a.conj().T
    if np.isrealobj(phi) or np.imag(z) == 0:
        phi = 0.5 * (phi + phi.conj().T)
    return phi


def direct_resolvent(model: BsModel, z: complex) -> np.ndarray:
    h = model.hamiltonian()
    return np.linalg.inv(h - z * np.eye(model.dim))


def _phi_inverse(model: BsModel, z: complex) -> np.ndarray:
    phi = phi_of_z(model, z)
    if phi.size and np.linalg.cond(phi) > 1e13:
        raise ValueError(f"z is an eigenvalue of H: phi({z}) is singular")
    return np.linalg.inv(phi)


def krein_resolvent(model: BsModel, z: complex) -> np.ndarray:
    """R(z) = R0 + R0 A^* phi^{-1} A R0."""
    r0 = free_resolvent_diag(model, z)
    phi_inv = _phi_inverse(model, z)
    left = r0[:, None] * model.a_matrix.conj().T
    right = model.a_matrix * r0[None, :]
    return np.diag(r0) + left @ phi_inv @ right


def inverse_phi_identity_check(model: BsModel, z: complex) -> float:
    """Frobenius norm of phi^{-1} - (g + g^2 A R(z) A^*)."""
    phi_inv = _phi_inverse(model, z)
    a = model.a_matrix
    rhs = model.g * np.eye(model.aux_dim) + model.g ** 2 * a @ direct_resolvent(model, z) @ a.conj().T
    return float(np.linalg.norm(phi_inv - rhs))


def block_operator(model: BsModel, z: complex) -> np.ndarray:
    """[[H0 - z, A^*], [A, 1/g]]."""
    n, m = model.dim, model.aux_dim
    a = model.a_matrix
    out = np.zeros((n + m, n + m), dtype=complex)
    out[:n, :n] = np.diag(model.h0_diag - z)
    out[:n, n:] = a.conj().T
    out[n:, :n] = a
    out[n:, n:] = np.eye(m) / model.g
    return out


def schur_factorization_check(model: BsModel, z: complex) -> tuple:
    """Reconstruction residuals of the two triangular factorizations.

    The residuals are max-norm differences relative to max(1, |H~|_max).
    """
    n, m = model.dim, model.aux_dim
    a = model.a_matrix
    g = model.g
    eye_n, eye_m = np.eye(n), np.eye(m)
    target = block_operator(model, z)
    scale = max(1.0, float(np.max(np.abs(target))))

    upper = np.block([[eye_n, g * a.conj().T], [np.zeros((m, n)), eye_m]])
    middle = sla.block_diag(model.hamiltonian() - z * eye_n, eye_m / g)
    lower = np.block([[eye_n, np.zeros((n, m))], [g * a, eye_m]])
    r1 = np.max(np.abs(upper @ middle @ lower - target), initial=0.0) / scale

    r0 = free_resolvent_diag(model, z)
    lower2 = np.block([[eye_n, np.zeros((n, m))], [a * r0[None, :], eye_m]])
    middle2 = sla.block_diag(np.diag(model.h0_diag - z), phi_of_z(model, z))
    upper2 = np.block([[eye_n, r0[:, None] * a.conj().T], [np.zeros((m, n)), eye_m]])
    r2 = np.max(np.abs(lower2 @ middle2 @ upper2 - target), initial=0.0) / scale
    return float(r1), float(r2)


def spectral_report(matrix: np.ndarray) -> SpectralReport:
    """Full Hermitian eigendecomposition with residual check."""
    h = np.asarray(matrix)
    if h.shape[0] > DENSE_CAP:
        raise ValueError(f"dimension {h.shape[0]} exceeds dense cap {DENSE_CAP}")
    if not np.allclose(h, h.conj().T, atol=1e-12 * max(1.0, np.abs(h).max(initial=0.0))):
        raise ValueError("matrix is not Hermitian")
    w, v = np.linalg.eigh(h)
    res = np.linalg.norm(h @ v - v * w[None, :], axis=0)
    return SpectralReport(w, res, v)


def _cluster(values: np.ndarray, target: float) -> np.ndarray:
    scale = max(1.0, abs(target))
    return np.flatnonzero(np.abs(values - target) <= DEGENERACY_GAP * scale)


@dataclass
class KernelReport:
    z: float
    dim_ker_h: int
    dim_ker_phi: int
    phi_residual: float
    h_residual: float
    relation_residual: float
    a_image_rank: int

    @property
    def ok(self) -> bool:
        return (self.dim_ker_h == self.dim_ker_phi == self.a_image_rank
                and max(self.phi_residual, self.h_residual, self.relation_residual) <= 1e-8)


def kernel_isomorphism_check(model: BsModel, z: float) -> KernelReport:
    """Compare ker(H - z) and ker phi(z) through A and R0(z) A^*."""
    rep = spectral_report(model.hamiltonian())
    idx = _cluster(rep.energies, z)
    if idx.size == 0:
        raise ValueError(f"z = {z} is not an eigenvalue of H")
    psi = rep.vectors[:, idx]
    phi = phi_of_z(model, z)
    mu, w = np.linalg.eigh(phi)
    band = DEGENERACY_GAP * max(1.0, float(np.max(np.abs(mu), initial=0.0)))
    kidx = np.flatnonzero(np.abs(mu) <= band)
    wk = w[:, kidx]

    a = model.a_matrix
    r0 = free_resolvent_diag(model, z)
    a_psi = a @ psi
    phi_res = 0.0
    for col in a_psi.T:
        nrm = np.linalg.norm(col)
        if nrm > 0:
            phi_res = max(phi_res, np.linalg.norm(phi @ col) / nrm)
    h = model.hamiltonian()
    h_res = 0.0
    back = r0[:, None] * (a.conj().T @ wk)
    for col in back.T:
        nrm = np.linalg.norm(col)
        h_res = max(h_res, np.linalg.norm(h @ col - z * col) / nrm)
    # psi = -R0 A^* w with w = -g A psi
    rel = 0.0
    for col in psi.T:
        wv = -model.g * (a @ col)
        rel = max(rel, np.linalg.norm(col + r0 * (a.conj().T @ wv)))
    sv = np.linalg.svd(a_psi, compute_uv=False)
    rank = int(np.sum(sv > 1e-8 * max(1.0, sv.max(initial=0.0))))
    return KernelReport(float(z), int(idx.size), int(kidx.size), float(phi_res),
                        float(h_res), float(rel), rank)


def _counts(model: BsModel, energies: np.ndarray, e: float) -> tuple:
    mu = np.linalg.eigvalsh(phi_of_z(model, e))
    return int(np.sum(energies < e)), int(np.sum(mu < 0)), mu


def bs_count_check(model: BsModel, e: float) -> tuple:
    """(#eig(H) < E, #negative eig(phi(E))) for E below min(h0)."""
    if model.dim and e >= model.h0_diag.min():
        raise ValueError(f"outside the variational window: E = {e} >= min(h0) = {model.h0_diag.min()}")
    energies = np.linalg.eigvalsh(model.hamiltonian())
    for _ in range(8):
        near_h = np.any(np.abs(energies - e) <= ZERO_BAND)
        count_h, count_phi, mu = _counts(model, energies, e)
        if not near_h and not np.any(np.abs(mu) <= ZERO_BAND):
            break
        e -= NUDGE
    return count_h, count_phi


@dataclass
class MonotonicityReport:
    tau: np.ndarray
    mu_ell: np.ndarray
    strictly_decreasing: bool
    psd_min: float
    injective: bool


def phi_monotonicity_check(model: BsModel, tau_grid: Sequence[float], ell: int = 1) -> MonotonicityReport:
    """mu_ell(phi(tau)) along an ascending grid and PSD of consecutive differences."""
    tau = np.asarray(tau_grid, dtype=float)
    if np.any(np.diff(tau) <= 0):
        raise ValueError("tau grid must be strictly ascending")
    if model.dim and tau.max() >= model.h0_diag.min():
        raise ValueError("tau grid must lie below min(h0)")
    phis = [phi_of_z(model, t) for t in tau]
    mu = np.array([np.linalg.eigvalsh(p)[ell - 1] for p in phis])
    steps = np.diff(mu)
    psd = min((np.linalg.eigvalsh(phis[i] - phis[i + 1])[0] for i in range(len(phis) - 1)),
              default=0.0)
    sv = np.linalg.svd(model.a_matrix, compute_uv=False)
    injective = bool(sv.size == model.aux_dim and sv.min() > 1e-10 * max(1.0, sv.max()))
    strict = bool(np.all(steps < -1e-12))
    return MonotonicityReport(tau, mu, strict, float(psd), injective)


def counting_census(model: BsModel, energies: Sequence[float]) -> List[tuple]:
    """bs_count_check over a list of energies as (E, count_H, count_phi) rows."""
    return [(float(e),) + bs_count_check(model, float(e)) for e in energies]
