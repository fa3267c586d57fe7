"""Cutoff-free limit objects: mu_tau, G_mu and the limit Birman-Schwinger forms.

Both scalar functions are lattice sums of the family

    h(k) = 1/(a k^2 + b) - chi(k^2 > mu) / (a |k - s|^2 + c),

with a = 1 + 1/M, b = -E_B and the second denominator written with the
square completed: (q - k)^2/M + k^2 + shift = a|k - s|^2 + c, s = q/(M + 1),
c = q^2/(M + 1) + shift.  The summand is O(|k|^-3) and its k -> -k symmetrized
version O(|k|^-4), which is what makes the tail bound work.

Values come from a smoothly windowed lattice sum plus the continuum integral
of the remainder (exponentially accurate in the inner radius).  The certified
error is the distance to the plain partial sum plus a comparison bound for the
tail of that partial sum.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import special

from .lattice import (TWO_PI, FermiSea, ModelParams, _ball, _next_shell, fermi_sea, kinetic,
                      window_scales)

DEFAULT_INNER_RADIUS = 32.0     # in units of kappa
RADIUS_CAP = 192.0              # in units of kappa
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(160)


class RenormSum(NamedTuple):
    value: float
    error_bound: float
    inner_radius: float


class TailBoundError(ValueError):
    """Requested accuracy not reached within the radius cap; carries the best result."""

    def __init__(self, message: str, best: RenormSum):
        super().__init__(message)
        self.best = best


class WindowError(ValueError):
    pass


# ---------------------------------------------------------------------------
# batched summation of the family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Family:
    a: float
    b: float
    s: np.ndarray       # (m, 2) physical shift vectors
    c: np.ndarray       # (m,)
    mu_cut: float       # chi(k^2 > mu_cut); -inf switches it off


def _radial_average(fam: _Family, r: np.ndarray) -> np.ndarray:
    """int_0^{2pi} h(r, theta) dtheta for every member; r has shape (m, p)."""
    s2 = np.sum(fam.s ** 2, axis=1)[:, None]
    big_a = fam.a * (r * r + s2) + fam.c[:, None]
    big_b = 2.0 * fam.a * r * np.sqrt(s2)
    second = TWO_PI / np.sqrt((big_a - big_b) * (big_a + big_b))
    return TWO_PI / (fam.a * r * r + fam.b) - np.where(r * r > fam.mu_cut, second, 0.0)


def _beyond(fam: _Family, radius: float) -> np.ndarray:
    """Closed form of int_R^inf (radial average)(t) t dt."""
    a, b, c = fam.a, fam.b, fam.c
    s2 = np.sum(fam.s ** 2, axis=1)
    x = radius * radius
    quad = a * a * x * x + 2 * a * x * (c - a * s2) + (a * s2 + c) ** 2
    return math.pi / a * np.log((np.sqrt(quad) + a * x + c - a * s2) / (2.0 * (a * x + b)))


def _tail_bound(fam: _Family, radius: float, kappa: float) -> np.ndarray:
    """Comparison bound on sum_{|k| > R} |h(k)| via the symmetrized majorant.

    For t >= 2|s| and a t^2/4 + c > 0 the symmetrized summand is bounded by
    f(t) = (A + B/t^2) / (a (a t^2/4 + c)^2) with A = a|D| + 4 a^2 s^2,
    B = (a s^2 + |c|)|D|, D = a s^2 + c - b.  The radial integrals of f are
    bounded in closed form.
    """
    a, b, c = fam.a, fam.b, fam.c
    s2 = np.sum(fam.s ** 2, axis=1)
    d = np.abs(a * s2 + c - b)
    big_a = a * d + 4 * a * a * s2
    big_b = (a * s2 + np.abs(c)) * d
    alpha = a / 4.0
    # a t^2/4 + c >= alpha_eff t^2 + c_eff on the tail, with c_eff >= 0
    rho = np.where(c >= 0, 1.0, 1.0 + 4.0 * c / (a * radius * radius))
    if np.any(rho <= 0) or np.any(radius < 2.0 * np.sqrt(s2)):
        raise WindowError("inner radius too small for the tail majorant")
    al = alpha * rho
    ce = np.maximum(c, 0.0)

    def f(t):
        return (big_a + big_b / (t * t)) / (a * (al * t * t + ce) ** 2)

    def int_ft(t0):        # >= int_t0^inf f(t) t dt
        return (big_a + big_b / (t0 * t0)) / (a * 2 * al * (al * t0 * t0 + ce))

    def int_f(t0):         # >= int_t0^inf f(t) dt
        return int_ft(t0) / t0

    j0 = int(math.floor(radius / kappa + 1e-12)) + 1
    r_plus = min(j0 * kappa, _next_shell(radius, kappa))
    r_lo = max(r_plus - math.sqrt(2.0) * kappa, 0.0)
    bulk = 0.5 * f(r_plus) * (r_plus ** 2 - r_lo ** 2) + int_ft(r_plus)
    axis = f(j0 * kappa) + int_f(j0 * kappa) / kappa
    # closed-form integrals are exact upper bounds; a relative pad covers rounding
    return (TWO_PI / kappa ** 2 * bulk + 4.0 * axis) * (1.0 + 1e-12)


def _family_sum(fam: _Family, radius: float, kappa: float):
    """(value, error_bound) arrays for every member of the family."""
    n = _ball(kappa, radius)
    k = kappa * n.astype(float)
    k2 = np.sum(k * k, axis=1)
    den = fam.a * np.sum((k[None, :, :] - fam.s[:, None, :]) ** 2, axis=2) + fam.c[:, None]
    live = k2[None, :] > fam.mu_cut
    if np.any(den[np.broadcast_to(live, den.shape)] <= 0):
        raise WindowError("outside analytic continuation window")
    h = 1.0 / (fam.a * k2 + fam.b)[None, :] - np.where(live, 1.0 / den, 0.0)
    partial = h.sum(axis=1)
    centre, width = window_scales(radius)
    w = 0.5 * special.erfc((np.sqrt(k2) - centre) / width)
    smooth = h @ w
    # windowed remainder of the continuum integral on [r_lo, R], split at the centre
    r_lo = max(centre - 6.0 * width, 0.0)
    inside = np.zeros(len(fam.c))
    for lo, hi in ((r_lo, centre), (centre, radius)):
        t = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
        wt = 0.5 * (hi - lo) * _GL_WEIGHTS
        win = 0.5 * special.erfc((centre - t) / width)
        rad = _radial_average(fam, np.broadcast_to(t, (len(fam.c), t.size)))
        inside += (rad * (win * t * wt)[None, :]).sum(axis=1)
    value = smooth + (inside + _beyond(fam, radius)) / kappa ** 2
    bound = np.abs(value - partial) + _tail_bound(fam, radius, kappa)
    return value, bound


def _min_radius(params: ModelParams, s_norm: float, mu_cut: float) -> float:
    # majorant needs R >= 2|s|; the window region must clear the Fermi ball
    r = DEFAULT_INNER_RADIUS * params.kappa
    r = max(r, 2.0 * s_norm + params.kappa)
    if mu_cut > 0:
        r = max(r, 8.0 * math.sqrt(mu_cut) + params.kappa)
    return r


def family_sums(params: ModelParams, q: np.ndarray, shift: np.ndarray, mu_cut: float,
                inner_radius: Optional[float] = None, tol: Optional[float] = None):
    """Vectorized sums over (q_i, shift_i) pairs; q given as integer momenta.

    Returns arrays (value, error_bound, inner_radius).
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.int64))
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    m_imp = params.impurity_mass
    qk = params.kappa * q.astype(float)
    q2 = np.sum(qk * qk, axis=1)
    fam = _Family(a=params.pair_factor, b=-params.binding_energy, s=qk / (m_imp + 1.0),
                  c=q2 / (m_imp + 1.0) + shift, mu_cut=mu_cut)
    s_max = float(np.sqrt(np.max(np.sum(fam.s ** 2, axis=1)))) if len(q) else 0.0
    c_min = float(np.min(fam.c)) if len(q) else 0.0
    radius = inner_radius if inner_radius is not None else _min_radius(params, s_max, mu_cut)
    # the comparison bound needs a t^2/4 + c > 0 on the tail
    if c_min < 0:
        radius = max(radius, 2.0 * math.sqrt(-4.0 * c_min / params.pair_factor) + params.kappa)
    while True:
        value, bound = _family_sum(fam, radius, params.kappa)
        if tol is None or np.max(bound, initial=0.0) <= tol:
            return value, bound, radius
        if radius * 2 > RADIUS_CAP * params.kappa:
            worst = int(np.argmax(bound))
            raise TailBoundError(
                f"error bound {bound[worst]:.3e} above tol {tol:.1e} at the radius cap",
                RenormSum(float(value[worst]), float(bound[worst]), radius))
        radius *= 2.0


def generic_sum(a: float, b: float, c: float, kappa: float, radius: float) -> RenormSum:
    """sum_k [1/(a k^2 + b) - 1/(a k^2 + c)] with the same certified machinery."""
    fam = _Family(a=a, b=b, s=np.zeros((1, 2)), c=np.array([float(c)]), mu_cut=-math.inf)
    value, bound = _family_sum(fam, radius, kappa)
    return RenormSum(float(value[0]), float(bound[0]), radius)


def _canonical(q) -> tuple:
    """Point-group orbit representative of an integer momentum."""
    x, y = sorted((abs(int(q[0])), abs(int(q[1]))), reverse=True)
    return x, y


# memoization keyed on the orbit; the lock keeps the cache consistent across threads
_cache_lock = threading.Lock()


@lru_cache(maxsize=65536)
def _cached(params: ModelParams, qc: tuple, shift: float, mu_cut: float,
            inner_radius: Optional[float], tol: Optional[float]) -> RenormSum:
    v, e, r = family_sums(params, np.array([qc]), np.array([shift]), mu_cut, inner_radius, tol)
    return RenormSum(float(v[0]), float(e[0]), float(r))


def _scalar(params, q, shift, mu_cut, inner_radius, tol) -> RenormSum:
    with _cache_lock:
        return _cached(params, _canonical(q), float(shift), float(mu_cut), inner_radius, tol)


def mu_tau(params: ModelParams, tau: float, q=(0, 0), p2: float = 0.0,
           inner_radius: Optional[float] = None, tol: Optional[float] = None) -> RenormSum:
    """sum_k [1/((1+1/M)k^2 - E_B) - 1/((q-k)^2/M + k^2 + P^2 - tau)]."""
    if tau >= 0:
        raise ValueError("tau must be negative")
    if p2 < 0:
        raise ValueError("P^2 must be nonnegative")
    return _scalar(params, q, p2 - tau, -math.inf, inner_radius, tol)


def g_mu(params: ModelParams, lam: float, q=(0, 0), inner_radius: Optional[float] = None,
         tol: Optional[float] = None) -> RenormSum:
    """G_mu(lam, q) = sum_k [1/((1+1/M)k^2 - E_B) - chi(k^2 > mu)/((q-k)^2/M + k^2 + lam)]."""
    mu = params.fermi_energy
    mu_cut = mu * (1 + 1e-12) if mu >= 0 else -math.inf
    return _scalar(params, q, lam, mu_cut, inner_radius, tol)


def g_mu_batch(params: ModelParams, lam: Sequence[float], q: np.ndarray,
               inner_radius: Optional[float] = None):
    """G_mu for many (lam_i, q_i) at once, reduced over point-group orbits.

    Returns (values, error_bounds) aligned with the input.
    """
    lam = np.asarray(lam, dtype=float)
    q = np.atleast_2d(np.asarray(q, dtype=np.int64))
    if len(lam) == 0:
        return np.zeros(0), np.zeros(0)
    canon = np.sort(np.abs(q), axis=1)[:, ::-1]
    key = np.concatenate([canon.astype(float), lam[:, None]], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    mu = params.fermi_energy
    mu_cut = mu * (1 + 1e-12) if mu >= 0 else -math.inf
    v, e, _ = family_sums(params, uniq[:, :2].astype(np.int64), uniq[:, 2], mu_cut, inner_radius)
    inv = inv.ravel()
    return v[inv], e[inv]


def reference_sum(params: ModelParams, q, shift: float, mu_cut: float, radius: float) -> RenormSum:
    """Plain partial sum over |k| <= radius plus the certified comparison bound."""
    qk = params.kappa * np.asarray(q, dtype=float).reshape(1, 2)
    fam = _Family(a=params.pair_factor, b=-params.binding_energy, s=qk / (params.impurity_mass + 1),
                  c=np.array([np.sum(qk * qk) / (params.impurity_mass + 1) + shift]), mu_cut=mu_cut)
    n = _ball(params.kappa, radius)
    k = params.kappa * n.astype(float)
    k2 = np.sum(k * k, axis=1)
    den = fam.a * np.sum((k - fam.s[0]) ** 2, axis=1) + fam.c[0]
    h = 1.0 / (fam.a * k2 + fam.b) - np.where(k2 > mu_cut, 1.0 / den, 0.0)
    bound = float(_tail_bound(fam, radius, params.kappa)[0])
    return RenormSum(float(math.fsum(h)), bound, radius)


# ---------------------------------------------------------------------------
# limit Birman-Schwinger forms on Fermi-sea blocks
# ---------------------------------------------------------------------------

class PolaronBlock(NamedTuple):
    momenta: np.ndarray     # q with q^2 <= mu, Fermi-sea order
    diag: np.ndarray        # G_mu(E_mu - E - q^2, q)
    diag_error: np.ndarray
    xi_coupling: float      # 1/(E_mu - E)


def phi_limit_polaron_block(params: ModelParams, energy: float,
                            sea: Optional[FermiSea] = None) -> PolaronBlock:
    """Data of <P|phi(E)P> = sum |a_q|^2 G_mu(E_mu-E-q^2, q) - (1/(E_mu-E)) |sum a_q|^2."""
    sea = sea if sea is not None else fermi_sea(params)
    lam = sea.e_mu - energy
    if lam <= 0:
        raise WindowError("outside analytic continuation window")
    qs = sea.occupied
    v, e = g_mu_batch(params, lam - kinetic(qs, params.kappa), qs)
    return PolaronBlock(qs, v, e, 1.0 / lam)


@dataclass(frozen=True)
class MoleculeForm:
    """Coefficient families of <M|phi(E)M> in (1, gamma_{Kq})."""
    energy: float
    k_momenta: np.ndarray   # mu < K^2 <= K_cap^2
    q_momenta: np.ndarray   # q^2 <= mu
    scalar: float           # G_mu(E_mu - E, 0)
    linear: np.ndarray      # 1/((1+1/M)K^2 + E_mu - E), per K
    diag: np.ndarray        # G_mu(K^2 - q^2 + E_mu - E, q - K), shape (nK, nq)
    exchange: np.ndarray    # 1/((q-K-L)^2/M + K^2 + L^2 - q^2 + E_mu - E), shape (nq, nK, nK)
    hole: np.ndarray        # -1/((1+1/M)K^2 + E_mu - E), per K
    max_error: float        # largest certified error among the G_mu entries

    @property
    def n_unknowns(self) -> int:
        return self.diag.size

    def value(self, gamma: np.ndarray) -> float:
        """Form value at real gamma of shape (nK, nq)."""
        g = np.asarray(gamma, dtype=float).reshape(self.diag.shape)
        out = self.scalar + 2.0 * float(self.linear @ g.sum(axis=1))
        out += float(np.sum(self.diag * g * g))
        out += float(np.einsum("qkl,lq,kq->", self.exchange, g, g))
        out += float(self.hole @ (g.sum(axis=1) ** 2))
        return out


def molecule_k_momenta(params: ModelParams, k_cap: float) -> np.ndarray:
    mu = params.fermi_energy
    ks = _ball(params.kappa, k_cap)
    return ks[kinetic(ks, params.kappa) > mu * (1 + 1e-12)]


def phi_limit_molecule_form(params: ModelParams, energy: float, k_cap: float,
                            sea: Optional[FermiSea] = None) -> MoleculeForm:
    """Assemble every coefficient family of the molecule form at energy E."""
    sea = sea if sea is not None else fermi_sea(params)
    mu = params.fermi_energy
    if not energy < sea.e_mu + mu:
        raise WindowError("outside analytic continuation window")
    ks = molecule_k_momenta(params, k_cap)
    if len(ks) == 0:
        raise ValueError("K_cap admits no momentum outside the Fermi sea")
    qs = sea.occupied
    kap, m_inv = params.kappa, 1.0 / params.impurity_mass
    shift = sea.e_mu - energy
    k2, q2 = kinetic(ks, kap), kinetic(qs, kap)
    linear = 1.0 / (params.pair_factor * k2 + shift)
    diff = (qs[None, :, :] - ks[:, None, :]).reshape(-1, 2)
    lam = (k2[:, None] - q2[None, :] + shift).ravel()
    dv, de = g_mu_batch(params, lam, diff)
    scalar = g_mu(params, shift, (0, 0))
    tot = qs[:, None, None, :] - ks[None, :, None, :] - ks[None, None, :, :]
    exch_den = (m_inv * kinetic(tot.reshape(-1, 2), kap).reshape(tot.shape[:3])
                + k2[None, :, None] + k2[None, None, :] - q2[:, None, None] + shift)
    if np.any(exch_den <= 0):
        raise WindowError("outside analytic continuation window")
    return MoleculeForm(energy=energy, k_momenta=ks, q_momenta=qs, scalar=scalar.value,
                        linear=linear, diag=dv.reshape(len(ks), len(qs)),
                        exchange=1.0 / exch_den, hole=-linear,
                        max_error=float(max(np.max(de), scalar.error_bound)))
