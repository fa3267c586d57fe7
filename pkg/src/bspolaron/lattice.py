"""Momentum lattice geometry, cutoff schemes and lattice sums.

Momenta live on the lattice kappa * Z^2 with kappa = 2 pi / L.  They are
stored as integer coordinate pairs ``n`` and converted to physical momenta
``k = kappa * n`` only when an energy is needed.  Every ordered collection of
momenta uses the same total order: by ``n . n`` first, then lexicographically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, signal, special

TWO_PI = 2.0 * math.pi
CUTOFF_KINDS = ("sharp", "gaussian", "beta_only")
GAUSSIAN_TRUNCATION = 6.0


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the impurity problem in a periodic box.

    Attributes
    ----------
    box_length : float
        Side length L of the box.
    impurity_mass : float
        Mass ratio M of impurity to fermions.
    binding_energy : float
        Two-body binding energy E_B (< 0).
    fermi_energy : float
        Fermi energy mu (>= 0).
    kappa : float
        Lattice constant 2 pi / L, derived.
    """

    box_length: float = TWO_PI
    impurity_mass: float = 1.0
    binding_energy: float = -1.0
    fermi_energy: float = 0.0
    kappa: float = field(init=False)

    def __post_init__(self):
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")
        if not self.impurity_mass > 0:
            raise ValueError(f"impurity_mass must be positive, got {self.impurity_mass}")
        if not self.binding_energy < 0:
            raise ValueError(f"binding_energy must be negative, got {self.binding_energy}")
        if not self.fermi_energy >= 0:
            raise ValueError(f"fermi_energy must be nonnegative, got {self.fermi_energy}")
        object.__setattr__(self, "kappa", TWO_PI / self.box_length)

    @classmethod
    def from_kappa(cls, kappa: float = 1.0, **kwargs) -> "ModelParams":
        return cls(box_length=TWO_PI / kappa, **kwargs)

    @property
    def pair_factor(self) -> float:
        """1 + 1/M, the kinetic prefactor of a fermion-impurity pair at rest."""
        return 1.0 + 1.0 / self.impurity_mass

    def with_(self, **kwargs) -> "ModelParams":
        return replace(self, **kwargs)


def sort_momenta(n: np.ndarray) -> np.ndarray:
    """Sort integer momenta by n.n, then lexicographically."""
    n = np.asarray(n, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((n[:, 1], n[:, 0], (n * n).sum(axis=1)))
    return n[order]


def _ball(kappa: float, radius: float) -> np.ndarray:
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    r = radius / kappa
    # tolerance so that radii given as kappa*integer keep their boundary shell
    r2 = r * r * (1.0 + 1e-12) + 1e-12
    m = int(math.floor(math.sqrt(r2)))
    x = np.arange(-m, m + 1, dtype=np.int64)
    gx, gy = np.meshgrid(x, x, indexing="ij")
    n = np.stack([gx.ravel(), gy.ravel()], axis=1)
    n = n[(n * n).sum(axis=1) <= r2]
    return sort_momenta(n)


def enumerate_ball(params: ModelParams, radius: float) -> np.ndarray:
    """All lattice momenta with |k| <= radius as an (n, 2) integer array."""
    return _ball(params.kappa, radius)


def ball_count(kappa: float, radius: float) -> int:
    return len(_ball(kappa, radius))


def kinetic(n, kappa: float) -> np.ndarray:
    """k^2 for integer momenta n (last axis of length 2)."""
    n = np.asarray(n)
    return kappa * kappa * (n * n).sum(axis=-1)


def momentum_index(momenta: np.ndarray) -> dict:
    """Map from momentum tuple to its position in ``momenta``."""
    return {(int(a), int(b)): i for i, (a, b) in enumerate(momenta)}


# ---------------------------------------------------------------------------
# cutoff schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffScheme:
    """Regularization pair (alpha, beta) with finite support.

    kind
        ``sharp``: alpha = beta = indicator of |k| <= radius.
        ``gaussian``: alpha = beta = exp(-k^2 / (2 radius^2)), truncated at
        6 * radius.
        ``beta_only``: alpha = 1 on the ball of radius 2 * radius, beta the
        indicator of |k| <= radius; the cutoff acts on the impurity only.
    """

    kind: str
    radius: float
    kappa: float

    def __post_init__(self):
        if self.kind not in CUTOFF_KINDS:
            raise ValueError(f"unknown cutoff kind {self.kind!r}; expected one of {CUTOFF_KINDS}")
        if not self.radius > 0:
            raise ValueError(f"cutoff radius must be positive, got {self.radius}")

    @property
    def support_radius(self) -> float:
        if self.kind == "gaussian":
            return GAUSSIAN_TRUNCATION * self.radius
        if self.kind == "beta_only":
            return 2.0 * self.radius
        return self.radius

    def _inside(self, n, radius) -> np.ndarray:
        r = radius / self.kappa
        n = np.asarray(n)
        return (n * n).sum(axis=-1) <= r * r * (1.0 + 1e-12) + 1e-12

    def alpha(self, n) -> np.ndarray:
        n = np.asarray(n)
        if self.kind == "gaussian":
            return self._gauss(n)
        return self._inside(n, self.support_radius).astype(float)

    def beta(self, n) -> np.ndarray:
        n = np.asarray(n)
        if self.kind == "gaussian":
            return self._gauss(n)
        return self._inside(n, self.radius).astype(float)

    def _gauss(self, n) -> np.ndarray:
        k2 = kinetic(n, self.kappa)
        out = np.exp(-k2 / (2.0 * self.radius ** 2))
        return np.where(self._inside(n, self.support_radius), out, 0.0)

    def support(self) -> np.ndarray:
        return _ball(self.kappa, self.support_radius)


def make_scheme(kind: str, radius: float, params: ModelParams) -> CutoffScheme:
    return CutoffScheme(kind=kind, radius=float(radius), kappa=params.kappa)


def indicator_scheme(params: ModelParams, radius: float) -> CutoffScheme:
    return make_scheme("sharp", radius, params)


def coupling_inverse(scheme: CutoffScheme, params: ModelParams) -> float:
    """g^{-1} = sum_k alpha(k)^2 beta(-k)^2 / ((1 + 1/M) k^2 - E_B)."""
    n = scheme.support()
    w = (scheme.alpha(n) * scheme.beta(-n)) ** 2
    if not np.any(w > 0):
        raise ValueError("degenerate cutoff")
    den = params.pair_factor * kinetic(n, params.kappa) - params.binding_energy
    return float(np.sum(w / den))


def coupling_constant(scheme: CutoffScheme, params: ModelParams) -> float:
    """Renormalized coupling g fixing the two-body ground state at E_B."""
    return 1.0 / coupling_inverse(scheme, params)


def overlap_constant(scheme: CutoffScheme) -> float:
    """C(alpha, beta) = sup_q sum_k |alpha(k) beta(q - k)|^2."""
    m = int(math.floor(scheme.support_radius / scheme.kappa + 1e-9))
    x = np.arange(-m, m + 1)
    gx, gy = np.meshgrid(x, x, indexing="ij")
    grid = np.stack([gx, gy], axis=-1)
    a2 = scheme.alpha(grid) ** 2
    b2 = scheme.beta(grid) ** 2
    method = "direct" if a2.size <= 45 * 45 else "fft"
    conv = signal.convolve(a2, b2, mode="full", method=method)
    return float(conv.max())


def scheme_gamma(scheme: CutoffScheme, q, variant: int = 1) -> float:
    """Admissibility diagnostic gamma(q) of a regularizing scheme.

    Variant 1 sums |alpha(k)| |beta(-k) - beta(q-k)| / (k^2 + q^2 + 1);
    variant 2 exchanges the roles of alpha and beta.
    """
    if variant not in (1, 2):
        raise ValueError(f"variant must be 1 or 2, got {variant}")
    q = np.asarray(q, dtype=np.int64).reshape(2)
    if variant == 1:
        outer, inner = scheme.alpha, scheme.beta
    else:
        outer, inner = scheme.beta, scheme.alpha
    n = _ball(scheme.kappa, scheme.support_radius)
    k2 = kinetic(n, scheme.kappa)
    q2 = float(kinetic(q, scheme.kappa))
    diff = np.abs(inner(-n) - inner(q[None, :] - n))
    return float(np.sum(np.abs(outer(n)) * diff / (k2 + q2 + 1.0)))


# ---------------------------------------------------------------------------
# Fermi sea
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FermiSea:
    occupied: np.ndarray
    n_mu: int
    e_mu: float


def fermi_sea(params: ModelParams) -> FermiSea:
    """Filled momenta k^2 <= mu, in the canonical order."""
    occ = _ball(params.kappa, math.sqrt(params.fermi_energy))
    # exclude points that only entered through the boundary tolerance
    occ = occ[kinetic(occ, params.kappa) <= params.fermi_energy * (1 + 1e-12)]
    return FermiSea(occupied=occ, n_mu=len(occ),
                    e_mu=float(kinetic(occ, params.kappa).sum()))


# ---------------------------------------------------------------------------
# tail-corrected summation
# ---------------------------------------------------------------------------

class LatticeSum(NamedTuple):
    value: float
    error_bound: float
    inner_radius: float


def _quad_tail(f: Callable[[float], float], a: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(f, a, np.inf, limit=400, full_output=1)
    val = res[0]
    if len(res) == 4 or not np.isfinite(val):
        raise ValueError("tail not summable")
    return val


def lattice_tail_bound(majorant: Callable[[float], float], radius: float, kappa: float) -> float:
    """Bound sum_{|k| > radius} f(|k|) for a decreasing majorant f.

    Off-axis points are compared with the unit cell towards the origin and the
    four half-axes with a one-dimensional integral, giving the bound
    (2 pi / kappa^2) int f(t) t dt + 4 f(t0) + (4 / kappa) int f(t) dt
    over the tail region.
    """
    j0 = int(math.floor(radius / kappa + 1e-12)) + 1
    # smallest lattice radius strictly outside the ball
    r_plus = min(j0 * kappa, _next_shell(radius, kappa))
    f_plus = float(majorant(r_plus))
    if f_plus == 0.0 and float(majorant(2.0 * r_plus + 10 * kappa)) == 0.0:
        # majorant vanishes on the whole tail (checked at two points; f is monotone)
        return 0.0
    r_lo = max(r_plus - math.sqrt(2.0) * kappa, 0.0)
    bulk = 0.5 * f_plus * (r_plus ** 2 - r_lo ** 2) + _quad_tail(lambda t: majorant(t) * t, r_plus)
    axis = float(majorant(j0 * kappa)) + _quad_tail(majorant, j0 * kappa) / kappa
    return TWO_PI / kappa ** 2 * bulk + 4.0 * axis


def _next_shell(radius: float, kappa: float) -> float:
    m = int(math.floor(radius / kappa)) + 2
    x = np.arange(0, m + 1)
    s = (x[:, None] ** 2 + x[None, :] ** 2).ravel()
    r2 = (radius / kappa) ** 2 * (1 + 1e-12) + 1e-12
    return kappa * math.sqrt(s[s > r2].min())


def window_scales(radius: float) -> tuple:
    """Centre and width of the erfc window used by the smooth summation."""
    return 0.5 * radius, radius / 16.0


def tail_corrected_sum(summand: Callable[[np.ndarray], np.ndarray], inner_radius: float,
                       kappa: float, majorant: Callable[[float], float],
                       radial_average: Optional[Callable[[np.ndarray], np.ndarray]] = None
                       ) -> LatticeSum:
    """Lattice sum of ``summand`` over kappa Z^2 with a certified error.

    Parameters
    ----------
    summand : callable
        Vectorized function of integer momenta, shape (n, 2).  It must be
        symmetric enough that its sum over any centred ball is real.
    inner_radius : float
        Radius of the exact partial sum.
    kappa : float
        Lattice constant.
    majorant : callable
        Decreasing function f(t) with |summand(k)| <= f(|k|) for |k| > inner_radius.
    radial_average : callable, optional
        r -> int_0^{2 pi} summand(r, theta) dtheta, the angular integral of the
        summand on the circle of radius r (continuum extension).  When given,
        the returned value is a smoothly windowed lattice sum plus the
        continuum integral of the remainder, which converges much faster than
        the plain partial sum.

    Returns
    -------
    LatticeSum
        ``error_bound`` dominates the distance of ``value`` to the infinite
        sum: it is the comparison bound on the tail plus, in windowed mode,
        the distance between the windowed value and the plain partial sum.
    """
    n = _ball(kappa, inner_radius)
    vals = np.asarray(summand(n), dtype=float)
    partial = float(np.sum(vals))
    bound = lattice_tail_bound(majorant, inner_radius, kappa)
    if radial_average is None:
        return LatticeSum(partial, bound, inner_radius)
    centre, width = window_scales(inner_radius)
    r = kappa * np.sqrt((n * n).sum(axis=1))
    w = 0.5 * special.erfc((r - centre) / width)
    smooth = float(np.sum(vals * w))
    r_lo = max(centre - 6.0 * width, 0.0)

    def outer(t):
        return 0.5 * special.erfc((centre - t) / width) * radial_average(np.asarray(t)) * t

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        inside, _ = integrate.quad(outer, r_lo, inner_radius, limit=400, points=[centre],
                                   epsabs=1e-15, epsrel=1e-14)
        beyond, _ = integrate.quad(lambda t: radial_average(np.asarray(t)) * t, inner_radius,
                                   np.inf, limit=400, epsabs=1e-16, epsrel=1e-14)
    value = smooth + (inside + beyond) / kappa ** 2
    return LatticeSum(value, abs(value - partial) + bound, inner_radius)
