"""Truncated second-quantized sectors and exact diagonalization.

A physical sector holds N fermions and the impurity b, an angel sector
holds N fermions and the auxiliary angel mode m.  States are stored as an
extra-particle momentum (impurity or angel) plus a strictly increasing tuple
of fermion mode indices; the global mode order is the lattice order of
``lattice.sort_momenta``.  Fermionic signs follow from that order:
annihilating the fermion at position j of the tuple gives (-1)**j, creating
one that lands at position j gives (-1)**j as well.

Impurity and angel operators commute with the fermions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence, TextIO

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .lattice import (CutoffScheme, ModelParams, coupling_constant, coupling_inverse,
                      enumerate_ball, kinetic, make_scheme)
from .schur import DENSE_CAP, SpectralReport, ZERO_BAND, NUDGE

SECTOR_CAP = 3_000_000
# factored operators switch to shift-invert well below the dense cap
FACTORED_DENSE_LIMIT = 512
PHYSICAL = "physical"
ANGEL = "angel"


@dataclass(frozen=True)
class SectorBasis:
    """Enumerated basis of a truncated sector.

    ``fermions[i]`` are the mode indices (into ``modes``) of state i and
    ``extra[i]`` the integer momentum of its impurity or angel particle.
    """

    n_fermions: int
    kind: str
    basis_radius: float
    momentum_block: Optional[tuple]
    kappa: float
    modes: np.ndarray = field(repr=False)
    fermions: np.ndarray = field(repr=False)
    extra: np.ndarray = field(repr=False)
    _keys: np.ndarray = field(repr=False)
    _order: np.ndarray = field(repr=False)
    _extra_span: int = field(repr=False)

    @property
    def dim(self) -> int:
        return self.fermions.shape[0]

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    def fermion_energy(self) -> np.ndarray:
        k2 = kinetic(self.modes, self.kappa)
        if self.n_fermions == 0:
            return np.zeros(self.dim)
        return k2[self.fermions].sum(axis=1)

    def total_momentum(self) -> np.ndarray:
        tot = self.extra.copy()
        if self.n_fermions:
            tot += self.modes[self.fermions].sum(axis=1)
        return tot

    def keys_of(self, fermions: np.ndarray, extra: np.ndarray) -> np.ndarray:
        return _encode(fermions, extra, self.n_modes, self._extra_span)

    def lookup(self, fermions: np.ndarray, extra: np.ndarray) -> np.ndarray:
        """Row indices of the given states, -1 where absent."""
        keys = self.keys_of(fermions, extra)
        pos = np.searchsorted(self._keys, keys)
        pos = np.clip(pos, 0, len(self._keys) - 1)
        hit = self._keys[pos] == keys if len(self._keys) else np.zeros(len(keys), bool)
        out = np.full(len(keys), -1, dtype=np.int64)
        out[hit] = self._order[pos[hit]]
        return out

    def state(self, i: int) -> tuple:
        ext = tuple(int(x) for x in self.extra[i])
        fer = tuple(tuple(int(x) for x in self.modes[j]) for j in self.fermions[i])
        return ext, fer


def _encode(fermions, extra, n_modes, span):
    fermions = np.asarray(fermions, dtype=np.int64)
    extra = np.asarray(extra, dtype=np.int64)
    key = np.zeros(len(extra), dtype=np.int64)
    for j in range(fermions.shape[1] if fermions.ndim == 2 else 0):
        key = key * n_modes + fermions[:, j]
    half = span // 2
    ex = (extra[:, 0] + half) * span + (extra[:, 1] + half)
    return key * (span * span) + ex


def build_sector(params: ModelParams, n_fermions: int, kind: str, basis_radius: float,
                 momentum_block=None, cap: int = SECTOR_CAP) -> SectorBasis:
    """Enumerate a physical or angel sector truncated at ``basis_radius``.

    Fermion and impurity momenta satisfy |k| <= basis_radius.  Angel momenta
    are restricted to |q| <= 2 basis_radius, the range reachable from the
    physical sector of the same radius.
    """
    if kind not in (PHYSICAL, ANGEL):
        raise ValueError(f"kind must be {PHYSICAL!r} or {ANGEL!r}")
    if basis_radius < params.kappa * (1 - 1e-12):
        raise ValueError("basis_radius must be at least kappa")
    if n_fermions < 0:
        raise ValueError("n_fermions must be nonnegative")
    kappa = params.kappa
    modes = enumerate_ball(params, basis_radius)
    m = len(modes)
    if math.comb(m, n_fermions) > 20 * cap:
        raise ValueError(f"sector too large: {math.comb(m, n_fermions)} fermion configurations")
    if n_fermions:
        combos = np.array(list(combinations(range(m), n_fermions)), dtype=np.int64).reshape(-1, n_fermions)
        ftot = modes[combos].sum(axis=1)
    else:
        combos = np.zeros((1, 0), dtype=np.int64)
        ftot = np.zeros((1, 2), dtype=np.int64)
    extra_radius = basis_radius if kind == PHYSICAL else 2.0 * basis_radius
    rmax2 = (extra_radius / kappa) ** 2 * (1 + 1e-12) + 1e-12
    if momentum_block is not None:
        qb = np.asarray(momentum_block, dtype=np.int64).reshape(2)
        ext = qb[None, :] - ftot
        keep = (ext * ext).sum(axis=1) <= rmax2
        fer, ext = combos[keep], ext[keep]
    else:
        pool = enumerate_ball(params, extra_radius)
        dim = len(combos) * len(pool)
        if dim > cap:
            raise ValueError(f"sector dimension {dim} exceeds cap {cap}")
        fer = np.repeat(combos, len(pool), axis=0)
        ext = np.tile(pool, (len(combos), 1))
    if len(fer) > cap:
        raise ValueError(f"sector dimension {len(fer)} exceeds cap {cap}")
    span = 2 * int(math.ceil(2.0 * basis_radius / kappa)) + 3
    keys = _encode(fer, ext, m, span)
    order = np.argsort(keys, kind="stable")
    block = None if momentum_block is None else tuple(int(x) for x in momentum_block)
    return SectorBasis(n_fermions, kind, float(basis_radius), block, kappa, modes,
                       fer, ext, keys[order], order, span)


def sector_dimension_oracle(params: ModelParams, n_fermions: int, basis_radius: float,
                            momentum_block=(0, 0)) -> int:
    """Count physical states by direct enumeration (loops, no encoding)."""
    modes = [tuple(x) for x in enumerate_ball(params, basis_radius)]
    r2 = (basis_radius / params.kappa) ** 2 + 1e-9
    count = 0
    for combo in combinations(modes, n_fermions):
        px = momentum_block[0] - sum(c[0] for c in combo)
        py = momentum_block[1] - sum(c[1] for c in combo)
        if px * px + py * py <= r2:
            count += 1
    return count


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@dataclass
class SparseOperator:
    matrix: sp.csr_matrix
    hermitian: bool = False
    kind: str = PHYSICAL
    momentum_block: Optional[tuple] = None

    @property
    def dim_row(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim_col(self) -> int:
        return self.matrix.shape[1]

    def entries(self):
        coo = self.matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def write_triplets(self, stream: TextIO):
        """Sparse triplet text export: header lines then ``row col re im``."""
        blk = "none" if self.momentum_block is None else f"{self.momentum_block[0]} {self.momentum_block[1]}"
        stream.write("# bspolaron sparse triplets v1\n")
        stream.write(f"# dims {self.dim_row} {self.dim_col}\n")
        stream.write(f"# kind {self.kind}\n")
        stream.write(f"# momentum_block {blk}\n")
        coo = self.matrix.tocoo()
        data = coo.data.astype(complex)
        for r, c, v in zip(coo.row, coo.col, data):
            stream.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def read_triplets(stream: TextIO) -> SparseOperator:
    dims, kind, block = None, PHYSICAL, None
    rows, cols, vals = [], [], []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[0] == "dims":
                dims = (int(parts[1]), int(parts[2]))
            elif parts[0] == "kind":
                kind = parts[1]
            elif parts[0] == "momentum_block" and parts[1] != "none":
                block = (int(parts[1]), int(parts[2]))
            continue
        r, c, re, im = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(complex(float(re), float(im)))
    if dims is None:
        raise ValueError("missing dims header")
    mat = sp.csr_matrix((np.array(vals), (rows, cols)), shape=dims)
    if np.all(np.imag(mat.data) == 0):
        mat = mat.real.tocsr()
    return SparseOperator(mat, False, kind, block)


def assemble_h0(basis: SectorBasis, params: ModelParams) -> SparseOperator:
    """Kinetic energy on the sector (the angel mode carries none)."""
    diag = basis.fermion_energy()
    if basis.kind == PHYSICAL:
        diag = diag + kinetic(basis.extra, basis.kappa) / params.impurity_mass
    return SparseOperator(sp.diags(diag, format="csr"), True, basis.kind, basis.momentum_block)


def _remove(fer: np.ndarray, j: int) -> np.ndarray:
    return np.delete(fer, j, axis=1)


def _insert(rest: np.ndarray, new: np.ndarray):
    """Insert mode ``new`` into sorted rows; returns (sets, sign, valid)."""
    pos = (rest < new[:, None]).sum(axis=1)
    valid = ~np.any(rest == new[:, None], axis=1)
    out = np.sort(np.concatenate([rest, new[:, None]], axis=1), axis=1)
    sign = np.where(pos % 2 == 0, 1.0, -1.0)
    return out, sign, valid


def assemble_v(scheme: CutoffScheme, physical: SectorBasis, angel: SectorBasis) -> SparseOperator:
    """V = sum_{k,q} alpha(k) beta(q-k) m_q^* b_{q-k} a_k from physical N to angel N-1."""
    if physical.kind != PHYSICAL or angel.kind != ANGEL:
        raise ValueError("assemble_v needs a physical and an angel basis")
    if angel.n_fermions != physical.n_fermions - 1:
        raise ValueError("angel sector must hold one fermion less")
    if not np.array_equal(angel.modes, physical.modes):
        raise ValueError("sectors must share the same mode set")
    rows, cols, vals = [], [], []
    imp = physical.extra
    b_imp = scheme.beta(imp)
    for j in range(physical.n_fermions):
        kidx = physical.fermions[:, j]
        kmom = physical.modes[kidx]
        coef = scheme.alpha(kmom) * b_imp * (1.0 if j % 2 == 0 else -1.0)
        nz = np.flatnonzero(coef)
        if nz.size == 0:
            continue
        q = kmom[nz] + imp[nz]
        rest = _remove(physical.fermions[nz], j)
        target = angel.lookup(rest, q)
        if np.any(target < 0):
            raise ValueError("angel sector does not contain every image of V")
        rows.append(target)
        cols.append(nz)
        vals.append(coef[nz])
    mat = _coo(rows, cols, vals, (angel.dim, physical.dim))
    return SparseOperator(mat, False, "map", physical.momentum_block)


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    return sp.csr_matrix((v, (r, c)), shape=shape)


def assemble_w(scheme: CutoffScheme, physical: SectorBasis) -> SparseOperator:
    """W = sum alpha(k)alpha(l)beta(q-k)beta(q-l) a_k^* b_{q-k}^* b_{q-l} a_l, built directly."""
    supp = scheme.support()
    sup_idx = _mode_positions(physical, supp)
    if np.any(sup_idx < 0):
        raise ValueError("basis_radius must cover the cutoff support")
    rows, cols, vals = [], [], []
    imp = physical.extra
    b_imp = scheme.beta(imp)
    alpha_sup = scheme.alpha(supp)
    for j in range(physical.n_fermions):
        lidx = physical.fermions[:, j]
        lmom = physical.modes[lidx]
        c0 = scheme.alpha(lmom) * b_imp * (1.0 if j % 2 == 0 else -1.0)
        nz = np.flatnonzero(c0)
        if nz.size == 0:
            continue
        q = lmom[nz] + imp[nz]
        rest = _remove(physical.fermions[nz], j)
        for kk, kidx in enumerate(sup_idx):
            if alpha_sup[kk] == 0:
                continue
            newimp = q - supp[kk][None, :]
            bq = scheme.beta(newimp)
            sets, sign, valid = _insert(rest, np.full(len(nz), kidx))
            coef = c0[nz] * alpha_sup[kk] * bq * sign
            ok = valid & (coef != 0)
            if not np.any(ok):
                continue
            target = physical.lookup(sets[ok], newimp[ok])
            inb = target >= 0
            rows.append(target[inb])
            cols.append(nz[ok][inb])
            vals.append(coef[ok][inb])
    mat = _coo(rows, cols, vals, (physical.dim, physical.dim))
    return SparseOperator(mat, True, PHYSICAL, physical.momentum_block)


def _mode_positions(basis: SectorBasis, momenta: np.ndarray) -> np.ndarray:
    table = {(int(a), int(b)): i for i, (a, b) in enumerate(basis.modes)}
    return np.array([table.get((int(a), int(b)), -1) for a, b in momenta], dtype=np.int64)


def angel_partner(params: ModelParams, physical: SectorBasis) -> SectorBasis:
    """Angel sector receiving V from ``physical`` (same radius and block)."""
    return build_sector(params, physical.n_fermions - 1, ANGEL, physical.basis_radius,
                        physical.momentum_block)


def regularized_hamiltonian(scheme: CutoffScheme, params: ModelParams, basis: SectorBasis,
                            v: Optional[SparseOperator] = None) -> SparseOperator:
    """H = H0 - g W on the physical sector, with W = V^* V."""
    if basis.kind != PHYSICAL:
        raise ValueError("regularized_hamiltonian acts on physical sectors")
    g = coupling_constant(scheme, params)
    h0 = assemble_h0(basis, params).matrix
    if basis.n_fermions == 0:
        return SparseOperator(h0, True, PHYSICAL, basis.momentum_block)
    if v is None:
        v = assemble_v(scheme, basis, angel_partner(params, basis))
    w = (v.matrix.T @ v.matrix).tocsr()
    return SparseOperator((h0 - g * w).tocsr(), True, PHYSICAL, basis.momentum_block)


@dataclass
class FactoredHamiltonian:
    """H = diag(h0) - g V^* V kept in factored form for large sectors."""

    h0: np.ndarray
    v: sp.csr_matrix
    g: float

    @property
    def shape(self) -> tuple:
        return (self.h0.size, self.h0.size)

    def matvec(self, x):
        return self.h0 * x - self.g * (self.v.conj().T @ (self.v @ x))

    def to_sparse(self) -> sp.csr_matrix:
        return (sp.diags(self.h0) - self.g * (self.v.conj().T @ self.v)).tocsr()

    def lower_bound(self) -> float:
        vv = self.v @ self.v.conj().T
        norm2 = np.abs(vv).sum(axis=1).max() if vv.shape[0] else 0.0
        return float(self.h0.min() - self.g * norm2)

    def shifted_solver(self, sigma: float):
        """x -> (H - sigma)^{-1} x through the Krein resolvent formula."""
        r0 = 1.0 / (self.h0 - sigma)
        v = self.v
        phi = np.eye(v.shape[0]) / self.g - (v @ sp.diags(r0) @ v.conj().T).toarray()
        lu = np.linalg.inv(phi)

        def solve(x):
            y = r0 * x
            return y + r0 * (v.conj().T @ (lu @ (v @ y)))
        return solve


def factored_hamiltonian(scheme: CutoffScheme, params: ModelParams, basis: SectorBasis) -> FactoredHamiltonian:
    if basis.kind != PHYSICAL:
        raise ValueError("factored_hamiltonian acts on physical sectors")
    h0 = assemble_h0(basis, params).matrix.diagonal()
    v = assemble_v(scheme, basis, angel_partner(params, basis)).matrix
    return FactoredHamiltonian(h0, v, coupling_constant(scheme, params))


def lowest_eigenpairs(op, count: int = 1, tol: float = 1e-9) -> SpectralReport:
    """Lowest ``count`` eigenpairs of a Hermitian operator with residuals.

    Accepts a SparseOperator, a dense array or a FactoredHamiltonian.  Dense
    diagonalization below DENSE_CAP; above it Lanczos on sparse matrices or
    shift-invert for factored ones.  Residuals |Hv - lambda v| are verified.
    """
    if isinstance(op, FactoredHamiltonian):
        n = op.shape[0]
        if n <= FACTORED_DENSE_LIMIT:
            return lowest_eigenpairs(op.to_sparse(), count, tol)
        sigma = op.lower_bound() - 1.0
        lin = spla.LinearOperator(op.shape, matvec=op.matvec, dtype=float)
        inv = spla.LinearOperator(op.shape, matvec=op.shifted_solver(sigma), dtype=float)
        w, v = spla.eigsh(lin, k=count, sigma=sigma, OPinv=inv, which="LM", tol=0)
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        res = np.array([np.linalg.norm(op.matvec(v[:, i]) - w[i] * v[:, i]) for i in range(len(w))])
        _check_residuals(res, w, tol)
        return SpectralReport(w, res, v)
    mat = op.matrix if isinstance(op, SparseOperator) else op
    dense = not sp.issparse(mat)
    n = mat.shape[0]
    if dense:
        arr = np.asarray(mat)
        herm_err = np.abs(arr - arr.conj().T).max(initial=0.0)
        scale = np.abs(arr).max(initial=0.0)
    else:
        diff = (mat - mat.conj().T)
        herm_err = np.abs(diff.data).max(initial=0.0) if diff.nnz else 0.0
        scale = np.abs(mat.data).max(initial=0.0) if mat.nnz else 0.0
    if herm_err > 1e-12 * max(1.0, scale):
        raise ValueError("operator is not Hermitian")
    count = min(count, n)
    if n <= DENSE_CAP:
        arr = mat.toarray() if not dense else np.asarray(mat)
        w, v = np.linalg.eigh(arr)
        w, v = w[:count], v[:, :count]
    else:
        w, v = spla.eigsh(mat, k=count, which="SA", tol=0)
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    res = np.linalg.norm(mat @ v - v * w[None, :], axis=0)
    _check_residuals(res, w, tol)
    return SpectralReport(w, res, v)


def _check_residuals(res, w, tol):
    if np.any(res > tol * max(1.0, np.abs(w).max(initial=1.0))):
        raise RuntimeError(f"eigenpair residual {res.max():.3e} exceeds {tol}")


# ---------------------------------------------------------------------------
# Birman-Schwinger operator on angel sectors
# ---------------------------------------------------------------------------

def physical_partner(params: ModelParams, angel: SectorBasis) -> SectorBasis:
    return build_sector(params, angel.n_fermions + 1, PHYSICAL, angel.basis_radius, angel.momentum_block)


def phi_n_direct(scheme: CutoffScheme, params: ModelParams, z: complex, angel: SectorBasis,
                 physical: Optional[SectorBasis] = None, v: Optional[SparseOperator] = None):
    """phi_n(z) = 1/g - V (H0 - z)^{-1} V^* through the physical sector."""
    if physical is None:
        physical = physical_partner(params, angel)
    if v is None:
        v = assemble_v(scheme, physical, angel)
    h0 = assemble_h0(physical, params).matrix.diagonal()
    if np.any(np.abs(h0 - z) <= 1e-14 * max(1.0, h0.max(initial=0.0))):
        raise ValueError(f"resolvent pole at z = {z}")
    ginv = coupling_inverse(scheme, params)
    vm = v.matrix
    middle = vm @ sp.diags(1.0 / (h0 - z)) @ vm.conj().T
    return (ginv * sp.identity(angel.dim, format="csr") - middle).tocsr()


class NormalOrderedPhi:
    """phi_n(z) = phi0_n(z) + phiI_n(z) assembled in normal-ordered form.

    The angel sector fixes the geometry; ``at(z)`` returns the sparse matrix
    for any z off the free spectrum, reusing the z-independent structure.

    With ``pauli_exact`` the Pauli-forbidden pairs (an intermediate fermion
    landing on an occupied mode) are dropped from both pieces.  They cancel
    identically between phi0 and phiI, so the matrix is unchanged, but the
    spurious poles they carry disappear.
    """

    _CHUNK = 1 << 20

    def __init__(self, scheme: CutoffScheme, params: ModelParams, angel: SectorBasis,
                 pauli_exact: bool = True):
        if angel.kind != ANGEL:
            raise ValueError("NormalOrderedPhi needs an angel sector")
        self.scheme, self.params, self.angel = scheme, params, angel
        self.pauli_exact = pauli_exact
        self.ginv = coupling_inverse(scheme, params)
        kappa, m_inv = params.kappa, 1.0 / params.impurity_mass
        supp = scheme.support()
        pos = _mode_positions(angel, supp)
        if np.any(pos < 0):
            raise ValueError("basis_radius must cover the cutoff support")
        self.supp, a_sup = supp, scheme.alpha(supp)
        p2 = angel.fermion_energy()
        q = angel.extra
        # phi0: diagonal, depends on (q, P^2) only up to the Pauli mask
        keyq = np.concatenate([q, np.round(p2 / kappa ** 2).astype(np.int64)[:, None]], axis=1)
        uniq, inv = np.unique(keyq, axis=0, return_inverse=True)
        self._inv = inv.ravel()
        uq = uniq[:, :2]
        up2 = uniq[:, 2] * kappa ** 2
        k2 = kinetic(supp, kappa)
        diff = uq[:, None, :] - supp[None, :, :]
        self._g_num = a_sup[None, :] ** 2 * scheme.beta(diff.reshape(-1, 2)).reshape(len(uq), -1) ** 2
        self._g_den = up2[:, None] + kinetic(diff.reshape(-1, 2), kappa).reshape(len(uq), -1) * m_inv + k2[None, :]
        # support slot of each occupied mode (-1 if outside the support)
        slot = np.full(angel.n_modes, -1, dtype=np.int64)
        slot[pos] = np.arange(len(supp))
        self._occ = slot[angel.fermions] if angel.n_fermions else np.zeros((angel.dim, 0), dtype=np.int64)
        # phiI: off-diagonal exchange
        rows, cols, nums, dens = [], [], [], []
        n = angel.n_fermions
        for j in range(n):
            kidx = angel.fermions[:, j]
            kmom = angel.modes[kidx]
            ak = scheme.alpha(kmom) * (1.0 if j % 2 == 0 else -1.0)
            nz = np.flatnonzero(ak)
            if nz.size == 0:
                continue
            rest = _remove(angel.fermions[nz], j)
            for ll, lidx in enumerate(pos):
                if a_sup[ll] == 0:
                    continue
                lmom = supp[ll]
                qq = q[nz] - lmom[None, :]
                bq = scheme.beta(qq) ** 2
                sets, sign, valid = _insert(rest, np.full(len(nz), lidx))
                coef = ak[nz] * a_sup[ll] * bq * sign
                ok = valid & (coef != 0)
                if pauli_exact:
                    ok &= kidx[nz] != lidx
                if not np.any(ok):
                    continue
                newq = qq[ok] + kmom[nz][ok]
                target = angel.lookup(sets[ok], newq)
                inb = target >= 0
                rows.append(target[inb])
                cols.append(nz[ok][inb])
                nums.append(coef[ok][inb])
                den = p2[nz][ok] + kinetic(qq[ok], kappa) * m_inv + kinetic(lmom, kappa)
                dens.append(den[inb])
        if rows:
            self._rows, self._cols = np.concatenate(rows), np.concatenate(cols)
            self._nums, self._dens = np.concatenate(nums), np.concatenate(dens)
        else:
            self._rows = self._cols = np.zeros(0, dtype=np.int64)
            self._nums = self._dens = np.zeros(0)
        # lowest intermediate energy carrying weight: nothing below it is a pole
        floor0 = np.inf
        for lo, hi in self._chunks():
            num, den = self._state_terms(lo, hi)
            live = num != 0
            if np.any(live):
                floor0 = min(floor0, float(den[live].min()))
        self.pole_floor = float(min(floor0, self._dens.min(initial=np.inf)))

    def _chunks(self):
        step = max(1, self._CHUNK // max(1, len(self.supp)))
        for lo in range(0, self.angel.dim, step):
            yield lo, min(lo + step, self.angel.dim)

    def _state_terms(self, lo: int, hi: int):
        g = self._inv[lo:hi]
        num = self._g_num[g]
        if self.pauli_exact and self._occ.shape[1]:
            occ = self._occ[lo:hi]
            r, c = np.nonzero(occ >= 0)
            num = num.copy()
            num[r, occ[r, c]] = 0.0
        return num, self._g_den[g]

    def _diag(self, z: complex, power: int) -> np.ndarray:
        out = np.empty(self.angel.dim, dtype=np.result_type(float, z))
        if not self.pauli_exact:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(self._g_num != 0, self._g_num / (self._g_den - z) ** power, 0.0)
            return t.sum(axis=1)[self._inv]
        for lo, hi in self._chunks():
            num, den = self._state_terms(lo, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(num != 0, num / (den - z) ** power, 0.0)
            out[lo:hi] = t.sum(axis=1)
        return out

    def diagonal0(self, z: complex) -> np.ndarray:
        return self.ginv - self._diag(z, 1)

    def interaction(self, z: complex) -> sp.csr_matrix:
        shape = (self.angel.dim, self.angel.dim)
        return sp.csr_matrix((self._nums / (self._dens - z), (self._rows, self._cols)), shape=shape)

    def at(self, z: complex) -> sp.csr_matrix:
        return (sp.diags(self.diagonal0(z)) + self.interaction(z)).tocsr()

    def derivative(self, z: float) -> sp.csr_matrix:
        shape = (self.angel.dim, self.angel.dim)
        inter = sp.csr_matrix((self._nums / (self._dens - z) ** 2, (self._rows, self._cols)), shape=shape)
        return (sp.diags(-self._diag(z, 2)) + inter).tocsr()


class PairSectorPhi:
    """phi_2(z) on the N = 2, Q = 0 sector restricted to lattice-symmetric states.

    The angel sector holds one fermion p with angel momentum -p.  The kernel
    commutes with the square's point group, so on invariant vectors only
    rows at orbit representatives are needed:
    <e_i|phi|e_j> = sqrt(|O_i|/|O_j|) sum_{l in O_j} phi(r_i, l).
    """

    _CHUNK = 1 << 22

    def __init__(self, scheme: CutoffScheme, params: ModelParams):
        kappa, m_inv = params.kappa, 1.0 / params.impurity_mass
        self.ginv = coupling_inverse(scheme, params)
        supp = scheme.support()
        canon = np.sort(np.abs(supp), axis=1)[:, ::-1]
        reps, orbit, size = np.unique(canon, axis=0, return_inverse=True, return_counts=True)
        self.reps, self.sizes, self.n_orbits = reps, size, len(reps)
        self._a_sup, self._a_rep = scheme.alpha(supp), scheme.alpha(reps)
        k2, r2 = kinetic(supp, kappa), kinetic(reps, kappa)
        rep_slot = _mode_positions_of(supp, reps)
        n_orb, n_sup = len(reps), len(supp)
        self._den = np.empty((n_orb, n_sup))
        self._b2 = np.empty((n_orb, n_sup))
        for lo, hi in self._chunks(n_orb, n_sup):
            tot = (reps[lo:hi, None, :] + supp[None, :, :]).reshape(-1, 2)
            shape = (hi - lo, n_sup)
            self._b2[lo:hi] = scheme.beta(tot).reshape(shape) ** 2
            self._den[lo:hi] = r2[lo:hi, None] + k2[None, :] + m_inv * kinetic(tot, kappa).reshape(shape)
        # same-mode pairs are Pauli forbidden in both pieces
        self._b2[np.arange(n_orb), rep_slot] = 0.0
        self._gather = sp.csr_matrix((np.ones(n_sup), (np.arange(n_sup), orbit.ravel())),
                                     shape=(n_sup, n_orb))
        self._scale = np.sqrt(size[:, None] / size[None, :])
        floor = np.inf
        for lo, hi in self._chunks(n_orb, n_sup):
            live = self._b2[lo:hi] != 0
            if np.any(live):
                floor = min(floor, float(self._den[lo:hi][live].min()))
        self.pole_floor = floor

    def _chunks(self, n_rows: int, n_cols: int):
        step = max(1, self._CHUNK // max(1, n_cols))
        for lo in range(0, n_rows, step):
            yield lo, min(lo + step, n_rows)

    def _build(self, z: float, power: int, g: float) -> np.ndarray:
        n_orb = self.n_orbits
        diag = np.empty(n_orb)
        off = np.empty((n_orb, n_orb))
        a2 = self._a_sup ** 2
        for lo, hi in self._chunks(n_orb, len(self._a_sup)):
            t = self._b2[lo:hi] / (self._den[lo:hi] - z) ** power
            diag[lo:hi] = g - t @ a2
            off[lo:hi] = (self._gather.T @ (t * self._a_sup[None, :]).T).T * self._a_rep[lo:hi, None]
        off *= self._scale
        off[np.diag_indices(n_orb)] += diag
        return off

    def at(self, z: float) -> np.ndarray:
        return self._build(z, 1, self.ginv)

    def derivative(self, z: float) -> np.ndarray:
        return self._build(z, 2, 0.0)


def _mode_positions_of(table_momenta: np.ndarray, momenta: np.ndarray) -> np.ndarray:
    table = {(int(a), int(b)): i for i, (a, b) in enumerate(table_momenta)}
    return np.array([table[(int(a), int(b))] for a, b in momenta], dtype=np.int64)


def pair_ground_energy(scheme: CutoffScheme, params: ModelParams, xtol: float = 1e-12) -> float:
    """Symmetric ground energy of H_n on the N = 2, Q = 0 sector."""
    return bs_ground_energy(scheme, params, 2, phi=PairSectorPhi(scheme, params), xtol=xtol)


class ProjectedPhi:
    """W^T phi(z) W for a fixed set of real trial vectors (columns of W)."""

    def __init__(self, phi, vectors: np.ndarray):
        self.phi, self.w = phi, np.asarray(vectors, dtype=float)
        self.pole_floor = phi.pole_floor

    def at(self, z: float) -> np.ndarray:
        m = self.phi.at(z) @ self.w
        return self.w.T @ m

    def derivative(self, z: float) -> np.ndarray:
        return self.w.T @ (self.phi.derivative(z) @ self.w)


def fermi_sea_trial_vectors(params: ModelParams, angel: SectorBasis, occupied: np.ndarray) -> np.ndarray:
    """Columns m_q^* a_q |FS> for q in ``occupied``, in the angel basis."""
    occ_idx = _mode_positions(angel, occupied)
    if np.any(occ_idx < 0):
        raise ValueError("basis does not contain the Fermi sea")
    order = np.sort(occ_idx)
    cols = np.zeros((angel.dim, len(occupied)))
    for c, (q, qi) in enumerate(zip(occupied, occ_idx)):
        j = int(np.searchsorted(order, qi))
        rest = np.delete(order, j)[None, :]
        row = angel.lookup(rest, np.asarray(q, dtype=np.int64)[None, :])[0]
        if row < 0:
            raise ValueError("trial state outside the angel sector")
        cols[row, c] = -1.0 if j % 2 else 1.0
    return cols


def phi_n_matrix(scheme: CutoffScheme, params: ModelParams, z: complex, angel: SectorBasis,
                 method: str = "direct", pauli_exact: bool = False):
    """phi_n(z) on a truncated angel sector, via V R0 V^* or normal ordering."""
    if method == "direct":
        return phi_n_direct(scheme, params, z, angel)
    if method == "normal":
        return NormalOrderedPhi(scheme, params, angel, pauli_exact).at(z)
    raise ValueError(f"unknown method {method!r}")


def angel_function(scheme: CutoffScheme, params: ModelParams, lam: float, q) -> float:
    """f(lam, q) = 1/g - sum_k alpha^2(k) beta^2(q-k) / ((q-k)^2/M + k^2 - lam)."""
    supp = scheme.support()
    q = np.asarray(q, dtype=np.int64).reshape(1, 2)
    diff = q - supp
    num = scheme.alpha(supp) ** 2 * scheme.beta(diff) ** 2
    den = kinetic(diff, params.kappa) / params.impurity_mass + kinetic(supp, params.kappa) - lam
    nz = num != 0
    return float(coupling_inverse(scheme, params) - np.sum(num[nz] / den[nz]))


def smoothed_form_trend(params: ModelParams, kind: str, radii: Sequence[float], eps_grid: Sequence[float],
                        z: float = -1.0, angel_state=None) -> np.ndarray:
    """<w, V_n R0(z) (1 + eps H0)^-1 V_n^* w> on a cutoff ladder (radii in kappa).

    Rows follow ``radii``, columns follow ``eps_grid``.  ``w`` defaults to the
    single angel mode q = 0 with no fermions.  For each fixed cutoff the
    values saturate as eps -> 0, while the saturated values keep growing
    with the cutoff: a finite-size trace of the limit vector leaving the
    form domain of H0.  Diagnostic only.
    """
    out = np.empty((len(radii), len(eps_grid)))
    for i, r in enumerate(radii):
        scheme = make_scheme(kind, r * params.kappa, params)
        angel = build_sector(params, 0, ANGEL, scheme.support_radius, (0, 0))
        physical = physical_partner(params, angel)
        v = assemble_v(scheme, physical, angel).matrix
        h0 = assemble_h0(physical, params).matrix.diagonal()
        w = np.zeros(angel.dim) if angel_state is None else np.asarray(angel_state, dtype=complex)
        if angel_state is None:
            w[0] = 1.0
        u = np.abs(v.conj().T @ w) ** 2
        for j, eps in enumerate(eps_grid):
            out[i, j] = float(np.sum(u / ((h0 - z) * (1.0 + eps * h0))))
    return out


def two_body_vector(scheme: CutoffScheme, params: ModelParams, basis: SectorBasis) -> np.ndarray:
    """Coefficients alpha(k)beta(-k)/((1+1/M)k^2 - E_B) on the N = 1, Q = 0 sector."""
    if basis.n_fermions != 1 or basis.momentum_block != (0, 0):
        raise ValueError("needs the N = 1, Q = 0 physical sector")
    k = basis.modes[basis.fermions[:, 0]]
    den = params.pair_factor * kinetic(k, params.kappa) - params.binding_energy
    return scheme.alpha(k) * scheme.beta(-k) / den


# ---------------------------------------------------------------------------
# ground energies and counting on sectors
# ---------------------------------------------------------------------------

def _lowest_sparse(mat, v0=None):
    n = mat.shape[0]
    if not sp.issparse(mat) or n <= 1200:
        arr = mat.toarray() if sp.issparse(mat) else mat
        w, v = sla.eigh(arr, subset_by_index=[0, 0])
        return w[0], v[:, 0]
    w, v = spla.eigsh(mat, k=1, which="SA", tol=1e-13, v0=v0)
    return w[0], v[:, 0]


def bs_ground_energy(scheme: CutoffScheme, params: ModelParams, n_fermions: int,
                     basis_radius: Optional[float] = None, momentum_block=(0, 0),
                     xtol: float = 1e-12, phi: Optional[NormalOrderedPhi] = None) -> float:
    """Ground energy of H_n on the N-fermion sector below the free spectrum.

    Solved as the unique zero of E -> mu_1(phi_n(E)), which is strictly
    decreasing; the counting principle makes it the lowest eigenvalue of H_n.
    """
    if phi is None:
        if basis_radius is None:
            basis_radius = scheme.support_radius
        angel = build_sector(params, n_fermions - 1, ANGEL, basis_radius, momentum_block)
        phi = NormalOrderedPhi(scheme, params, angel)
    top = phi.pole_floor
    state = {"v": None}

    def f(e):
        val, vec = _lowest_sparse(phi.at(e), state["v"])
        state["v"] = vec
        return val

    hi = top - 1e-9 * max(1.0, abs(top))
    if f(hi) >= 0:
        raise ValueError("no bound state below the free spectrum")
    lo = min(params.binding_energy, hi) - 1.0
    step = 1.0
    while f(lo) <= 0:
        step *= 2.0
        lo -= step
    # safeguarded Newton on the decreasing function mu_1(phi(E))
    a, b = lo, hi
    x = 0.5 * (a + b)
    for _ in range(200):
        val, vec = _lowest_sparse(phi.at(x), state["v"])
        state["v"] = vec
        if val > 0:
            a = x
        else:
            b = x
        deriv = float(vec @ (phi.derivative(x) @ vec))
        xn = x - val / deriv if deriv < 0 else 0.5 * (a + b)
        if not (a < xn < b):
            xn = 0.5 * (a + b)
        if abs(xn - x) <= xtol * max(1.0, abs(x)) or b - a <= xtol:
            return float(xn)
        x = xn
    return float(x)


def sector_counting(scheme: CutoffScheme, params: ModelParams, n_fermions: int,
                    basis_radius: float, energies: Sequence[float], momentum_block=(0, 0)):
    """(E, #eig(H_n) < E, #neg eig(phi_n(E))) on a physical sector.

    H_n is diagonalized on the truncated physical sector; phi_n(E) is built
    from the same V, so the counting principle holds exactly.
    """
    phys = build_sector(params, n_fermions, PHYSICAL, basis_radius, momentum_block)
    angel = angel_partner(params, phys)
    v = assemble_v(scheme, phys, angel)
    h = regularized_hamiltonian(scheme, params, phys, v).matrix
    h0min = assemble_h0(phys, params).matrix.diagonal().min()
    energies = np.asarray(energies, dtype=float)
    if np.any(energies >= h0min):
        raise ValueError("outside the variational window")
    emax = energies.max()
    if phys.dim <= DENSE_CAP:
        evals = np.linalg.eigvalsh(h.toarray())
    else:
        k = 6
        while True:
            evals = np.sort(spla.eigsh(h, k=min(k, phys.dim - 1), which="SA", tol=0,
                                       return_eigenvectors=False))
            if evals[-1] > emax + 1e-6 or k >= phys.dim - 1:
                break
            k *= 2
    rows = []
    for e in energies:
        for _ in range(8):
            phi = phi_n_direct(scheme, params, e, angel, phys, v)
            mu = np.linalg.eigvalsh(phi.toarray())
            if not (np.any(np.abs(evals - e) <= ZERO_BAND) or np.any(np.abs(mu) <= ZERO_BAND)):
                break
            e -= NUDGE
        rows.append((float(e), int(np.sum(evals < e)), int(np.sum(mu < 0))))
    return rows


@dataclass(frozen=True)
class TwoBodyReport:
    kind: str
    cutoff_radius: float
    dim: int
    energy: float
    energy_error: float
    eigvec_residual: float


def two_body_report(scheme: CutoffScheme, params: ModelParams) -> TwoBodyReport:
    """Ground state of the N = 1, Q = 0 sector against the closed-form pair state."""
    basis = build_sector(params, 1, PHYSICAL, scheme.support_radius, (0, 0))
    rep = lowest_eigenpairs(factored_hamiltonian(scheme, params, basis), 1, tol=1e-9)
    v = np.real(rep.vectors[:, 0])
    target = two_body_vector(scheme, params, basis)
    target = target / np.linalg.norm(target)
    v = v / np.linalg.norm(v) * np.sign(v @ target)
    e = float(rep.energies[0])
    return TwoBodyReport(scheme.kind, scheme.radius, basis.dim, e, abs(e - params.binding_energy),
                         float(np.linalg.norm(v - target)))
