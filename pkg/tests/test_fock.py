import functools
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from bspolaron import fock, schur
from bspolaron.fock import ANGEL, PHYSICAL, build_sector
from bspolaron.lattice import (ModelParams, coupling_constant, enumerate_ball, kinetic, make_scheme,
                               overlap_constant)

P = ModelParams()

# N = 2, Q = 0 symmetric ground energies (kappa = 1, M = 1, E_B = -1), frozen
# from the pair-sector solver and cross-checked against dense diagonalization
PAIR_ENERGY = {
    ("sharp", 2.0): -0.24029168898263092,
    ("sharp", 16.0): -0.341629569202,
    ("gaussian", 8.0): -0.303048329197,
}


def dense_ground(kind, radius, params=P):
    scheme = make_scheme(kind, radius, params)
    basis = build_sector(params, 2, PHYSICAL, scheme.support_radius, (0, 0))
    return np.linalg.eigvalsh(fock.regularized_hamiltonian(scheme, params, basis).toarray())


# sectors

@pytest.mark.parametrize("radius", [1.0, 2.5, 4.0])
def test_impurity_alone_sector(radius):
    basis = build_sector(P, 0, PHYSICAL, radius)
    assert basis.dim == len(enumerate_ball(P, radius))


@pytest.mark.parametrize("radius", [1.0, 3.0, 5.0])
def test_one_fermion_zero_momentum_sector(radius):
    assert build_sector(P, 1, PHYSICAL, radius, (0, 0)).dim == len(enumerate_ball(P, radius))


def test_two_fermion_sector_dimension():
    # pairs k < l with |k|, |l|, |k + l| <= 2, counted by brute force
    pts = oracles.ball_points(2.0)
    count = sum(1 for i, k in enumerate(pts) for l in pts[i + 1:]
                if (k[0] + l[0]) ** 2 + (k[1] + l[1]) ** 2 <= 4)
    assert count == 46
    assert build_sector(P, 2, PHYSICAL, 2.0, (0, 0)).dim == 46


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.floats(1.0, 3.2), st.integers(-2, 2), st.integers(-2, 2))
def test_sector_dimension_matches_oracle(n, radius, qx, qy):
    basis = build_sector(P, n, PHYSICAL, radius, (qx, qy))
    assert basis.dim == fock.sector_dimension_oracle(P, n, radius, (qx, qy))


def test_sector_rejects_bad_input():
    with pytest.raises(ValueError):
        build_sector(P, 1, "ghost", 2.0)
    with pytest.raises(ValueError):
        build_sector(P, -1, PHYSICAL, 2.0)
    with pytest.raises(ValueError):
        build_sector(P, 2, PHYSICAL, 3.0, None, cap=10)


# operators

def test_h0_values():
    basis = build_sector(P, 0, PHYSICAL, 2.0)
    h0 = fock.assemble_h0(basis, P).matrix.diagonal()
    assert h0[np.flatnonzero((basis.extra == 0).all(axis=1))[0]] == 0.0
    p2 = ModelParams(impurity_mass=2.0)
    b1 = build_sector(p2, 1, PHYSICAL, 2.0, (0, 0))
    h0 = fock.assemble_h0(b1, p2).matrix.diagonal()
    k = b1.modes[b1.fermions[:, 0]]
    i = np.flatnonzero((k == [1, 0]).all(axis=1))[0]
    assert h0[i] == pytest.approx(1.5, abs=1e-15)


def test_h0_matches_recomputation():
    params = ModelParams.from_kappa(0.7, impurity_mass=3.0)
    basis = build_sector(params, 3, PHYSICAL, 2.0, (1, 0))
    h0 = fock.assemble_h0(basis, params).matrix.diagonal()
    rng = np.random.default_rng(0)
    for i in rng.choice(basis.dim, 20, replace=False):
        fer = basis.modes[basis.fermions[i]]
        ref = 0.49 * (np.sum(fer ** 2) + np.sum(basis.extra[i] ** 2) / 3.0)
        assert h0[i] == pytest.approx(ref, rel=1e-14)


def test_v_on_one_fermion_states():
    scheme = make_scheme("gaussian", 1.5, P)
    phys = build_sector(P, 1, PHYSICAL, 3.0, (1, 0))
    angel = fock.angel_partner(P, phys)
    v = fock.assemble_v(scheme, phys, angel).toarray()
    assert angel.dim == 1
    k = phys.modes[phys.fermions[:, 0]]
    ref = scheme.alpha(k) * scheme.beta(np.array([1, 0]) - k)
    assert np.allclose(v[0], ref, atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_v_norm_bound(n):
    scheme = make_scheme("sharp", 2.0, P)
    phys = build_sector(P, n, PHYSICAL, 2.0, (0, 0))
    v = fock.assemble_v(scheme, phys, fock.angel_partner(P, phys)).toarray()
    assert np.linalg.norm(v, 2) <= np.sqrt(n * overlap_constant(scheme)) * (1 + 1e-12)


@pytest.mark.parametrize("kind", ["sharp", "gaussian"])
def test_w_equals_v_star_v(kind):
    scheme = make_scheme(kind, 2.0 if kind == "sharp" else 0.6, P)
    phys = build_sector(P, 2, PHYSICAL, scheme.support_radius, (0, 0))
    v = fock.assemble_v(scheme, phys, fock.angel_partner(P, phys)).toarray()
    w = fock.assemble_w(scheme, phys).toarray()
    assert np.max(np.abs(w - v.T @ v)) <= 1e-14


def test_w_two_body_block_is_rank_one():
    scheme = make_scheme("gaussian", 0.5, P)
    phys = build_sector(P, 1, PHYSICAL, 3.0, (0, 0))
    w = fock.assemble_w(scheme, phys).toarray()
    k = phys.modes[phys.fermions[:, 0]]
    u = scheme.alpha(k) * scheme.beta(-k)
    assert np.max(np.abs(w - np.outer(u, u))) <= 1e-15


@pytest.mark.parametrize("kind,radius", [("sharp", 2.0), ("sharp", 2.3), ("gaussian", 0.5)])
def test_hamiltonian_spectrum_matches_brute_force(kind, radius):
    scheme = make_scheme(kind, radius, P)
    if kind == "sharp":
        a = functools.partial(oracles.sharp, radius=radius)
    else:
        a = functools.partial(oracles.gaussian, radius=radius)
    basis_r = scheme.support_radius
    ref, _, _ = oracles.fock_hamiltonian(2, basis_r, a, a, 1.0, -1.0,
                                         support=oracles.ball_points(basis_r))
    got = dense_ground(kind, radius)
    assert np.max(np.abs(np.sort(np.linalg.eigvalsh(ref)) - got)) <= 1e-12


def test_triplet_roundtrip():
    scheme = make_scheme("sharp", 2.0, P)
    basis = build_sector(P, 2, PHYSICAL, 2.0, (0, 0))
    h = fock.regularized_hamiltonian(scheme, P, basis)
    buf = io.StringIO()
    h.write_triplets(buf)
    back = fock.read_triplets(io.StringIO(buf.getvalue()))
    assert back.momentum_block == (0, 0)
    assert np.array_equal(back.toarray(), h.toarray())


# two-body exactness

@pytest.mark.parametrize("kind", ["sharp", "gaussian", "beta_only"])
@pytest.mark.parametrize("e_b", [-1.0, -0.01, -7.0])
def test_two_body_ground_state_is_binding_energy(kind, e_b):
    params = ModelParams(binding_energy=e_b, impurity_mass=1.7)
    rep = fock.two_body_report(make_scheme(kind, 4.0, params), params)
    assert rep.energy_error <= 1e-10
    assert rep.eigvec_residual <= 1e-9


def test_two_body_kernels_are_one_dimensional():
    scheme = make_scheme("sharp", 3.0, P)
    phys = build_sector(P, 1, PHYSICAL, 3.0, (0, 0))
    v = fock.assemble_v(scheme, phys, fock.angel_partner(P, phys)).toarray()
    h0 = fock.assemble_h0(phys, P).matrix.diagonal()
    model = schur.BsModel(h0, v, coupling_constant(scheme, P))
    rep = schur.kernel_isomorphism_check(model, P.binding_energy)
    assert rep.ok and rep.dim_ker_h == 1 and rep.dim_ker_phi == 1


# eigensolver

def test_lowest_eigenpairs_trivial():
    rep = fock.lowest_eigenpairs(np.diag([3.0, -1.0, 2.0]), 3)
    assert rep.energies.tolist() == [-1.0, 2.0, 3.0]
    rep = fock.lowest_eigenpairs(np.array([[0.0, 1.0], [1.0, 0.0]]), 2)
    assert np.allclose(rep.energies, [-1.0, 1.0], atol=1e-15)


def test_lowest_eigenpairs_rejects_non_hermitian():
    with pytest.raises(ValueError):
        fock.lowest_eigenpairs(np.array([[0.0, 1.0], [0.0, 0.0]]))


@pytest.mark.parametrize("q", [(1, 0), (2, 1)])
def test_moving_pair_against_scalar_secular_equation(q):
    params = ModelParams(impurity_mass=2.0)
    scheme = make_scheme("sharp", 3.0, params)
    phys = build_sector(params, 1, PHYSICAL, 3.0, q)
    e0 = fock.lowest_eigenpairs(fock.regularized_hamiltonian(scheme, params, phys)).energies[0]
    pts = oracles.ball_points(3.0)
    ginv = sum(1 / (1.5 * (x * x + y * y) + 1.0) for x, y in pts)

    def f(lam):
        return ginv - sum(oracles.sharp((q[0] - x, q[1] - y), 3.0)
                          / (x * x + y * y + ((q[0] - x) ** 2 + (q[1] - y) ** 2) / 2.0 - lam)
                          for x, y in pts)

    # bracket up to the free threshold of the moving pair
    floor = min(x * x + y * y + ((q[0] - x) ** 2 + (q[1] - y) ** 2) / 2.0 for x, y in pts)
    assert e0 < floor
    root = oracles.secular_root(f, -20.0, floor - 1e-12)
    assert e0 == pytest.approx(root, abs=1e-9)
    assert fock.angel_function(scheme, params, e0, q) == pytest.approx(0.0, abs=1e-9)


# phi on angel sectors

def test_phi_one_fermion_is_diagonal_angel_function():
    scheme = make_scheme("sharp", 2.0, P)
    angel = build_sector(P, 0, ANGEL, 2.0)
    z = -1.7
    phi = fock.phi_n_matrix(scheme, P, z, angel).toarray()
    assert np.max(np.abs(phi - np.diag(np.diag(phi)))) <= 1e-15
    ref = [fock.angel_function(scheme, P, z, q) for q in angel.extra]
    assert np.allclose(np.diag(phi), ref, atol=1e-13)


@pytest.mark.parametrize("kind", ["sharp", "gaussian", "beta_only"])
def test_angel_function_vanishes_at_binding_energy(kind):
    scheme = make_scheme(kind, 3.0, P)
    assert abs(fock.angel_function(scheme, P, P.binding_energy, (0, 0))) <= 1e-12


@pytest.mark.parametrize("pauli_exact", [False, True])
def test_phi_assembly_routes_agree(pauli_exact):
    scheme = make_scheme("sharp", 2.0, P)
    angel = build_sector(P, 1, ANGEL, 2.0, (0, 0))
    z = -0.9
    direct = fock.phi_n_matrix(scheme, P, z, angel, "direct").toarray()
    normal = fock.phi_n_matrix(scheme, P, z, angel, "normal", pauli_exact)
    normal = normal.toarray() if hasattr(normal, "toarray") else np.asarray(normal)
    assert np.max(np.abs(direct - normal)) <= 1e-13


# ground energies

@pytest.mark.parametrize("kind,radius", [("sharp", 2.0), ("sharp", 3.0)])
def test_pair_solver_equals_dense_ground_state(kind, radius):
    scheme = make_scheme(kind, radius, P)
    e = fock.pair_ground_energy(scheme, P)
    assert e == pytest.approx(dense_ground(kind, radius)[0], abs=1e-11)


@pytest.mark.parametrize("kind,radius", [("sharp", 4.0), ("sharp", 8.0), ("gaussian", 2.0),
                                         ("gaussian", 3.0)])
def test_symmetric_sector_holds_the_ground_state(kind, radius):
    scheme = make_scheme(kind, radius, P)
    assert fock.pair_ground_energy(scheme, P) == pytest.approx(
        fock.bs_ground_energy(scheme, P, 2), abs=1e-11)


@pytest.mark.parametrize("radius", [0.7, 1.0])
def test_symmetric_sector_is_an_upper_bound(radius):
    # at tiny gaussian cutoffs the ground state is a non-symmetric doublet
    scheme = make_scheme("gaussian", radius, P)
    full = fock.bs_ground_energy(scheme, P, 2)
    assert fock.pair_ground_energy(scheme, P) > full + 1e-3


def test_full_solver_matches_dense_at_tiny_cutoff():
    scheme = make_scheme("gaussian", 0.7, P)
    assert fock.bs_ground_energy(scheme, P, 2) == pytest.approx(
        dense_ground("gaussian", 0.7)[0], abs=1e-11)


@pytest.mark.parametrize("key", sorted(PAIR_ENERGY))
def test_pair_energy_frozen_values(key):
    kind, radius = key
    assert fock.pair_ground_energy(make_scheme(kind, radius, P), P) == pytest.approx(
        PAIR_ENERGY[key], abs=1e-10)


def test_pair_energy_decreases_with_cutoff():
    es = [fock.pair_ground_energy(make_scheme("sharp", r, P), P) for r in (2, 3, 4, 6, 8, 12)]
    assert np.all(np.diff(es) < 0)


@pytest.mark.parametrize("n", [1, 2])
def test_sector_counting(n):
    scheme = make_scheme("sharp", 3.0, P)
    grid = np.linspace(-3.0, -0.01, 20)
    rows = fock.sector_counting(scheme, P, n, 3.0, grid)
    assert all(ch == cp for _, ch, cp in rows)
    assert rows[-1][1] >= 1


def test_fermi_sea_trial_vectors_are_orthonormal():
    params = ModelParams(fermi_energy=1.5)
    angel = build_sector(params, 4, ANGEL, 2.0, (0, 0))
    from bspolaron.lattice import fermi_sea
    w = fock.fermi_sea_trial_vectors(params, angel, fermi_sea(params).occupied)
    assert np.allclose(w.T @ w, np.eye(5))


def interaction_norm(n, radius, tau=-1.0):
    scheme = make_scheme("sharp", radius, P)
    angel = build_sector(P, n - 1, ANGEL, radius, (0, 0))
    m = fock.NormalOrderedPhi(scheme, P, angel).interaction(tau).toarray()
    return np.linalg.norm(m, 2) / (n - 1)


def test_interaction_part_stays_bounded():
    norms = {n: [interaction_norm(n, r) for r in radii]
             for n, radii in ((2, (2.0, 4.0, 8.0, 16.0)), (3, (2.0, 3.0, 4.0)))}
    assert max(max(v) for v in norms.values()) <= 5.0
    # growth per doubling shrinks along the ladder
    steps = np.diff(norms[2])
    assert np.all(steps > 0) and np.all(np.diff(steps) < 0)
    assert interaction_norm(2, 4.0, tau=-4.0) < interaction_norm(2, 4.0, tau=-1.0)


def test_smoothed_form_saturates_then_diverges_with_cutoff():
    t = fock.smoothed_form_trend(P, "sharp", [4.0, 8.0, 16.0, 32.0], [1e-1, 1e-2, 1e-3, 0.0])
    assert np.all(np.diff(t, axis=1) > 0)
    # at eps = 0 each doubling adds (2 pi / (1 + 1/M)) log 2 in the limit
    slope = np.diff(t[:, -1]) / np.log(2.0)
    assert slope[-1] == pytest.approx(2 * np.pi / P.pair_factor, rel=0.02)
    # at fixed eps the ladder converges instead
    assert t[-1, 0] - t[-2, 0] < 0.05
