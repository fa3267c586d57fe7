import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from bspolaron import delta
from bspolaron.lattice import ModelParams

P = ModelParams()


def test_phi_delta_vanishes_at_binding_energy():
    assert delta.phi_delta(P, P.binding_energy).value == 0.0


def test_phi_delta_against_direct_sum():
    val = delta.phi_delta(P, -2.0)
    r = 10 * val.inner_radius
    ref = oracles.radial_sum(lambda x, y: 1 / (x * x + y * y + 1.0) - 1 / (x * x + y * y + 2.0), r)
    # the direct sum misses a tail below pi / r^2
    assert abs(val.value - ref) <= val.error_bound + math.pi / r ** 2


def test_phi_delta_needs_negative_z():
    with pytest.raises(ValueError):
        delta.phi_delta(P, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-20.0, -0.01), st.floats(0.001, 5.0))
def test_phi_delta_decreases_in_z(z, dz):
    # d/dz [-1/(k^2 - z)] = -1/(k^2 - z)^2 < 0 term by term
    z2 = min(z + dz, -1e-3)
    if z2 > z:
        assert delta.phi_delta(P, z2).value < delta.phi_delta(P, z).value


def test_single_mode_cutoff():
    rep = delta.delta_ground_state_check(P, 0.0)
    assert rep.dim == 1
    assert rep.ground_energy == P.binding_energy


def test_radius_four():
    rep = delta.delta_ground_state_check(P, 4.0)
    assert rep.energy_error <= 1e-12
    assert rep.eigvec_residual <= 1e-12
    assert abs(rep.phi_at_eb) <= 1e-13
    assert rep.resolvent_error <= 1e-10


def test_eigenvector_shape():
    model = delta.delta_model(P, 3.0)
    w, v = np.linalg.eigh(model.hamiltonian())
    target = 1.0 / (model.h0_diag - P.binding_energy)
    cos = abs(v[:, 0] @ target) / np.linalg.norm(target)
    assert w[0] == pytest.approx(P.binding_energy, abs=1e-13)
    assert cos == pytest.approx(1.0, abs=1e-13)


def test_ladder_approaches_limit_vector():
    reps = delta.delta_ladder(P, [1.0, 2.0, 4.0, 8.0, 16.0])
    dist = [r.limit_distance for r in reps]
    assert all(b < a for a, b in zip(dist, dist[1:]))
    assert all(r.energy_error <= 1e-12 for r in reps)


def test_json_record():
    rec = delta.delta_ground_state_check(P, 2.0).to_json()
    assert rec["dim"] == 13
