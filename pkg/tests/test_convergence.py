import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bspolaron import convergence
from bspolaron.convergence import LadderRow, compare_schemes, decay_exponent, fit_limit
from bspolaron.lattice import ModelParams

P = ModelParams()


def test_fit_recovers_sharp_model():
    r = np.array([16.0, 20.0, 24.0, 32.0, 48.0, 64.0])
    e = -0.35 + 0.1 / r - 0.4 / r ** 2
    fit = fit_limit("sharp", r, e)
    assert fit.limit == pytest.approx(-0.35, abs=1e-12)
    assert fit.spread <= 1e-12


def test_fit_recovers_gaussian_model():
    r = np.array([8.0, 10.0, 12.0, 14.0, 16.0])
    e = -0.35 + (2.0 + 3.0 * np.log(r)) / r ** 2 + 1.0 / r ** 3
    fit = fit_limit("gaussian", r, e)
    assert fit.limit == pytest.approx(-0.35, abs=1e-11)


def test_short_ladder_gives_table_only():
    fit = fit_limit("sharp", [8.0], [-0.3])
    assert fit.limit is None and fit.decay_exponent is None
    comp = compare_schemes({"sharp": [LadderRow("sharp", 8.0, -0.3, 0.0)]})
    assert comp.discrepancy is None and not comp.agree


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.01, 10.0))
def test_decay_exponent_of_power_law(p, c):
    r = np.geomspace(8, 128, 6)
    assert decay_exponent(r, -1 + c * r ** -p) == pytest.approx(p, abs=1e-6)


def test_agreement_rule():
    radii = (8.0, 12.0, 16.0, 24.0, 32.0)
    rows = {"sharp": [LadderRow("sharp", r, -0.35 + 0.1 / r, 0.0) for r in radii],
            "gaussian": [LadderRow("gaussian", r, -0.3502 + np.log(r) / r ** 2, 0.0) for r in radii]}
    comp = compare_schemes(rows)
    assert comp.discrepancy == pytest.approx(2e-4, abs=1e-10)
    assert comp.agree
    rows["gaussian"] = [LadderRow("gaussian", r, -0.352 + np.log(r) / r ** 2, 0.0) for r in radii]
    assert not compare_schemes(rows).agree


def test_short_real_ladders():
    lad = convergence.ground_energy_ladder(P, "sharp", [2.0, 3.0, 4.0])
    assert [r.radius for r in lad] == [2.0, 3.0, 4.0]
    assert lad[0].energy == pytest.approx(-0.24029168898263092, abs=1e-11)
    assert all(b.energy < a.energy for a, b in zip(lad, lad[1:]))


def test_mu_tau_ladder_approaches_reference():
    out = convergence.mu_tau_comparison(P, {"sharp": (16.0, 24.0, 32.0, 48.0, 64.0)}, -2.0, (1, 0))
    assert out["max_deviation"] <= out["reference"].error_bound + 1e-3
    lad = convergence.mu_tau_ladder(P, "sharp", (8.0, 16.0, 32.0), -2.0, (1, 0))
    gaps = [abs(v - out["reference"].value) for _, v in lad]
    assert gaps[0] > gaps[1] > gaps[2]
