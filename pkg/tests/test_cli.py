import csv
import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from bspolaron import cli
from bspolaron.config import ConfigError, RunConfig, load_config, parse_config

QUICK = """\
# reduced ladders so the whole file runs in seconds
twobody_radii = 2, 4          # kappa
bs_models = 6
bs_energies = 5
bs_max_dim = 12
cutoff_radius = 3             # kappa
k_cap = 2                     # kappa
k_cap_ladder = 1.5, 2
e_b_grid = -0.25, -16
ladder_sharp = 2, 3, 4, 6
ladder_gaussian = 2, 2.5, 3, 3.5, 4
delta_radii = 0, 2, 4
"""


@pytest.fixture
def quick(tmp_path):
    path = tmp_path / "quick.cfg"
    path.write_text(QUICK)
    return str(path)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# config

def test_defaults_validate():
    cfg = load_config(None)
    assert cfg.binding_energy == -1.0 and cfg.seed == 20240101


def test_parse_values_and_comments():
    cfg = parse_config("binding_energy = -4  # kappa^2\n\n e_b_grid = -1, -2\ntwobody_kinds = sharp\n")
    assert cfg.binding_energy == -4.0
    assert cfg.e_b_grid == (-1.0, -2.0)
    assert cfg.twobody_kinds == ("sharp",)


@pytest.mark.parametrize("text,needle", [
    ("nonsense\n", "line 1"),
    ("a = 1\n", "unknown key"),
    ("\nseed = many\n", "line 2"),
    ("cutoff_kind = boxcar\n", "cutoff_kind"),
    ("energy_tol = 0\n", "energy_tol"),
    ("cutoff_radius = 8\nbasis_radius = 4\n", "basis_radius"),
    ("binding_energy = 1\n", "model parameters"),
])
def test_config_diagnostics(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/run.cfg")


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, -1e-3), st.floats(0.1, 10), st.integers(0, 2 ** 31), st.floats(0, 5))
def test_config_text_roundtrip(e_b, mass, seed, mu):
    text = f"binding_energy = {e_b!r}\nimpurity_mass = {mass!r}\nseed = {seed}\nfermi_energy = {mu!r}\n"
    cfg = parse_config(text)
    assert (cfg.binding_energy, cfg.impurity_mass, cfg.seed, cfg.fermi_energy) == (e_b, mass, seed, mu)


# output helpers

def test_csv_uses_fifteen_digits():
    text = cli.render_csv(["a", "b", "c"], [{"a": 1 / 3, "b": "x", "c": None}])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows == [["a", "b", "c"], ["0.333333333333333", "x", ""]]


def test_json_replaces_non_finite():
    doc = json.loads(cli.render_json("x", RunConfig(), True, {"v": float("nan")}))
    assert doc["schema_version"] == cli.SCHEMA_VERSION and doc["v"] is None


def test_pool_keeps_order():
    assert cli.pmap(lambda x: x * x, list(range(20)), 4) == [x * x for x in range(20)]


# commands

def test_twobody_defaults_pass(capsys, quick):
    code, out, err = run(capsys, "twobody", "--config", quick)
    doc = json.loads(out)
    assert code == 0 and doc["pass"] and doc["schema_version"] == 1
    assert len(doc["rows"]) == 4
    assert all(r["energy_error"] <= 1e-10 for r in doc["rows"])


def test_twobody_weak_coupling(capsys, tmp_path, quick):
    path = tmp_path / "weak.cfg"
    path.write_text(open(quick).read() + "binding_energy = -0.01\n")
    code, out, _ = run(capsys, "twobody", "--config", str(path))
    assert code == 0 and json.loads(out)["pass"]


def test_malformed_config_exits_two(capsys, tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("binding_energy -1\n")
    code, _, err = run(capsys, "twobody", "--config", str(path))
    assert code == 2 and "line 1" in err


def test_unknown_command_exits_two(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["teleport"])
    assert info.value.code == 2


def test_bscheck_census(capsys, quick):
    code, out, _ = run(capsys, "bscheck", "--config", quick, "--seed", "5")
    doc = json.loads(out)
    assert code == 0 and doc["seed"] == 5
    assert doc["random"]["counting_mismatches"] == 0 and doc["sector"]["mismatches"] == 0


def test_bscheck_empty_suite_passes(capsys, tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("bs_models = 0\ncutoff_radius = 2\n")
    code, out, _ = run(capsys, "bscheck", "--config", str(path))
    assert code == 0 and json.loads(out)["random"]["n_models"] == 0


def test_reruns_are_identical(capsys, quick):
    first = run(capsys, "bscheck", "--config", quick)[1]
    second = run(capsys, "bscheck", "--config", quick)[1]
    assert first == second


def test_thread_count_does_not_change_output(capsys, quick):
    one = json.loads(run(capsys, "delta", "--config", quick, "--threads", "1")[1])
    two = json.loads(run(capsys, "delta", "--config", quick, "--threads", "2")[1])
    one["config"].pop("threads")
    two["config"].pop("threads")
    assert one == two


def test_polaron_csv(capsys, tmp_path):
    path = tmp_path / "p.cfg"
    path.write_text("fermi_energy = 0.5\n")
    code, out, _ = run(capsys, "polaron", "--config", str(path), "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and float(rows[0]["e_polaron"]) == -1.0


def test_molecule_ladder(capsys, quick):
    code, out, _ = run(capsys, "molecule", "--config", quick)
    doc = json.loads(out)["molecule"]
    assert code == 0 and [c for c, _ in doc["ladder"]] == [1.5, 2.0]


def test_crossover_writes_table_and_figure(capsys, tmp_path, quick):
    out = tmp_path / "sweep.csv"
    code, _, err = run(capsys, "crossover", "--config", quick, "--format", "csv", "--out", str(out))
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [float(r["e_b"]) for r in rows] == [-0.25, -16.0]
    assert rows[0]["winner"] == "polaron" and rows[0]["flag"]
    assert rows[1]["winner"] == "molecule"
    assert (tmp_path / "sweep_crossover.png").stat().st_size > 0


def test_convergence_writes_fits_and_figure(capsys, tmp_path, quick):
    out = tmp_path / "conv.json"
    code, _, _ = run(capsys, "convergence", "--config", quick, "--out", str(out))
    doc = json.loads(out.read_text())
    assert set(doc["fits"]) == {"sharp", "gaussian"}
    assert doc["discrepancy"] is not None
    # exit status follows the agreement check on these short ladders
    assert code == (0 if doc["discrepancy"] <= doc["agreement_tol"] else 1)
    assert (tmp_path / "conv_convergence.png").stat().st_size > 0


def test_convergence_single_rung_table_only(capsys, tmp_path):
    path = tmp_path / "one.cfg"
    path.write_text("ladder_sharp = 3\nladder_gaussian = 2\n")
    code, out, _ = run(capsys, "convergence", "--config", str(path), "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 2
    assert all(r["fit_limit"] == "" for r in rows)


def test_failed_check_exits_one(capsys, tmp_path):
    path = tmp_path / "strict.cfg"
    path.write_text("energy_tol = 1e-30\ntwobody_radii = 2\ntwobody_kinds = sharp\n")
    code, out, err = run(capsys, "twobody", "--config", str(path))
    assert code == 1 and not json.loads(out)["pass"] and "FAIL" in err


def test_bscheck_sector_basis_beyond_cutoff(capsys, tmp_path):
    path = tmp_path / "wide.cfg"
    path.write_text("bs_models = 0\ncutoff_radius = 2\nbasis_radius = 3\n")
    code, out, _ = run(capsys, "bscheck", "--config", str(path))
    doc = json.loads(out)
    assert code == 0 and doc["sector"]["cases"] == 40 and doc["sector"]["mismatches"] == 0
