"""Command-line entry point: ``bspolaron <command> [--config PATH] ...``.

Every command writes one report (JSON by default, CSV with ``--format csv``)
and exits 0 when its checks pass, 1 when a check fails and 2 on usage or
configuration errors.  JSON reports carry ``schema_version``; CSV values are
written with 15 significant digits.

CSV columns
    twobody      kind, cutoff_radius, dim, energy, energy_error, eigvec_residual
    bscheck      suite, cases, mismatches, resolvent_max, inverse_phi_max,
                 factorization_max, monotone_failures, psd_min
    polaron      lambda_star, e_polaron, residual, mu1_check, kernel_residual, g_error_bound
    molecule     k_cap, e_molecule, stationarity_residual, scalar_residual, extrapolated
    crossover    see molecule.CROSSOVER_COLUMNS
    convergence  kind, radius, energy, mu_tau_n, fit_limit, fit_spread, decay_exponent
    delta        cutoff_radius, dim, ground_energy, energy_error, eigvec_residual,
                 phi_at_eb, resolvent_error, limit_distance
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, Iterable, List, Sequence

import numpy as np

from . import convergence, delta, fock, molecule, polaron, suites
from .config import ConfigError, RunConfig, load_config
from .lattice import make_scheme
from .renorm import mu_tau

SCHEMA_VERSION = 1
EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

TWOBODY_VECTOR_TOL = 1e-9
IDENTITY_TOL = 1e-10
PSD_TOL = -1e-12
RESIDUAL_TOL = 1e-8
POLARON_TOL = 1e-10
DELTA_PHI_TOL = 1e-13
DELTA_ENERGY_TOL = 1e-12


def pmap(fn: Callable, items: Sequence, threads: int) -> List:
    """Map in a worker pool; results come back in input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.15g" % v
    if v is None:
        return ""
    return str(v)


def render_csv(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def render_json(command: str, cfg: RunConfig, passed: bool, body: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "pass": passed,
           "config": cfg.to_json(), **body}
    return json.dumps(_clean(doc), indent=2, sort_keys=False) + "\n"


class Report:
    def __init__(self, passed: bool, body: dict, columns: Sequence[str], rows: List[dict]):
        self.passed, self.body, self.columns, self.rows = passed, body, columns, rows


# commands


def cmd_twobody(cfg: RunConfig) -> Report:
    params = cfg.params()
    cases = [(k, r) for k in cfg.twobody_kinds for r in cfg.twobody_radii]

    def one(case):
        kind, r = case
        rep = fock.two_body_report(make_scheme(kind, r * params.kappa, params), params)
        return {"kind": kind, "cutoff_radius": r, "dim": rep.dim, "energy": rep.energy,
                "energy_error": rep.energy_error, "eigvec_residual": rep.eigvec_residual}

    rows = pmap(one, cases, cfg.threads)
    ok = all(r["energy_error"] <= cfg.energy_tol and r["eigvec_residual"] <= TWOBODY_VECTOR_TOL
             for r in rows)
    cols = ("kind", "cutoff_radius", "dim", "energy", "energy_error", "eigvec_residual")
    return Report(ok, {"rows": rows}, cols, rows)


def cmd_bscheck(cfg: RunConfig) -> Report:
    ident = suites.random_identity_suite(cfg.seed, cfg.bs_models, cfg.bs_energies, cfg.bs_max_dim)
    params = cfg.params()
    basis = None if cfg.basis_radius is None else cfg.basis_radius * params.kappa
    sector = suites.sector_counting_suite(params, cfg.cutoff_radius * params.kappa, kind=cfg.cutoff_kind,
                                          basis_radius=basis)
    ok = (ident.counting_mismatches == 0 and sector["mismatches"] == 0
          and ident.monotone_failures == 0
          and max(ident.resolvent_max, ident.inverse_phi_max, ident.factorization_max) <= IDENTITY_TOL
          and (ident.n_models == 0 or ident.psd_min >= PSD_TOL))
    rows = [
        {"suite": "random", "cases": ident.counting_cases, "mismatches": ident.counting_mismatches,
         "resolvent_max": ident.resolvent_max, "inverse_phi_max": ident.inverse_phi_max,
         "factorization_max": ident.factorization_max, "monotone_failures": ident.monotone_failures,
         "psd_min": ident.psd_min if ident.n_models else None},
        {"suite": "sector", "cases": sector["cases"], "mismatches": sector["mismatches"]},
    ]
    cols = ("suite", "cases", "mismatches", "resolvent_max", "inverse_phi_max",
            "factorization_max", "monotone_failures", "psd_min")
    return Report(ok, {"seed": cfg.seed, "random": ident.to_json(), "sector": sector}, cols, rows)


def cmd_polaron(cfg: RunConfig) -> Report:
    sol = polaron.solve_polaron(cfg.params())
    ok = sol.residual <= POLARON_TOL and sol.mu1_check <= RESIDUAL_TOL and sol.kernel_residual <= RESIDUAL_TOL
    body = sol.to_json()
    cols = ("lambda_star", "e_polaron", "residual", "mu1_check", "kernel_residual", "g_error_bound")
    return Report(ok, {"polaron": body}, cols, [body])


def cmd_molecule(cfg: RunConfig) -> Report:
    sol = molecule.solve_molecule(cfg.params(), ladder=cfg.k_cap_ladder)
    ok = True
    if sol.found:
        es = [e for _, e in sol.ladder]
        monotone = all(b <= a + 1e-12 for a, b in zip(es[:-1], es[1:]))
        ok = (sol.stationarity_residual <= RESIDUAL_TOL and sol.scalar_residual <= RESIDUAL_TOL
              and monotone)
    body = sol.to_json()
    rows = [{"k_cap": c, "e_molecule": e} for c, e in sol.ladder]
    if rows:
        rows[-1].update(stationarity_residual=sol.stationarity_residual,
                        scalar_residual=sol.scalar_residual, extrapolated=sol.extrapolated)
    cols = ("k_cap", "e_molecule", "stationarity_residual", "scalar_residual", "extrapolated")
    return Report(ok, {"molecule": body}, cols, rows)


def cmd_crossover(cfg: RunConfig) -> Report:
    params = cfg.params()
    rows = pmap(lambda e: molecule.crossover_sweep(params, [e], cfg.k_cap)[0],
                list(cfg.e_b_grid), cfg.threads)
    ok = all(isinstance(r["e_polaron"], float) and math.isfinite(r["e_polaron"]) for r in rows)
    return Report(ok, {"rows": rows}, molecule.CROSSOVER_COLUMNS, rows)


def cmd_convergence(cfg: RunConfig) -> Report:
    params = cfg.params()
    radii_by_kind = {"sharp": cfg.ladder_sharp, "gaussian": cfg.ladder_gaussian}
    tau = params.binding_energy - 1.0
    jobs = [(k, r) for k, rr in radii_by_kind.items() for r in rr]
    energies = pmap(lambda j: convergence.ground_energy_ladder(params, j[0], [j[1]])[0], jobs, cfg.threads)
    ladders = {k: [row for row in energies if row.kind == k] for k in radii_by_kind}
    comp = convergence.compare_schemes({k: v for k, v in ladders.items() if v})
    ref = mu_tau(params, tau)
    rows = []
    for kind, lad in ladders.items():
        fit = comp.fits.get(kind)
        for row in lad:
            scheme = make_scheme(kind, row.radius * params.kappa, params)
            rows.append({"kind": kind, "radius": row.radius, "energy": row.energy,
                         "mu_tau_n": fock.angel_function(scheme, params, tau, (0, 0)),
                         "fit_limit": fit.limit if fit else None,
                         "fit_spread": fit.spread if fit else None,
                         "decay_exponent": fit.decay_exponent if fit else None})
    fitted = comp.discrepancy is not None
    ok = comp.agree if fitted else True
    body = {"rows": rows, "fits": {k: f.to_json() for k, f in comp.fits.items()},
            "discrepancy": comp.discrepancy, "agreement_tol": convergence.AGREEMENT_TOL,
            "mu_tau": {"tau": tau, "value": ref.value, "error_bound": ref.error_bound}}
    cols = ("kind", "radius", "energy", "mu_tau_n", "fit_limit", "fit_spread", "decay_exponent")
    rep = Report(ok, body, cols, rows)
    rep.ladders, rep.fits = ladders, comp.fits
    return rep


def cmd_delta(cfg: RunConfig) -> Report:
    params = cfg.params()
    rows = [r.to_json() for r in pmap(lambda r: delta.delta_ground_state_check(params, r * params.kappa),
                                        list(cfg.delta_radii), cfg.threads)]
    ok = all(abs(r["phi_at_eb"]) <= DELTA_PHI_TOL and r["energy_error"] <= DELTA_ENERGY_TOL
             and r["resolvent_error"] <= IDENTITY_TOL for r in rows)
    cols = ("cutoff_radius", "dim", "ground_energy", "energy_error", "eigvec_residual",
            "phi_at_eb", "resolvent_error", "limit_distance")
    return Report(ok, {"rows": rows}, cols, rows)


COMMANDS = {
    "twobody": cmd_twobody,
    "bscheck": cmd_bscheck,
    "polaron": cmd_polaron,
    "molecule": cmd_molecule,
    "crossover": cmd_crossover,
    "convergence": cmd_convergence,
    "delta": cmd_delta,
}


def _figure_path(out: str, command: str) -> str:
    stem, _ = os.path.splitext(out)
    return f"{stem}_{command}.png"


def _figures(command: str, rep: Report, out: str) -> List[str]:
    from . import plotting
    if command == "crossover":
        return [plotting.plot_crossover(rep.rows, _figure_path(out, command))]
    if command == "convergence":
        return [plotting.plot_convergence(rep.ladders, rep.fits, _figure_path(out, command))]
    return []


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bspolaron", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="key = value configuration file")
    ap.add_argument("--out", metavar="PATH", help="report path (default: stdout); figures go next to it")
    ap.add_argument("--threads", type=int, metavar="N", help="worker threads")
    ap.add_argument("--seed", type=int, metavar="N", help="seed for randomized suites")
    ap.add_argument("--format", choices=("json", "csv"), default="json")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        over = {k: v for k, v in (("threads", args.threads), ("seed", args.seed)) if v is not None}
        cfg = replace(cfg, **over).validate() if over else cfg
    except ConfigError as exc:
        print(f"bspolaron: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        rep = COMMANDS[args.command](cfg)
    except ValueError as exc:
        print(f"bspolaron: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if args.format == "csv":
        text = render_csv(rep.columns, rep.rows)
    else:
        text = render_json(args.command, cfg, rep.passed, rep.body)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        for path in _figures(args.command, rep, args.out):
            print(f"wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    status = "pass" if rep.passed else "FAIL"
    print(f"bspolaron {args.command}: {status}", file=sys.stderr)
    return EXIT_PASS if rep.passed else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
