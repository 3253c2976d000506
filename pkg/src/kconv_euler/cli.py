"""Command line: solve, study, consistency, audit and selftest.

Exit codes: 0 success, 2 runtime or solver failure, 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .cases import CaseError, build_case
from .eos import ConfigurationError
from .io import field_csv, ledger_csv, vtk_text, write_text
from .mesh import MeshError, build_mesh
from .solver import SolverError, run

EXIT_OK = 0
EXIT_RUNTIME = 2
EXIT_CONFIG = 3


def _out_dir(cp, default: str) -> Path:
    return Path(cp.get("output", "directory", fallback=default))


def _wants_vtk(cp, flag: bool) -> bool:
    formats = cp.get("output", "formats", fallback="csv")
    return flag or "vtk" in [f.strip() for f in formats.split(",")]


def _single_run(cp, store_all=False):
    g = cfgmod.gas(cp)
    sp = cfgmod.scheme(cp, g)
    shape = cfgmod.mesh_shape(cp)
    cid, params = cfgmod.case(cp)
    data, _ = build_case(cid, len(shape), g, **params)
    ts = cfgmod.time_spec(cp)
    mesh = build_mesh(shape)
    return mesh, g, sp, ts, (lambda: run(data, mesh, g, sp, ts.T, ts.snapshot_times, store_all=store_all))


def cmd_solve(cp, vtk: bool = False, out=None) -> int:
    out = out or sys.stdout
    mesh, g, sp, ts, go = _single_run(cp)
    traj, ledger = go()
    d = _out_dir(cp, "kconv_solve")
    write_text(d / "config.ini", cfgmod.dump(cp))
    for i, (t, s) in enumerate(zip(traj.snapshot_times, traj.snapshots)):
        write_text(d / f"fields_{i}.csv", field_csv(t, mesh, s.rho, s.u))
        if _wants_vtk(cp, vtk) and mesh.dim == 2:
            write_text(d / f"fields_{i}.vtk", vtk_text(mesh, s.rho, s.u))
    write_text(d / "energy_ledger.csv", ledger_csv(ledger.rows()))
    print(f"solved {len(traj.reports)} steps to T = {traj.final_time:.6g}; output in {d}", file=out)
    return EXIT_OK


def cmd_audit(cp, out=None) -> int:
    out = out or sys.stdout
    mesh, g, sp, ts, go = _single_run(cp)
    traj, ledger = go()
    d = _out_dir(cp, "kconv_audit")
    write_text(d / "config.ini", cfgmod.dump(cp))
    write_text(d / "energy_ledger.csv", ledger_csv(ledger.rows()))
    bad = ledger.first_failure()
    mono = ledger.is_monotone()
    print(f"AUDIT: {'pass' if bad is None else 'fail'} ({len(ledger.records)} steps, monotone energy: {mono})", file=out)
    if bad is not None:
        print(f"first failing step {bad.step}: left {bad.left:.6e} outside [{bad.rhs_lo:.6e}, {bad.rhs_hi:.6e}]", file=out)
    return EXIT_OK if bad is None and mono else EXIT_RUNTIME


def cmd_consistency(cp, out=None) -> int:
    out = out or sys.stdout
    from .consistency import default_bank, report_for

    levels = cfgmod._int(cp, "study", "levels", 0) if cp.has_section("study") else 0
    if levels < 2:
        raise ConfigurationError("consistency orders need [study] levels >= 2")
    g = cfgmod.gas(cp)
    sp = cfgmod.scheme(cp, g)
    shape = cfgmod.mesh_shape(cp)
    cid, params = cfgmod.case(cp)
    data, _ = build_case(cid, len(shape), g, **params)
    ts = cfgmod.time_spec(cp)
    trajs = []
    for k in range(levels):
        mesh = build_mesh(tuple(n * 2**k for n in shape))
        trajs.append(run(data, mesh, g, sp, ts.T, store_all=True)[0])
    modes = cfgmod._int(cp, "study", "modes", 2)
    rep = report_for(trajs, default_bank(len(shape), ts.T, modes), g, sp.beta)
    d = _out_dir(cp, "kconv_consistency")
    write_text(d / "config.ini", cfgmod.dump(cp))
    write_text(d / "consistency.csv", rep.to_csv())
    for t in rep.tests():
        orders = ", ".join(f"{k}: {np.round(rep.orders(t, k), 3).tolist()}" for k in ("e1", "e2", "d"))
        print(f"{t}: {orders}", file=out)
    return EXIT_OK


def cmd_study(cp, out=None) -> int:
    out = out or sys.stdout
    from .kconv import run_study, write_study

    sc = cfgmod.study_config(cp)
    result = run_study(sc)
    write_study(result, _out_dir(cp, "kconv_study"), cfgmod.dump(cp))
    print(f"KCONV: {result.classification}", file=out)
    return EXIT_OK


def _selftest_checks():
    from .cases import two_state_synthetic
    from .eos import GasLaw, validate_parameters
    from .flux import numerical_flux, numerical_flux_upwind_form, upwind
    from .kconv import cesaro_mean
    from .mesh import restrict
    from .solver import SchemeParams, State, residual
    from .young import EmpiricalYoungMeasure, defects, pair

    gas = GasLaw(1.0, 1.5)
    m1 = build_mesh(4)

    def constant_residual():
        s = State(np.full(8, 1.3), np.full((8, 1), 0.4))
        return np.all(residual(s, s, 0.1, build_mesh(8), gas, SchemeParams()) == 0.0)

    def rejects_alpha_one():
        try:
            validate_parameters(1.5, 1.0, -0.8)
        except ConfigurationError:
            return True
        return False

    def dirac_defects():
        D = defects(EmpiricalYoungMeasure([[1.2, 0.3]]), gas)
        return D.D_int == 0.0 and D.D_kin == 0.0 and np.all(D.D_conv == 0.0)

    return [
        ("periodic neighbor wraps", lambda: int(m1.face_neighbor[3 * m1.dim]) == 0),
        ("torus volume", lambda: math.isclose(build_mesh((4, 2)).total_volume, 4.0, abs_tol=1e-14)),
        ("restrict constant", lambda: np.all(restrict(np.full(8, 2.5), build_mesh(8), m1) == 2.5)),
        ("pressure at vacuum", lambda: gas.pressure(0.0) == 0.0),
        ("alpha = 1 rejected", rejects_alpha_one),
        ("upwind at vn = 0", lambda: upwind(2.0, 5.0, 0.0) == 0.0),
        ("flux forms agree", lambda: math.isclose(numerical_flux(1.0, 2.0, 0.3, 0.01, 0.5), numerical_flux_upwind_form(1.0, 2.0, 0.3, 0.01, 0.5), abs_tol=1e-14)),
        ("constant state residual", constant_residual),
        ("cesaro of (1, 2, 3)", lambda: cesaro_mean([1.0, 2.0, 3.0]) == 2.0),
        ("pair with constant g", lambda: pair(EmpiricalYoungMeasure([[1.0, 0.0], [3.0, 1.0]]), lambda U: np.full(len(U), 7.0)) == 7.0),
        ("dirac defects vanish", dirac_defects),
        ("synthetic N = 1", lambda: len(two_state_synthetic([1.0, 0.0], [2.0, 0.0], 1)) == 1),
    ]


def cmd_selftest(out=None) -> int:
    out = out or sys.stdout
    failures = 0
    for name, check in _selftest_checks():
        try:
            ok = bool(check())
        except Exception as exc:  # report every check, never stop early
            ok = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}", file=out)
    print(f"SELFTEST: {'pass' if failures == 0 else f'{failures} failed'}", file=out)
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kconv-euler", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("solve", "single run; writes snapshot fields and the energy ledger"),
        ("study", "K-convergence refinement study"),
        ("consistency", "weak-form consistency residuals and observed orders"),
        ("audit", "single run with the energy balance audit report"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="INI configuration file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        if name == "solve":
            sp.add_argument("--vtk", action="store_true", help="also write legacy VTK files (2D only)")
    sub.add_parser("selftest", help="run the built-in sanity checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest()
    try:
        cp = cfgmod.load(args.config, overrides=args.overrides)
        if args.command == "solve":
            return cmd_solve(cp, vtk=args.vtk)
        if args.command == "audit":
            return cmd_audit(cp)
        if args.command == "consistency":
            return cmd_consistency(cp)
        return cmd_study(cp)
    except (ConfigurationError, CaseError, MeshError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
