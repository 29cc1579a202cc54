"""Command-line entry point: ``delayreg <command> <scenario> [options]``.

Exit codes: 0 pass, 1 input or runtime error, 2 design-quality failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .factorization import (
    FactorizationError,
    UnstableFactor,
    assemble_sensitivity,
    check_factor_stability,
    compute_up,
)
from .quasipoly import PoleProximity, frequency_response
from .scenario import Scenario, ScenarioError, load_scenario
from .simulator import AlgebraicLoop, NotRealizable, StepMismatch, simulate_closed_loop, steady_state_residual
from .spectrum import (
    BoundaryRoot,
    GridTooCoarse,
    RegionSpec,
    count_roots_argument_principle,
    find_roots,
    sensitivity_spectrum,
    spectrum_to_csv,
)
from .synthesis import REGULATION_TOL, PlantZeroAtHarmonic, RankDeficient

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
UNSTABLE_RE = -1e-9

_INPUT_ERRORS = (
    ScenarioError,
    FactorizationError,
    PlantZeroAtHarmonic,
    PoleProximity,
    StepMismatch,
    AlgebraicLoop,
    NotRealizable,
    ValueError,
    OSError,
)


class _Fail(Exception):
    """Raised inside a command to exit with a given code after reporting."""

    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(message)


def _g6(x) -> str:
    if isinstance(x, complex):
        return f"{x.real:.6g}{x.imag:+.6g}j"
    return format(float(x), ".6g")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _warn(items) -> None:
    for w in items:
        print(f"warning: {w.message}", file=sys.stderr)


# --- design -------------------------------------------------------------------


def _design(sc: Scenario, tol: float):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = sc.design(tol)
    return result, [w for w in caught if issubclass(w.category, RankDeficient)]


def cmd_design(sc: Scenario, args) -> int:
    result, rank_warnings = _design(sc, args.tol)
    rows = result.system.A.shape[0]
    points = ([0.0] if sc.target.include_dc else []) + list(result.omegas)
    lines = [
        f"scenario        {sc.name}",
        f"spacing         {_g6(sc.spacing)}",
        "gains           " + " ".join(_g6(a) for a in result.qm.gains),
        f"residual        {_g6(result.residual_inf)}",
        f"rank            {result.rank} / {rows}",
        f"condition       {_g6(result.condition)}",
    ]
    for w, mag in zip(points, result.sensitivity_at_harmonics):
        lines.append(f"|S(j{_g6(w)})|".ljust(16) + f"{_g6(mag)}")
    ok = result.passed and not rank_warnings
    lines.append(f"status          {'PASS' if ok else 'FAIL'}")
    print("\n".join(lines))
    _warn(rank_warnings)

    if args.out:
        doc = {
            "scenario": sc.name,
            "spacing": sc.spacing,
            "gains": [float(a) for a in result.qm.gains],
            "residual_inf": result.residual_inf,
            "rank": result.rank,
            "rows": rows,
            "condition": result.condition if math.isfinite(result.condition) else None,
            "tol": args.tol,
            "sensitivity": [
                {"omega": float(w), "abs_S": float(m)}
                for w, m in zip(points, result.sensitivity_at_harmonics)
            ],
            "passed": ok,
        }
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


# --- spectrum -----------------------------------------------------------------


def cmd_spectrum(sc: Scenario, args) -> int:
    result, rank_warnings = _design(sc, args.tol)
    _warn(rank_warnings)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        spec = sensitivity_spectrum(
            sc.plant_factorization(), sc.controller_factorization(), result.qm, sc.region
        )
    coarse = [w for w in caught if issubclass(w.category, GridTooCoarse)]
    _warn(caught)
    if coarse and not args.force:
        raise _Fail(EXIT_ERROR, "grid too coarse for the root density; refine grid_step or pass --force")
    _emit(spectrum_to_csv(spec, args.kind), args.out)
    return EXIT_OK


# --- simulate -----------------------------------------------------------------


def cmd_simulate(sc: Scenario, args) -> int:
    if sc.simulation is None:
        raise ScenarioError("scenario has no [simulation] table", sc.source)
    result, rank_warnings = _design(sc, args.tol)
    _warn(rank_warnings)
    sim = sc.sim_scenario(result.qm)
    ts = simulate_closed_loop(sim)
    _emit(ts.to_csv(), args.out)

    window = 2.0 * sc.target.period
    pre_stop = sim.t_augmentation_on
    pre = (
        steady_state_residual(ts, window, min(pre_stop, sim.t_end))
        if pre_stop - window >= 0
        else float("nan")
    )
    post = steady_state_residual(ts, window) if sim.t_end > sim.t_augmentation_on else float("nan")
    summary = (
        f"residual before augmentation {_g6(pre)}, after {_g6(post)} "
        f"(disturbance peak {_g6(sim.disturbance.peak)}, window {_g6(window)} s)"
    )
    print(summary, file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


# --- freqresp -----------------------------------------------------------------


def cmd_freqresp(sc: Scenario, args) -> int:
    if not (args.wmin > 0 and args.wmax >= args.wmin):
        raise ValueError("need 0 < wmin <= wmax")
    if args.points < 1:
        raise ValueError("points must be positive")
    result, rank_warnings = _design(sc, args.tol)
    _warn(rank_warnings)
    sens = assemble_sensitivity(sc.plant_factorization(), sc.controller_factorization(), result.qm)
    omega = np.linspace(args.wmin, args.wmax, args.points)
    resp = frequency_response(sens, omega)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["omega", "abs_S", "arg_S"])
    for om, val in zip(omega, resp):
        w.writerow([format(float(v), ".17g") for v in (om, abs(val), np.angle(val))])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# --- verify -------------------------------------------------------------------


def _closed_loop_check(sc: Scenario, plant_f, ctrl_f) -> tuple:
    """Roots of the U_p numerator with Re >= 0, plus an independent count."""
    up = compute_up(plant_f, ctrl_f)
    if up.num.is_zero():
        return False, "U_p vanishes identically"
    region = RegionSpec(-0.5, sc.stability_re_max, 0.0, sc.stability_im_max, sc.stability_step)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        roots = find_roots(up.num, region)
    bad = [r.s for r in roots.roots if r.s.real >= UNSTABLE_RE]
    try:
        count = count_roots_argument_principle(
            up.num, RegionSpec(0.0, sc.stability_re_max, -sc.stability_im_max, sc.stability_im_max)
        )
        counted = f"argument principle count {count}"
    except BoundaryRoot:
        count = None
        counted = "root on the window boundary"
    ok = not bad and count == 0
    detail = f"{len(bad)} root(s) with Re >= 0 located, {counted}"
    if bad:
        detail += "; rightmost at " + _g6(max(bad, key=lambda z: z.real))
    return ok, detail


def cmd_verify(sc: Scenario, args) -> int:
    checks = []

    try:
        plant_f = sc.plant_factorization()
        ctrl_f = sc.controller_factorization()
        checks.append(("factor properness", True, "all factors proper"))
    except FactorizationError as exc:
        checks.append(("factor properness", False, str(exc)))
        plant_f = ctrl_f = None

    if plant_f is not None:
        try:
            check_factor_stability(plant_f, "plant.")
            check_factor_stability(ctrl_f, "controller.")
            checks.append(("factor stability", True, "no denominator root with Re >= 0"))
        except UnstableFactor as exc:
            checks.append(("factor stability", False, str(exc)))

        ok, detail = _closed_loop_check(sc, plant_f, ctrl_f)
        checks.append(("closed-loop stability", ok, detail))

        result, rank_warnings = _design(sc, args.tol)
        worst = float(np.max(result.sensitivity_at_harmonics))
        checks.append(
            ("regulation", result.passed, f"max |S| at targets {_g6(worst)} (tol {_g6(args.tol)})")
        )

    passed = all(ok for _, ok, _ in checks)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"overall: {'PASS' if passed else 'FAIL'}")
    if args.out:
        doc = {
            "scenario": sc.name,
            "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in checks],
            "passed": passed,
        }
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK if passed else EXIT_FAIL


# --- entry point ----------------------------------------------------------------

COMMANDS = {
    "design": cmd_design,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
    "freqresp": cmd_freqresp,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario TOML file or preset name (example1, example2, example3)")
    common.add_argument("--out", help="write the result file here")
    common.add_argument("--tol", type=float, default=REGULATION_TOL, help="regulation tolerance on |S|")
    common.add_argument("--force", action="store_true", help="continue past grid-resolution warnings")

    parser = argparse.ArgumentParser(
        prog="delayreg", description="Periodic regulation of time-delay systems."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("design", parents=[common], help="solve for the FIR-delay gains")
    sp = sub.add_parser("spectrum", parents=[common], help="sensitivity zeros and poles as CSV")
    sp.add_argument("--kind", choices=("zeros", "poles", "both"), default="both")
    sub.add_parser("simulate", parents=[common], help="closed-loop time series as CSV")
    fr = sub.add_parser("freqresp", parents=[common], help="sensitivity frequency response as CSV")
    fr.add_argument("--wmin", type=float, default=0.1)
    fr.add_argument("--wmax", type=float, default=100.0)
    fr.add_argument("--points", type=int, default=1000)
    sub.add_parser("verify", parents=[common], help="stability and regulation checks")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.scenario)
        return COMMANDS[args.command](sc, args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
