"""Command-line front end.

Subcommands map onto the pipeline layers: lattice (grading only),
templates (symbolic pass), stages (concrete reduction), bound (rigorous
error bound), solve (characteristic solutions), verify (numeric
cross-checks against the certified bound).

Output is deterministic byte-for-byte for a given input: JSON keys are
sorted, orders are canonical, and nothing reads the clock. Exit codes:
0 success, 1 failed verification, 2 bad input, 3 refused rigor.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import mpmath

from .bounds import bound_curve, bound_expr
from .diagflow import load_scenario, resolve_scenario, run_pipeline
from .errors import InputError, RigorError
from .grading import as_exponent, format_exponent
from .ncalg import derive_stage_plan
from .scalar import float_up
from .solve import asymptotic_solution, max_entry, residual_matrix


def _thread_cap() -> int:
    raw = os.environ.get("ASYMPT_THREADS")
    if raw is None:
        return 1
    try:
        v = int(raw)
    except ValueError:
        raise InputError(f"ASYMPT_THREADS must be a positive integer, got {raw!r}") from None
    if v < 1:
        raise InputError(f"ASYMPT_THREADS must be a positive integer, got {raw!r}")
    return v


def _load_scenario(args):
    src = resolve_scenario(args.scenario)
    overrides = {}
    if getattr(args, "K", None) is not None:
        overrides["K"] = str(as_exponent(args.K))
    if getattr(args, "digits", None) is not None:
        overrides["digits"] = args.digits
    if not overrides:
        return src
    data = src.to_json()
    data.pop("thetas", None)
    data.update(overrides)
    return load_scenario(data)


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def cmd_lattice(args) -> str:
    scenario = _load_scenario(args)
    lat = scenario.lattice
    if args.format == "json":
        return _dump_json({"lattice": lat.to_json()})
    lines = [
        "thetas: " + ", ".join(format_exponent(t) for t in lat.thetas),
        "K: " + format_exponent(lat.K),
        "sigmas: " + ", ".join(format_exponent(s) for s in lat.sigmas),
        f"L: {lat.L}",
        f"M: {lat.M}",
    ]
    return "\n".join(lines) + "\n"


def cmd_templates(args) -> str:
    scenario = _load_scenario(args)
    lat = scenario.lattice
    plan = derive_stage_plan(lat, scenario.l)
    if args.format == "json":
        payload = {
            "lattice": lat.to_json(),
            "l": plan.l,
            "S_templates": {str(m): {"render": e.render(), "terms": e.to_json()["terms"]}
                            for m, e in sorted(plan.S_templates.items())},
            "E_counts": {str(m): len(e) for m, e in sorted(plan.E_templates.items())},
            "E_final": [("-" if t.sign < 0 else "+") + t.render()
                        for t in plan.E_template.terms],
        }
        return _dump_json(payload)
    lines = []
    for m in sorted(plan.S_templates):
        lines.append(f"S[{m}] = {plan.S_templates[m].render()}")
    for m in sorted(plan.E_templates):
        lines.append(f"E[{m}]: {len(plan.E_templates[m])} terms")
    if args.full:
        lines.append("")
        lines.append(f"E[{lat.M}] ledger:")
        for t in plan.E_template.terms:
            lines.append(("  − " if t.sign < 0 else "  + ") + t.render())
    return "\n".join(lines) + "\n"


def _matrix_stats(mat) -> dict:
    mo = mat.min_order()
    return {
        "min_order": None if mo is None else format_exponent(mo),
        "monomials": sum(len(e.terms) for row in mat.entries for e in row),
    }


def cmd_stages(args) -> str:
    scenario = _load_scenario(args)
    run = run_pipeline(scenario)
    if args.format == "json":
        stages = {}
        for m, st in sorted(run.states.items()):
            stages[str(m)] = {
                "P": _matrix_stats(st.P),
                "T": _matrix_stats(st.T),
                "W": {str(j): _matrix_stats(w) for j, w in sorted(st.W.items())},
                "V": {str(j): _matrix_stats(v) for j, v in sorted(st.V.items())},
            }
        payload = {
            "scenario": scenario.name,
            "stages": stages,
            "S_concrete": {str(m): _matrix_stats(S) for m, S in sorted(run.S_concrete.items())},
            "D_final": [run.D_final.entries[i][i].render() for i in range(scenario.n)],
        }
        return _dump_json(payload)
    lines = [f"scenario: {scenario.name} (n={scenario.n}, K={format_exponent(scenario.K)}, "
             f"M={scenario.lattice.M})"]
    for m, st in sorted(run.states.items()):
        ps = _matrix_stats(st.P)
        ts = _matrix_stats(st.T)
        lines.append(f"stage {m}: P order {ps['min_order']} ({ps['monomials']} monomials), "
                     f"T order {ts['min_order']} ({ts['monomials']} monomials)")
        for j, w in sorted(st.W.items()):
            ws = _matrix_stats(w)
            lines.append(f"  W[{j},{m}]: order {ws['min_order']} ({ws['monomials']} monomials)")
        for j, v in sorted(st.V.items()):
            vs = _matrix_stats(v)
            lines.append(f"  V[{j},{m}]: order {vs['min_order']} ({vs['monomials']} monomials)")
    for m, S in sorted(run.S_concrete.items()):
        ss = _matrix_stats(S)
        lines.append(f"S[{m}] concrete: order {ss['min_order']} ({ss['monomials']} monomials)")
    lines.append("final diagonal entries:")
    for i in range(scenario.n):
        lines.append(f"  D_final[{i + 1}] = {run.D_final.entries[i][i].render()}")
    return "\n".join(lines) + "\n"


def cmd_bound(args) -> str:
    scenario = _load_scenario(args)
    run = run_pipeline(scenario)
    X = as_exponent(args.X) if args.X is not None else scenario.X
    rep = bound_expr(run, X)
    if args.format == "csv":
        ladder = bound_curve(run, [X, 2 * X, 4 * X])
        lines = ["X,total"]
        for xv, tot in ladder:
            lines.append(f"{format_exponent(xv)},{float_up(tot):.6e}")
        return "\n".join(lines) + "\n"
    if args.format == "json":
        return _dump_json({"bound": rep.to_json()})
    lines = [
        f"X: {format_exponent(rep.X)}",
        f"K: {format_exponent(rep.K)}",
        f"terms in terminal ledger: {rep.term_count}",
        f"total bound: {float_up(rep.total):.6e}",
        "atom norm bounds:",
    ]
    for name, b in sorted(rep.atom_norms.items()):
        lines.append(f"  {name}: {float_up(b):.6e}")
    if args.full:
        lines.append("per-term contributions:")
        for t, b in rep.terms:
            lines.append(f"  {t}: {float_up(b):.6e}")
    return "\n".join(lines) + "\n"


def cmd_solve(args) -> str:
    scenario = _load_scenario(args)
    run = run_pipeline(scenario)
    x = as_exponent(args.x) if args.x is not None else 2 * scenario.X
    sol = asymptotic_solution(run, args.k, x)
    if args.format == "csv":
        lines = ["component,re,im"]
        for i, z in enumerate(sol.vector):
            lines.append(f"{i + 1},{mpmath.nstr(z.real, 20)},{mpmath.nstr(z.imag, 20)}")
        return "\n".join(lines) + "\n"
    if args.format == "json":
        return _dump_json({"solution": sol.to_json()})
    lines = [
        f"scenario: {scenario.name}",
        f"k: {sol.k}",
        f"x: {format_exponent(sol.x)} (normalized at X = {format_exponent(scenario.X)})",
        f"exponent integral: {mpmath.nstr(sol.integral, 20)}",
        f"exp factor: {mpmath.nstr(sol.exp_factor, 20)}",
    ]
    for i, z in enumerate(sol.vector):
        lines.append(f"z[{i + 1}] = {mpmath.nstr(z, 20)}")
    return "\n".join(lines) + "\n"


def cmd_verify(args) -> tuple[str, int]:
    scenario = _load_scenario(args)
    run = run_pipeline(scenario)
    X = scenario.X
    rep = bound_expr(run, X)
    if args.points:
        points = [as_exponent(p) for p in args.points.split(",")]
    else:
        points = [X, X * Fraction(3, 2), X * Fraction(5, 2)]
    for p in points:
        if p < X:
            raise InputError(f"verification point {p} lies left of X = {X}")
    rows = []
    ok_all = True
    with mpmath.workdps(scenario.digits + 10):
        total_mp = mpmath.mpf(rep.total.numerator) / rep.total.denominator
        for p in points:
            res = residual_matrix(run, p)
            me = max_entry(res)
            ok = me <= total_mp
            ok_all = ok_all and ok
            rows.append((p, me, ok))
    if args.format == "json":
        payload = {
            "scenario": scenario.name,
            "X": format_exponent(X),
            "bound_total": float_up(rep.total),
            "points": [{"x": format_exponent(p), "residual_max": mpmath.nstr(me, 10),
                        "within_bound": ok} for p, me, ok in rows],
            "pass": ok_all,
        }
        return _dump_json(payload), 0 if ok_all else 1
    lines = [f"bound total at X = {format_exponent(X)}: {float_up(rep.total):.6e}"]
    for p, me, ok in rows:
        lines.append(f"x = {format_exponent(p)}: residual max entry {mpmath.nstr(me, 6)} "
                     f"{'<=' if ok else '>'} bound : {'ok' if ok else 'FAIL'}")
    lines.append("verify: " + ("PASS" if ok_all else "FAIL"))
    return "\n".join(lines) + "\n", 0 if ok_all else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asympt",
        description="Symbolic-numeric asymptotic diagonalization with certified error bounds.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats=("text", "json")):
        p.add_argument("--scenario", required=True,
                       help="bundled scenario name (example1..example3) or path to a JSON file")
        p.add_argument("--K", help="override the truncation order (rational, e.g. 4 or 7/2)")
        p.add_argument("--format", choices=list(formats), default="text")
        p.add_argument("--out", help="write output to this file instead of stdout")

    p = sub.add_parser("lattice", help="show the decay-order lattice")
    common(p)
    p.set_defaults(func=cmd_lattice)

    p = sub.add_parser("templates", help="run the symbolic pass and show stage templates")
    common(p)
    p.add_argument("--full", action="store_true", help="also print the terminal error ledger")
    p.set_defaults(func=cmd_templates)

    p = sub.add_parser("stages", help="run the concrete reduction and show stage data")
    common(p)
    p.set_defaults(func=cmd_stages)

    p = sub.add_parser("bound", help="rigorous terminal error bound")
    common(p, formats=("text", "json", "csv"))
    p.add_argument("--X", help="cutoff (rational); default: the scenario's X")
    p.add_argument("--full", action="store_true", help="print per-term contributions")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("solve", help="evaluate a characteristic solution")
    common(p, formats=("text", "json", "csv"))
    p.add_argument("--k", type=int, default=1, help="solution index, 1-based")
    p.add_argument("--x", help="evaluation point (rational); default 2X")
    p.add_argument("--digits", type=int, help="working precision override")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check numeric residuals against the certified bound")
    common(p)
    p.add_argument("--points", help="comma-separated x values (default X, 1.5X, 2.5X)")
    p.add_argument("--digits", type=int, help="working precision override")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _thread_cap()
        result = args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RigorError as exc:
        print(f"rigor: {exc}", file=sys.stderr)
        return 3
    if isinstance(result, tuple):
        text, code = result
    else:
        text, code = result, 0
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
