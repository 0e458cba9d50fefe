"""Command-line front end: ``analyze``, ``check`` and ``integrate``."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from typing import Any, Sequence

from .constraints import (
    FINAL,
    NO_SOLUTION,
    AnalysisReport,
    run_constraint_algorithm,
    run_integrability_algorithm,
    verify_report,
)
from .fieldtheory import affine_analyze, el_residual, semi_holonomic_analysis, semi_holonomy
from .geometry import AssumptionViolation, CandidateSection, MultiVector, contract, vertical_triple_violation, wedge
from .integrate import BlowUpError, Grid, convergence_order, integrate_section, numeric_el_check
from .models import Model, ModelError, load_model
from .symexpr import Expr, NonDecidableError, parse_expr
from .varieties import reduce_modulo

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_SOLUTION = 2
EXIT_UNDECIDED = 3
EXIT_CHECK_FAILED = 4


def status_exit_code(status: str) -> int:
    if status == FINAL:
        return EXIT_OK
    if status == NO_SOLUTION:
        return EXIT_NO_SOLUTION
    return EXIT_UNDECIDED


def _s(e) -> str:
    return str(e)


def _gens(gens) -> list[dict]:
    return [
        {"index": g.index, "constraints": [_s(c) for c in g.constraints], "provenance": list(g.provenance)}
        for g in gens
    ]


def _unknown(u) -> str:
    return f"Gamma[{u[0]},{u[1] + 1}]"


def _section(model: Model, report: AnalysisReport) -> tuple[CandidateSection, str]:
    if model.section is not None:
        return CandidateSection(report.connection, model.section), "model section"
    return report.canonical_section(), "canonical"


def _member_defects(report: AnalysisReport, section: CandidateSection) -> list[str]:
    prob = report.solution.problem
    vals = [section.Gamma(*u) for u in prob.unknowns]
    out = []
    for tag, r in zip(prob.row_tags, prob.residual(vals)):
        r = reduce_modulo(r, list(report.constraints), report.chart)
        if not r.is_zero:
            out.append(f"{tag}: {r}")
    return out


def analyze_model(model: Model, max_generations: int | None = None, seed: int | None = None):
    """Run the full pipeline; returns ``(results, report, exit code)``."""
    max_gen = max_generations if max_generations is not None else model.max_generations
    seed = seed if seed is not None else model.seed
    chart = model.chart
    report = run_constraint_algorithm(model.system, model.connection, max_generations=max_gen, seed=seed)
    res: dict[str, Any] = {
        "model": model.kind,
        "chart": {"kind": chart.kind, "base": list(chart.base_names), "fibre": list(chart.fibre_names)},
        "splitting": {
            "gamma": _s(report.splitting.gamma),
            "omega_nabla": _s(report.splitting.omega_nabla),
            "assumption_ok": report.splitting.assumption_ok,
        },
        "status": report.status,
        "generations": _gens(report.generations),
        "constraints": [_s(c) for c in report.constraints],
        "solution": {
            "unknowns": [_unknown(u) for u in report.solution.unknowns],
            "particular": [_s(v) for v in report.solution.particular],
            "nullspace": [[_s(v) for v in vec] for vec in report.solution.nullspace],
            "rank": report.solution.rank,
        },
        "warnings": list(report.warnings),
    }
    if report.status == FINAL:
        section, which = _section(model, report)
        defects = _member_defects(report, section)
        if defects:
            res["warnings"].append("model section does not solve the system: " + "; ".join(defects))
        report = run_integrability_algorithm(report, section, max_generations=max_gen, seed=seed)
        integ = report.integrability
        res["integrability"] = {
            "representative": which,
            "status": integ.status,
            "zeta": {f"{a},{mu + 1},{nu + 1}": _s(z) for (a, mu, nu), z in integ.zeta.items()},
            "generations": _gens(integ.generations),
        }
    if model.kind == "lagrangian":
        res["lagrangian"] = _lagrangian_results(model, report, max_gen, seed)
    if model.kind == "affine":
        an = affine_analyze(model.affine, seed=seed, max_generations=max_gen)
        res["affine"] = {
            "matrix": [[_s(v) for v in row] for row in an.matrix],
            "rhs": [_s(v) for v in an.rhs],
            "nondegenerate": an.nondegenerate,
            "dimension": an.dimension,
            "engine_agrees": an.engine_agrees,
            "zeta": {f"{a},{mu + 1},{nu + 1}": _s(z) for (a, mu, nu), z in an.zeta.items()},
        }
    return res, report, status_exit_code(report.status)


def _lagrangian_results(model: Model, report: AnalysisReport, max_gen: int, seed: int) -> dict:
    lag = model.lagrangian
    chart = lag.chart
    from .fieldtheory import legendre_map

    lm = legendre_map(lag)
    out: dict[str, Any] = {
        "regularity": lag.regularity,
        "hessian_rank": lag.hessian_rank,
        "sampled_ranks": list(lag.sampled_ranks),
        "legendre": {k: _s(v) for k, v in lm.momenta.items()},
        "p": _s(lm.p),
    }
    if report.status != FINAL:
        return out
    sh = semi_holonomic_analysis(lag, report, max_generations=max_gen, seed=seed)
    forced = semi_holonomy(lag, report.canonical_section(), report.constraints, report.solution).forced
    out["semi_holonomy"] = {
        "forced": bool(forced),
        "status": sh.status,
        "generations": _gens(sh.generations),
    }
    if sh.status != FINAL:
        return out
    cons = list(sh.constraints)
    # generic semi-holonomic section: Gamma^y = v, second-order block symbolic
    gamma = {}
    for A, y in enumerate(chart.fields):
        for a in range(chart.m):
            gamma[(y, a)] = chart.symbol(f"v{A + 1}_{a + 1}") - report.connection.G(y, a)
    for A in range(chart.n):
        for b in range(chart.m):
            v = f"v{A + 1}_{b + 1}"
            for a in range(chart.m):
                gamma[(v, a)] = Expr.symbol(f"G_{v}_{a + 1}")
    generic = CandidateSection(report.connection, gamma)
    out["euler_lagrange"] = {
        "relation": [_s(r) for r in el_residual(lag, generic, cons)],
        "canonical_residual": [_s(r) for r in el_residual(lag, sh.canonical_section(), cons)],
    }
    return out


# ---------------------------------------------------------------------------
# rendering


def render_text(res: dict) -> str:
    lines = [f"model: {res['model']}  chart: {res['chart']['kind']} base={res['chart']['base']} fibre={res['chart']['fibre']}"]
    sp = res["splitting"]
    lines.append(f"gamma: {sp['gamma']}")
    lines.append(f"Omega_nabla: {sp['omega_nabla']}")
    lines.append(f"assumption (no triple-vertical terms): {'ok' if sp['assumption_ok'] else 'violated'}")
    lines.append(f"status: {res['status']}")
    if not res["generations"]:
        lines.append("constraints: none")
    for g in res["generations"]:
        lines.append(f"generation {g['index']}: [{', '.join(g['constraints'])}]  ({', '.join(g['provenance'])})")
    sol = res["solution"]
    lines.append(f"solution: rank {sol['rank']}, nullspace dimension {len(sol['nullspace'])}")
    for u, v in zip(sol["unknowns"], sol["particular"]):
        lines.append(f"  {u} = {v}")
    if "integrability" in res:
        it = res["integrability"]
        lines.append(f"integrability ({it['representative']} representative): {it['status']}")
        for k, z in it["zeta"].items():
            lines.append(f"  zeta[{k}] = {z}")
        for g in it["generations"]:
            lines.append(f"  I generation {g['index']}: [{', '.join(g['constraints'])}]")
    if "lagrangian" in res:
        lg = res["lagrangian"]
        lines.append(f"regularity: {lg['regularity']} (Hessian rank {lg['hessian_rank']}, sampled {lg['sampled_ranks']})")
        lines.append("Legendre map: " + ", ".join(f"{k} = {v}" for k, v in lg["legendre"].items()) + f", p = {lg['p']}")
        if "semi_holonomy" in lg:
            sh = lg["semi_holonomy"]
            lines.append(f"semi-holonomy forced: {sh['forced']}; restricted status: {sh['status']}")
            for g in sh["generations"]:
                lines.append(f"  S generation {g['index']}: [{', '.join(g['constraints'])}]")
        if "euler_lagrange" in lg:
            el = lg["euler_lagrange"]
            lines.append("Euler-Lagrange relation: " + "; ".join(f"{r} = 0" for r in el["relation"]))
            lines.append("Euler-Lagrange residual (canonical): " + ", ".join(el["canonical_residual"]))
    if "affine" in res:
        af = res["affine"]
        lines.append(f"affine: nondegenerate={af['nondegenerate']} dimension={af['dimension']} engine agrees={af['engine_agrees']}")
        for row, r in zip(af["matrix"], af["rhs"]):
            lines.append(f"  [{', '.join(row)}] | {r}")
    for w in res["warnings"]:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def render_structured(res: dict) -> str:
    return json.dumps(res, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# checks


def _expected_form(spec: dict, chart) -> dict:
    out = {}
    for k, v in spec.items():
        out[k] = parse_expr(str(v), chart)
    return out


def run_checks(model: Model, seed: int | None = None, max_generations: int | None = None) -> list[tuple[str, bool, str]]:
    seed = seed if seed is not None else model.seed
    max_gen = max_generations if max_generations is not None else model.max_generations
    checks: list[tuple[str, bool, str]] = []
    Omega = model.system.Omega
    chart = model.chart
    bad = vertical_triple_violation(Omega)
    checks.append(
        ("assumption: no triple-vertical terms", bad is None, "" if bad is None else f"violating triple {bad[0]}: {bad[1]}")
    )
    from .geometry import split_omega

    sp = split_omega(Omega, model.connection, model.system.omega)
    omega = model.system.omega
    checks.append(("splitting reconstruction", wedge(omega, sp.gamma) + sp.omega_nabla == Omega, ""))
    frame = model.connection.frame()
    ok = all(contract(D, sp.gamma).function.is_zero for D in frame)
    checks.append(("gamma vanishes on the horizontal frame", ok, ""))
    exp = model.expect
    if "omega_nabla_zero" in exp:
        want = bool(exp["omega_nabla_zero"])
        checks.append(("Omega_nabla = 0" if want else "Omega_nabla != 0", sp.omega_nabla.is_zero == want, _s(sp.omega_nabla)))
    if "gamma" in exp:
        want = _expected_form(exp["gamma"], chart)
        got = {f"d{c}": sp.gamma.coefficient(c) for c in chart.coords}
        ok = all(got.get(k, chart.expr(0)) == v for k, v in want.items()) and all(
            v.is_zero or k in want for k, v in got.items()
        )
        checks.append(("gamma matches expected", ok, _s(sp.gamma)))
    if model.lagrangian is not None:
        from .fieldtheory import omega_lagrangian_direct

        lag = model.lagrangian
        checks.append(("Omega_L = -d Theta_L matches term-by-term build", omega_lagrangian_direct(lag.chart, lag.L) == lag.Omega, ""))
    if model.affine is not None:
        from .geometry import pullback

        aff = model.affine
        lag = model.lagrangian
        checks.append(("Theta_L is the pullback of alpha", pullback(aff.alpha, lag.chart, {}) == lag.Theta, ""))
        an = affine_analyze(aff, seed=seed, max_generations=max_gen)
        checks.append(("affine closed form agrees with the engine", an.engine_agrees, ""))
    if bad is not None:
        return checks
    res, report, _ = analyze_model(model, max_gen, seed)
    fails = verify_report(report, seed=seed + 1)
    checks.append(("constraints vanish and solution holds on sampled points", not fails, "; ".join(fails[:3])))
    if "constraints" in exp:
        want = [parse_expr(str(s), chart) for s in exp["constraints"]]
        got = list(report.constraints)
        ok = len(want) == len(got) and all(
            any((w - g).is_zero or (w + g).is_zero for g in got) for w in want
        )
        checks.append(("constraints match expected", ok, ", ".join(map(_s, got))))
    if "status" in exp:
        checks.append(("status matches expected", report.status == exp["status"], report.status))
    if "grid" in model.options and "start" in model.options and report.status == FINAL:
        checks.extend(_numeric_checks(model, report))
    return checks


def _start_point(spec) -> dict[str, float]:
    if isinstance(spec, str):
        out = {}
        for part in spec.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ModelError(f"start entry {part!r} is not name=value")
            k, v = part.split("=", 1)
            out[k.strip()] = float(Fraction(v.strip()))
        return out
    return {k: float(Fraction(str(v))) for k, v in spec.items()}


def _integration_inputs(model: Model, report: AnalysisReport):
    if report.integrability is None:
        raise ModelError("no final constraint set; nothing to integrate")
    sec = report.integrability.section
    cons = list(report.constraints) + list(report.integrability.constraints)
    return sec, cons


def _numeric_checks(model: Model, report: AnalysisReport) -> list[tuple[str, bool, str]]:
    out = []
    grid = Grid.parse(str(model.options["grid"]), model.chart.m)
    start = _start_point(model.options["start"])
    sec, cons = _integration_inputs(model, report)
    try:
        gs = integrate_section(sec, model.chart, start, grid, cons)
    except (ValueError, KeyError, BlowUpError) as exc:
        return [("numeric integration", False, str(exc))]
    flat = report.integrability.status in ("flat", "integrable-on-subset")
    out.append(("path independence of the integrated section", (gs.defect or 0.0) < 1e-8 or not flat, f"defect {gs.defect:.3e}"))
    if model.lagrangian is not None and model.kind == "lagrangian":
        errs, hs = [], []
        for k in (4, 2, 1):
            g = Grid(tuple(type(a).with_step(a.lo, a.hi, a.h * k) for a in grid.axes))
            s = integrate_section(sec, model.chart, start, g, cons)
            errs.append(numeric_el_check(model.lagrangian, s).max)
            hs.append(g.axes[0].h)
        if max(errs) < 1e-13:
            out.append(("Euler-Lagrange residual (exact to rounding)", True, f"max {max(errs):.3e}"))
        else:
            order = convergence_order(hs, errs)
            out.append(("Euler-Lagrange residual small on the finest grid", errs[-1] < 1e-6, f"max {errs[-1]:.3e}"))
            out.append(("Euler-Lagrange residual converges at order 2", abs(order - 2) <= 0.2, f"order {order:.3f}"))
    return out


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="premultisym", description="Constraint and integrability analysis of field theories.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("analyze", "run the constraint and integrability algorithms"),
        ("check", "run the invariant checks applicable to a model"),
        ("integrate", "integrate the final connection on a grid"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("model", help="model file (TOML)")
        s.add_argument("--max-generations", type=int, default=None)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--output", default=None, help="write the report here instead of stdout")
        s.add_argument("--format", choices=("text", "structured"), default="text")
        if name == "integrate":
            s.add_argument("--start", default=None, help="fibre values at the first node, name=value,...")
            s.add_argument("--grid", default=None, help="lo:hi:h for all axes, or one per axis separated by commas")
    return p


def _emit(text: str, output: str | None):
    if output:
        with open(output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_analyze(args, model: Model) -> int:
    res, _, code = analyze_model(model, args.max_generations, args.seed)
    _emit(render_structured(res) if args.format == "structured" else render_text(res), args.output)
    return code


def _cmd_check(args, model: Model) -> int:
    checks = run_checks(model, args.seed, args.max_generations)
    if args.format == "structured":
        text = json.dumps(
            {"checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in checks], "passed": all(c[1] for c in checks)},
            indent=2,
        ) + "\n"
    else:
        text = "".join(f"{'PASS' if ok else 'FAIL'}  {n}{'  (' + d + ')' if d else ''}\n" for n, ok, d in checks)
    _emit(text, args.output)
    return EXIT_OK if all(c[1] for c in checks) else EXIT_CHECK_FAILED


def _cmd_integrate(args, model: Model) -> int:
    _, report, code = analyze_model(model, args.max_generations, args.seed)
    if code != EXIT_OK:
        sys.stderr.write(f"error: constraint algorithm ended with status {report.status}\n")
        return code
    grid_spec = args.grid or model.options.get("grid")
    start_spec = args.start or model.options.get("start")
    if grid_spec is None or start_spec is None:
        raise ModelError("integrate needs --grid and --start (or [options] grid/start)")
    grid = Grid.parse(str(grid_spec), model.chart.m)
    start = _start_point(start_spec)
    sec, cons = _integration_inputs(model, report)
    gs = integrate_section(sec, model.chart, start, grid, cons)
    el = None
    if model.kind == "lagrangian" and all(k >= 4 for k in grid.shape):
        el = numeric_el_check(model.lagrangian, gs)
    if args.format == "structured":
        doc = {
            "grid": [{"lo": a.lo, "hi": a.hi, "nodes": a.nodes} for a in grid.axes],
            "start": gs.start,
            "integrability": report.integrability.status,
            "defect": gs.defect,
            "euler_lagrange": None if el is None else {"max": el.max, "l2": el.l2},
            "table": gs.to_table(),
        }
        text = json.dumps(doc, indent=2) + "\n"
    else:
        text = gs.to_table()
        sys.stderr.write(f"path-independence defect: {gs.defect:.3e}\n")
        if el is not None:
            sys.stderr.write(f"Euler-Lagrange residual: {el}\n")
    _emit(text, args.output)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        model = load_model(args.model)
        if args.command == "analyze":
            return _cmd_analyze(args, model)
        if args.command == "check":
            return _cmd_check(args, model)
        return _cmd_integrate(args, model)
    except ModelError as exc:
        loc = f" (line {exc.line}, column {exc.column})" if exc.line is not None else ""
        sys.stderr.write(f"error: {exc}{loc}\n")
        return EXIT_INPUT
    except AssumptionViolation as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except (NonDecidableError, BlowUpError, ValueError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
