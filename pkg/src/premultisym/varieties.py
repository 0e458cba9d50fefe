"""Constraint bookkeeping: normalization, reduction and sampling of zero sets."""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
import sympy
from sympy import QQ, grlex
from sympy.polys.rings import PolyRing

from .symexpr import Chart, EvaluationError, Expr, evaluate

__all__ = [
    "normalize_constraint",
    "reduce_modulo",
    "sample_variety",
    "vanishes_at",
    "jacobian_rank",
    "Inconsistent",
]

_CHART_RINGS: dict[tuple, PolyRing] = {}


class Inconsistent(ValueError):
    """A constraint reduced to a nonzero constant: the zero set is empty."""


def _chart_ring(chart: Chart, extra: Sequence = ()) -> PolyRing:
    gens = tuple(sympy.Symbol(n) for n in chart.coords) + tuple(extra)
    r = _CHART_RINGS.get(gens)
    if r is None:
        r = _CHART_RINGS[gens] = PolyRing(gens, QQ, grlex)
    return r


def _in_chart_ring(e: Expr, chart: Chart):
    num, den = e.poly_parts()
    extra = [s for s in num.ring.symbols if s.name not in chart.coords and s.name != "_none"]
    ring = _chart_ring(chart, extra)
    return num.set_ring(ring), den.set_ring(ring), ring


def normalize_constraint(e: Expr, chart: Chart) -> Expr | None:
    """Canonical generator of the zero set of ``e``.

    Takes the numerator, clears it to a primitive integer polynomial, drops
    repeated factors and fixes the sign so the leading coefficient (graded
    lexicographic in chart order) is positive.  Returns ``None`` for the
    zero expression; raises :class:`Inconsistent` for a nonzero constant.
    """
    if e.is_zero:
        return None
    e.require_decidable("constraint")
    num, _, ring = _in_chart_ring(e, chart)
    if num.is_ground:
        raise Inconsistent(f"constraint {e} is a nonzero constant")
    num = num.sqf_part()
    num = num.monic()
    denoms = 1
    for c in num.coeffs():
        denoms = sympy.ilcm(denoms, int(c.denominator))
    num = num * denoms
    g = 0
    for c in num.coeffs():
        g = sympy.igcd(g, int(c))
    num = num.quo_ground(QQ(g))
    return Expr(num.as_expr(), chart.coords)


def reduce_modulo(e: Expr, constraints: Sequence[Expr], chart: Chart) -> Expr:
    """Remainder of ``e`` under ordered multivariate division by ``constraints``.

    Division acts on the numerator (graded lexicographic, chart order); the
    denominator is reduced too unless that would make it vanish.
    """
    if not constraints or e.is_zero or e.atoms:
        return e
    num, den, ring = _in_chart_ring(e, chart)
    divisors = []
    for c in constraints:
        cn, _, _ = _in_chart_ring(c, chart)
        divisors.append(cn.set_ring(ring))
    rn = num.rem(divisors)
    if rn.is_zero:
        return Expr(0, chart.coords)
    rd = den.rem(divisors) if not den.is_ground else den
    if rd.is_zero:
        rd = den
    return Expr(rn.as_expr() / rd.as_expr(), chart.coords)


def _linear_solve_point(constraints: Sequence[Expr], chart: Chart, rng: random.Random):
    pt: dict[str, Fraction] = {c: Fraction(rng.randint(-40, 40), rng.randint(1, 9)) for c in chart.coords}
    used: set[str] = set()
    order = list(reversed(chart.fibre_names)) + list(reversed(chart.base_names))
    for xi in constraints:
        chosen = None
        for v in order:
            if v in used or xi.degree_in(v) != 1:
                continue
            coef = xi.diff(v)
            rest = {k: val for k, val in pt.items() if k != v}
            rest[v] = Fraction(0)
            try:
                c1 = evaluate(coef, rest)
                c0 = evaluate(xi, rest)
            except EvaluationError:
                continue
            if c1 == 0:
                continue
            pt[v] = -c0 / c1
            chosen = v
            break
        if chosen is None:
            return None
        used.update(xi.free_symbols)
    for xi in constraints:
        try:
            if evaluate(xi, pt) != 0:
                return None
        except EvaluationError:
            return None
    return pt


def _compile_system(constraints: Sequence[Expr], chart: Chart):
    """One numpy evaluator each for the residual vector and its Jacobian."""
    names = list(chart.coords)
    syms = [sympy.Symbol(n) for n in names]
    for c in constraints:
        c.require_decidable("numeric sampling")
    F = [c.sym for c in constraints]
    J = [[sympy.diff(f, s) for s in syms] for f in F]
    f = sympy.lambdify(syms, F, modules="numpy")
    j = sympy.lambdify(syms, J, modules="numpy")
    return (lambda x: np.array(f(*x), dtype=float)), (lambda x: np.array(j(*x), dtype=float))


def _newton_point(compiled, chart: Chart, rng: random.Random, iters: int = 60):
    names = list(chart.coords)
    fvec, jac = compiled
    x = np.array([rng.uniform(-3, 3) for _ in names])
    for _ in range(iters):
        with np.errstate(all="ignore"):
            F = fvec(x)
            if not np.all(np.isfinite(F)):
                return None
            if np.max(np.abs(F)) < 1e-13:
                return {n: float(v) for n, v in zip(names, x)}
            J = jac(x)
            if not np.all(np.isfinite(J)):
                return None
        step, *_ = np.linalg.lstsq(J, -F, rcond=None)
        lam = 1.0
        base = np.linalg.norm(F)
        while lam > 1e-4:
            trial = x + lam * step
            with np.errstate(all="ignore"):
                Ft = fvec(trial)
            if np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) < base:
                break
            lam /= 2
        x = x + lam * step
    return None


def sample_variety(constraints: Sequence[Expr], chart: Chart, rng: random.Random, count: int = 5) -> list[dict]:
    """Up to ``count`` points on the zero set of ``constraints``.

    Exact rational points are produced when each constraint can be solved
    for a variable it contains linearly (and which no earlier constraint
    uses); otherwise damped Gauss-Newton from random starts yields float
    points.
    """
    pts: list[dict] = []
    if not constraints:
        for _ in range(count):
            pts.append({c: Fraction(rng.randint(-40, 40), rng.randint(1, 9)) for c in chart.coords})
        return pts
    for _ in range(count * 10):
        if len(pts) == count:
            return pts
        p = _linear_solve_point(constraints, chart, rng)
        if p is not None:
            pts.append(p)
    compiled = _compile_system(constraints, chart)
    for _ in range(count * 10):
        if len(pts) == count:
            break
        p = _newton_point(compiled, chart, rng)
        if p is not None:
            pts.append(p)
    return pts


def vanishes_at(e: Expr, point: Mapping, tol: float = 1e-9) -> bool:
    try:
        v = evaluate(e, point)
    except EvaluationError:
        return False
    if isinstance(v, Fraction):
        return v == 0
    scale = 1.0 + max(abs(float(x)) for x in point.values())
    return abs(v) <= tol * scale ** max(1, _degree(e))


def _degree(e: Expr) -> int:
    num, _ = e.poly_parts()
    return max((sum(m) for m in num.itermonoms()), default=0)


def jacobian_rank(constraints: Sequence[Expr], chart: Chart, point: Mapping) -> int:
    if not constraints:
        return 0
    rows = []
    for c in constraints:
        rows.append([evaluate(c.diff(n), point) for n in chart.coords])
    if all(isinstance(v, Fraction) for r in rows for v in r):
        from .linsolve import exact_rank

        return exact_rank(rows)
    return int(np.linalg.matrix_rank(np.array(rows, dtype=float), tol=1e-8))
