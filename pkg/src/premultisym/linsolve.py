"""Pointwise affine-linear system for the vertical part of a candidate section.

For a connection with horizontal frame ``D_mu`` and unknown vertical
coefficients ``Gamma^a_mu``, the field equations ``i(X)Omega = 0`` restricted
to vertical directions read ``A . Gamma = b`` with

    A[b, (a, mu)] = Omega(D_1, ..., d/du^a (slot mu), ..., D_m, d/du^b)
    b[b]          = -gamma(d/du^b)

(terms quadratic in Gamma vanish when Omega has no component with three
vertical slots).  Tangency to a constraint ``xi = 0`` adds, for every base
index mu, the row ``sum_a dxi/du^a Gamma^a_mu = -D_mu(xi)``.

Elimination is fraction-free (Bareiss) over the field of rational functions,
with exact zero tests on pivots.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .geometry import (
    AssumptionViolation,
    DiffForm,
    EhresmannConnection,
    MultiVector,
    contract,
    vertical_triple_violation,
)
from .symexpr import Chart, EvaluationError, Expr, NonDecidableError, evaluate

__all__ = [
    "RowTag",
    "LinearProblem",
    "SolutionFamily",
    "assemble",
    "solve",
    "orth_complement",
    "sampled_ranks",
    "exact_rank",
]

Unknown = tuple[str, int]


@dataclass(frozen=True)
class RowTag:
    """Where a row came from: a vertical test direction or a tangency condition."""

    kind: str  # "vertical" | "tangency"
    coordinate: str | None = None
    constraint: int | None = None
    mu: int | None = None

    def __str__(self):
        if self.kind == "vertical":
            return f"vertical[{self.coordinate}]"
        return f"tangency[xi{self.constraint}, mu={self.mu + 1}]"


@dataclass(frozen=True)
class LinearProblem:
    chart: Chart
    matrix: tuple[tuple[Expr, ...], ...]
    rhs: tuple[Expr, ...]
    unknowns: tuple[Unknown, ...]
    row_tags: tuple[RowTag, ...]
    frozen: Mapping[Unknown, Expr] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.matrix), len(self.unknowns)

    def residual(self, values: Sequence[Expr]) -> list[Expr]:
        """``A . values - b`` row by row."""
        out = []
        for row, bi in zip(self.matrix, self.rhs):
            acc = -bi
            for a, x in zip(row, values):
                if not a.is_zero and not x.is_zero:
                    acc = acc + a * x
            out.append(acc)
        return out

    def map_entries(self, fn) -> "LinearProblem":
        return LinearProblem(
            self.chart,
            tuple(tuple(fn(a) for a in row) for row in self.matrix),
            tuple(fn(b) for b in self.rhs),
            self.unknowns,
            self.row_tags,
            self.frozen,
        )


@dataclass(frozen=True)
class SolutionFamily:
    """Particular solution (free parameters zero), nullspace and residual conditions."""

    problem: LinearProblem
    particular: tuple[Expr, ...]
    nullspace: tuple[tuple[Expr, ...], ...]
    conditions: tuple[Expr, ...]
    covectors: tuple[tuple[Expr, ...], ...]
    rank: int
    pivot_columns: tuple[int, ...]
    pivots: tuple[Expr, ...]

    @property
    def unknowns(self) -> tuple[Unknown, ...]:
        return self.problem.unknowns

    def as_mapping(self, params: Sequence[Expr | int] = ()) -> dict[Unknown, Expr]:
        """Family member ``particular + sum_k params[k] * nullspace[k]`` plus frozen values."""
        vals = list(self.particular)
        for t, vec in zip(params, self.nullspace):
            t = t if isinstance(t, Expr) else Expr(t)
            vals = [v + t * n for v, n in zip(vals, vec)]
        out = dict(self.problem.frozen)
        out.update(zip(self.unknowns, vals))
        return out

    @property
    def stratification_warnings(self) -> tuple[Expr, ...]:
        """Non-constant pivots; extra constraints may appear where they vanish."""
        seen = []
        for p in self.pivots:
            if not p.is_constant:
                q = p.numerator
                if q not in seen:
                    seen.append(q)
        return tuple(seen)


def _fibre_mask(chart: Chart) -> list[str]:
    return list(chart.fibre_names)


def assemble(
    Omega: DiffForm,
    connection: EhresmannConnection,
    gamma: DiffForm,
    tangency_constraints: Sequence[Expr] = (),
    frozen: Mapping[Unknown, Expr] | None = None,
) -> LinearProblem:
    """Build the linear system for ``Gamma`` on the chart of ``Omega``.

    ``frozen`` fixes some unknowns to given expressions; their columns are
    moved to the right-hand side.
    """
    chart = Omega.chart
    bad = vertical_triple_violation(Omega)
    if bad is not None:
        raise AssumptionViolation(*bad)
    m = chart.m
    fibre = chart.fibre_names
    frame = connection.frame()
    all_unknowns = [(a, mu) for a in fibre for mu in range(m)]
    frozen = dict(frozen or {})
    for u in frozen:
        if u not in all_unknowns:
            raise KeyError(f"unknown {u} is not part of this chart")
    zero = Expr(0, chart.coords)

    # column (a, mu): the 1-form i(D_1 ^ .. d/du^a .. ^ D_m) Omega
    cols: dict[Unknown, DiffForm] = {}
    for a, mu in all_unknowns:
        vecs = list(frame)
        vecs[mu] = MultiVector.vector(chart, {a: 1})
        cols[(a, mu)] = contract(MultiVector.wedge_of(vecs), Omega)

    rows: list[list[Expr]] = []
    rhs: list[Expr] = []
    tags: list[RowTag] = []
    for b in fibre:
        rows.append([cols[u].coefficient(b) for u in all_unknowns])
        rhs.append(-gamma.coefficient(b))
        tags.append(RowTag("vertical", coordinate=b))
    for k, xi in enumerate(tangency_constraints):
        grads = {a: xi.diff(a) for a in fibre}
        for mu in range(m):
            rows.append([grads[a] if nu == mu else zero for a, nu in all_unknowns])
            rhs.append(-frame[mu].apply(xi))
            tags.append(RowTag("tangency", constraint=k, mu=mu))

    keep = [j for j, u in enumerate(all_unknowns) if u not in frozen]
    if frozen:
        for i, row in enumerate(rows):
            acc = rhs[i]
            for j, u in enumerate(all_unknowns):
                if u in frozen and not row[j].is_zero:
                    acc = acc - row[j] * frozen[u]
            rhs[i] = acc
    matrix = tuple(tuple(row[j].with_gens(chart.coords) for j in keep) for row in rows)
    return LinearProblem(
        chart,
        matrix,
        tuple(r.with_gens(chart.coords) for r in rhs),
        tuple(all_unknowns[j] for j in keep),
        tuple(tags),
        frozen,
    )


@dataclass
class _Echelon:
    M: list[list[Expr]]
    rank: int
    pivot_columns: list[int]
    pivots: list[Expr]
    last_pivot: Expr


def _bareiss(p: LinearProblem) -> _Echelon:
    rows, n = p.shape
    for row in p.matrix:
        for a in row:
            if a.atoms:
                raise NonDecidableError(f"non-decidable coefficient {a}: pivot tests need the rational fragment")
    one, zero = Expr(1), Expr(0)
    M = [list(p.matrix[i]) + [p.rhs[i]] + [one if j == i else zero for j in range(rows)] for i in range(rows)]
    width = n + 1 + rows
    prev = one
    r = 0
    pivot_columns: list[int] = []
    pivots: list[Expr] = []
    for col in range(n):
        if r == rows:
            break
        piv = next((i for i in range(r, rows) if not M[i][col].is_zero), None)
        if piv is None:
            continue
        if piv != r:
            M[r], M[piv] = M[piv], M[r]
        pr = M[r]
        pv = pr[col]
        for i in range(r + 1, rows):
            Mi = M[i]
            f = Mi[col]
            for j in range(col + 1, width):
                a = Mi[j]
                b = pr[j]
                if f.is_zero:
                    val = pv * a if not a.is_zero else a
                elif b.is_zero:
                    val = pv * a
                else:
                    val = pv * a - f * b
                if not val.is_zero and not prev == 1:
                    val = val / prev
                Mi[j] = val
            Mi[col] = zero
        prev = pv
        pivot_columns.append(col)
        pivots.append(pv)
        r += 1
    return _Echelon(M, r, pivot_columns, pivots, prev)


def _back_substitute(E: _Echelon, n: int, rhs_col: list[Expr], free_values: Mapping[int, Expr]) -> list[Expr]:
    x = [Expr(0)] * n
    for j, v in free_values.items():
        x[j] = v
    for i in range(E.rank - 1, -1, -1):
        pc = E.pivot_columns[i]
        row = E.M[i]
        acc = rhs_col[i]
        for j in range(pc + 1, n):
            if not row[j].is_zero and not x[j].is_zero:
                acc = acc - row[j] * x[j]
        x[pc] = acc / row[pc]
    return x


def solve(p: LinearProblem) -> SolutionFamily:
    """Solve ``A . Gamma = b`` over the rational-function field.

    Free parameters are set to zero for the particular solution.  Rows that
    eliminate to zero contribute their residual ``l . b`` as a consistency
    condition, ``l`` being the recorded left-nullspace covector.
    """
    rows, n = p.shape
    E = _bareiss(p)
    M = E.M
    scale = E.last_pivot
    conditions = []
    covectors = []
    for i in range(E.rank, rows):
        cov = [M[i][n + 1 + j] / scale for j in range(rows)]
        covectors.append(tuple(cov))
        res = M[i][n] / scale
        conditions.append(res)
    rhs_col = [M[i][n] for i in range(rows)]
    particular = _back_substitute(E, n, rhs_col, {})
    free = [j for j in range(n) if j not in E.pivot_columns]
    zeros = [Expr(0)] * rows
    nullspace = []
    for f in free:
        vals = {g: Expr(1 if g == f else 0) for g in free}
        nullspace.append(tuple(v.with_gens(p.chart.coords) for v in _back_substitute(E, n, zeros, vals)))
    coords = p.chart.coords
    return SolutionFamily(
        problem=p,
        particular=tuple(v.with_gens(coords) for v in particular),
        nullspace=tuple(nullspace),
        conditions=tuple(c.with_gens(coords) for c in conditions),
        covectors=tuple(tuple(c.with_gens(coords) for c in cov) for cov in covectors),
        rank=E.rank,
        pivot_columns=tuple(E.pivot_columns),
        pivots=tuple(v.with_gens(coords) for v in E.pivots),
    )


def orth_complement(p: LinearProblem) -> list[tuple[Expr, ...]]:
    """Basis of covectors ``l`` with ``l . A = 0``.

    Pairing such an ``l`` with the right-hand side gives a consistency
    condition (a constraint function) of the system.
    """
    return list(solve(p).covectors)


def exact_rank(rows: Sequence[Sequence[Fraction]]) -> int:
    """Rank of a rational matrix by exact Gaussian elimination."""
    M = [list(r) for r in rows]
    rank = 0
    ncols = len(M[0]) if M else 0
    for c in range(ncols):
        piv = next((i for i in range(rank, len(M)) if M[i][c] != 0), None)
        if piv is None:
            continue
        M[rank], M[piv] = M[piv], M[rank]
        for i in range(rank + 1, len(M)):
            if M[i][c] != 0:
                f = M[i][c] / M[rank][c]
                M[i] = [a - f * b for a, b in zip(M[i], M[rank])]
        rank += 1
    return rank


def sampled_ranks(p: LinearProblem, rng: random.Random, points: int = 5, at: Sequence[Mapping] | None = None) -> list[int]:
    """Exact rank of ``A`` at random rational points (or at the given points)."""
    coords = p.chart.coords
    out = []
    samples = list(at) if at is not None else []
    tries = 0
    while len(out) < (len(samples) if at is not None else points) and tries < 20 * points:
        tries += 1
        if at is not None:
            pt = samples[len(out)]
        else:
            pt = {c: Fraction(rng.randint(-30, 30), rng.randint(1, 7)) for c in coords}
        try:
            vals = [[evaluate(a, pt) for a in row] for row in p.matrix]
        except EvaluationError:
            if at is not None:
                out.append(-1)
            continue
        if vals and isinstance(vals[0][0] if vals[0] else 0, float):
            vals = [[Fraction(v) for v in row] for row in vals]
        out.append(exact_rank(vals) if vals and vals[0] else 0)
    return out
