"""Constraint algorithm and integrability algorithm.

The constraint loop solves the pointwise system for ``Gamma``, collects the
consistency conditions as constraint functions, and re-solves with tangency
rows until a generation adds nothing.  The integrability loop then takes
the canonical representative of the solution family and asks for its
horizontal frame to commute, adding bracket components and their
derivatives along the frame as further constraints.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .geometry import (
    AssumptionViolation,
    CandidateSection,
    DiffForm,
    EhresmannConnection,
    MultiVector,
    Splitting,
    mvf_to_section,
    split_omega,
)
from .linsolve import LinearProblem, SolutionFamily, Unknown, assemble, solve
from .symexpr import Chart, Expr
from .varieties import (
    Inconsistent,
    jacobian_rank,
    normalize_constraint,
    reduce_modulo,
    sample_variety,
    vanishes_at,
)

__all__ = [
    "PremultisymplecticSystem",
    "ConstraintGeneration",
    "IntegrabilityResult",
    "AnalysisReport",
    "run_constraint_algorithm",
    "run_integrability_algorithm",
    "bracket_components",
    "verify_report",
]

FINAL = "final-submanifold-found"
NO_SOLUTION = "no-solution"
LIMIT = "iteration-limit"
AMBIGUOUS = "stratification-ambiguous"


@dataclass(frozen=True)
class PremultisymplecticSystem:
    """``Omega`` (degree m+1) and ``omega`` (degree m) on one chart."""

    Omega: DiffForm
    omega: DiffForm | None = None

    @property
    def chart(self) -> Chart:
        return self.Omega.chart


@dataclass(frozen=True)
class ConstraintGeneration:
    index: int
    constraints: tuple[Expr, ...]
    provenance: tuple[str, ...]

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)


@dataclass(frozen=True)
class IntegrabilityResult:
    status: str  # flat | integrable-on-subset | not-integrable | iteration-limit
    zeta: Mapping[tuple[str, int, int], Expr]
    generations: tuple[ConstraintGeneration, ...]
    section: CandidateSection

    @property
    def constraints(self) -> tuple[Expr, ...]:
        return tuple(c for g in self.generations for c in g.constraints)


@dataclass(frozen=True)
class AnalysisReport:
    chart: Chart
    connection: EhresmannConnection
    splitting: Splitting
    generations: tuple[ConstraintGeneration, ...]
    status: str
    solution: SolutionFamily
    warnings: tuple[str, ...] = ()
    initial_constraints: tuple[Expr, ...] = ()
    integrability: IntegrabilityResult | None = None
    extras: Mapping[str, object] = field(default_factory=dict)

    @property
    def constraints(self) -> tuple[Expr, ...]:
        """Every constraint on the final set, initial ones first."""
        return self.initial_constraints + tuple(c for g in self.generations for c in g.constraints)

    def canonical_section(self, params: Sequence[Expr | int] = ()) -> CandidateSection:
        return CandidateSection(self.connection, self.solution.as_mapping(params))


class _Accumulator:
    """Tracks accepted constraints and decides whether a candidate is new."""

    def __init__(self, chart: Chart, base: Sequence[Expr], rng: random.Random, samples: int):
        self.chart = chart
        self.items: list[Expr] = list(base)
        self.rng = rng
        self.samples = samples
        self._points: list[dict] | None = None

    def points(self) -> list[dict]:
        if self._points is None:
            self._points = sample_variety(self.items, self.chart, self.rng, self.samples)
        return self._points

    def offer(self, e: Expr) -> Expr | None:
        """Normalized ``e`` if it is not implied by the accepted list, else ``None``.

        Raises :class:`Inconsistent` when ``e`` is a nonzero constant (or
        reduces to one).
        """
        c = normalize_constraint(e, self.chart)
        if c is None:
            return None
        r = reduce_modulo(c, self.items, self.chart)
        if r.is_zero:
            return None
        if r.is_constant:
            raise Inconsistent(f"{e} reduces to a nonzero constant on the current set")
        pts = self.points()
        if pts and all(vanishes_at(c, p) for p in pts):
            return None
        self.items.append(c)
        self._points = None
        return c

    def too_small(self, m: int) -> bool:
        """Whether the accepted set has dimension at most ``m - 1``."""
        chart = self.chart
        if not self.items:
            return False
        pts = self.points()
        if pts:
            rank = jacobian_rank(self.items, chart, pts[0])
        else:
            rank = len(self.items)
        return chart.dim - rank <= m - 1


def _reduced_problem(p: LinearProblem, constraints: Sequence[Expr]) -> LinearProblem:
    if not constraints:
        return p
    return p.map_entries(lambda e: reduce_modulo(e, constraints, p.chart))


def _provenance(family: SolutionFamily, k: int) -> str:
    cov = family.covectors[k]
    tags = family.problem.row_tags
    if any(not c.is_zero and t.kind == "tangency" for c, t in zip(cov, tags)):
        return "tangency"
    return "consistency"


def run_constraint_algorithm(
    system: PremultisymplecticSystem,
    connection: EhresmannConnection | None = None,
    *,
    max_generations: int = 16,
    seed: int = 0,
    frozen: Mapping[Unknown, Expr] | None = None,
    initial_constraints: Sequence[Expr] = (),
    samples: int = 5,
    label: str | None = None,
) -> AnalysisReport:
    """Iterate constraint generations to a fixed point.

    ``frozen`` pins some unknowns (used for semi-holonomic solutions);
    ``initial_constraints`` start the loop on a given submanifold; ``label``
    overrides the provenance tag of emitted constraints.
    """
    chart = system.chart
    connection = connection or EhresmannConnection.trivial(chart)
    split = split_omega(system.Omega, connection, system.omega)
    if not split.assumption_ok:
        from .geometry import vertical_triple_violation

        triple, value = vertical_triple_violation(system.Omega)
        raise AssumptionViolation(triple, value)
    rng = random.Random(seed)
    init = []
    for c in initial_constraints:
        n = normalize_constraint(c, chart)
        if n is not None:
            init.append(n)
    acc = _Accumulator(chart, init, rng, samples)
    generations: list[ConstraintGeneration] = []
    warnings: list[str] = []
    status = None
    family = None
    while True:
        current = list(acc.items)
        problem = assemble(system.Omega, connection, split.gamma, current, frozen)
        family = solve(_reduced_problem(problem, current))
        new, prov = [], []
        try:
            for k, cond in enumerate(family.conditions):
                c = acc.offer(cond)
                if c is not None:
                    new.append(c)
                    prov.append(label or _provenance(family, k))
        except Inconsistent as exc:
            warnings.append(str(exc))
            status = NO_SOLUTION
        if new:
            generations.append(ConstraintGeneration(len(generations) + 1, tuple(new), tuple(prov)))
        if status is not None:
            break
        if new and acc.too_small(chart.m):
            status = NO_SOLUTION
            warnings.append("constraint set has dimension at most m - 1")
            break
        if not new:
            status = FINAL
            break
        if len(generations) >= max_generations:
            status = LIMIT
            break
    for piv in family.stratification_warnings:
        warnings.append(f"pivot {piv} is not constant; rank may drop where it vanishes")
        pts = acc.points()
        if status == FINAL and pts and all(vanishes_at(piv, p) for p in pts):
            status = AMBIGUOUS
    return AnalysisReport(
        chart=chart,
        connection=connection,
        splitting=split,
        generations=tuple(generations),
        status=status,
        solution=family,
        warnings=tuple(warnings),
        initial_constraints=tuple(init),
    )


def bracket_components(section: CandidateSection) -> dict[tuple[str, int, int], Expr]:
    """Vertical parts ``zeta^a_{mu nu}`` of ``[X_mu, X_nu]`` for ``mu < nu``.

    In the normalized frame ``X_mu = d/dx^mu + (G + Gamma)^a_mu d/du^a`` the
    brackets are vertical, so the frame is involutive exactly when all of
    these vanish.
    """
    chart = section.chart
    frame = section.frame()
    out = {}
    for mu in range(chart.m):
        for nu in range(mu + 1, chart.m):
            for a in chart.fibre_names:
                z = frame[mu].apply(section.total(a, nu)) - frame[nu].apply(section.total(a, mu))
                out[(a, mu, nu)] = z
    return out


def run_integrability_algorithm(
    report: AnalysisReport,
    X: MultiVector | CandidateSection | None = None,
    *,
    max_generations: int = 16,
    seed: int = 0,
    samples: int = 5,
) -> AnalysisReport:
    """Enforce involutivity of a solution on the final constraint set.

    ``X`` defaults to the canonical representative of the report's solution
    family.  Generation 1 holds the independent bracket components; later
    generations hold their derivatives along the frame.
    """
    if report.status != FINAL:
        raise ValueError(f"integrability needs a final constraint set, status is {report.status}")
    chart = report.chart
    if X is None:
        section = report.canonical_section()
    elif isinstance(X, MultiVector):
        section = mvf_to_section(X, report.connection)
    else:
        section = X
    frame = section.frame()
    zeta = bracket_components(section)
    acc = _Accumulator(chart, report.constraints, random.Random(seed), samples)
    generations: list[ConstraintGeneration] = []
    status = None
    pending = [z for z in zeta.values()]
    tag = "involutivity"
    while True:
        new = []
        try:
            for z in pending:
                c = acc.offer(reduce_modulo(z, acc.items, chart))
                if c is not None:
                    new.append(c)
        except Inconsistent:
            status = "not-integrable"
        if new:
            generations.append(ConstraintGeneration(len(generations) + 1, tuple(new), (tag,) * len(new)))
        if status is not None:
            break
        if not new:
            status = "flat" if not generations else "integrable-on-subset"
            break
        if acc.too_small(chart.m):
            status = "not-integrable"
            break
        if len(generations) >= max_generations:
            status = LIMIT
            break
        pending = [Xm.apply(c) for c in new for Xm in frame]
        tag = "integrability-tangency"
    result = IntegrabilityResult(status, zeta, tuple(generations), section)
    return replace(report, integrability=result)


def verify_report(report: AnalysisReport, seed: int = 1, samples: int = 5, tol: float = 1e-9) -> list[str]:
    """Spot-check a report on sampled points of its final set.

    Returns a list of failure descriptions (empty when everything holds):
    every constraint must vanish and the canonical solution must satisfy the
    assembled system there.
    """
    chart = report.chart
    cons = list(report.constraints)
    pts = sample_variety(cons, chart, random.Random(seed), samples)
    failures = []
    if cons and not pts:
        failures.append("no points found on the constraint set")
    sol = report.solution
    res = sol.problem.residual(list(sol.particular))
    for k, p in enumerate(pts):
        for c in cons:
            if not vanishes_at(c, p, tol):
                failures.append(f"constraint {c} nonzero at sample {k}")
        if report.status == FINAL:
            for tag, r in zip(sol.problem.row_tags, res):
                if not vanishes_at(r, p, tol):
                    failures.append(f"row {tag} residual nonzero at sample {k}")
    return failures
