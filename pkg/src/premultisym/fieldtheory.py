"""Lagrangian and Hamiltonian systems on jet and momentum charts.

Conventions (all on a single chart, ``d^m x = dx^1 ^ ... ^ dx^m``):

* ``d^{m-1}x_a = i(d/dx^a) d^m x``;
* ``Theta_L = dL/dv^A_a dy^A ^ d^{m-1}x_a + (L - v^A_a dL/dv^A_a) d^m x`` and
  ``Omega_L = -d Theta_L``;
* ``Omega_h = -dp^a_A ^ dy^A ^ d^{m-1}x_a + dH ^ d^m x``;
* the extended Legendre map sends ``p`` to ``L - v dL/dv`` while a Hamiltonian
  section sets ``p = -H``; both are kept as they are.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .constraints import (
    AnalysisReport,
    PremultisymplecticSystem,
    bracket_components,
    run_constraint_algorithm,
)
from .geometry import (
    CandidateSection,
    DiffForm,
    EhresmannConnection,
    MultiVector,
    contract,
    mvf_to_section,
    pullback,
    volume_form,
)
from .linsolve import LinearProblem, RowTag, SolutionFamily, assemble, sampled_ranks, solve
from .symexpr import Chart, Expr
from .varieties import reduce_modulo

__all__ = [
    "d_m1",
    "LagrangianSystem",
    "build_lagrangian_system",
    "omega_lagrangian_direct",
    "LegendreMap",
    "legendre_map",
    "HamiltonianSystem",
    "build_hamiltonian_system",
    "SemiHolonomy",
    "semi_holonomy",
    "semi_holonomic_analysis",
    "el_residual",
    "AffineLagrangian",
    "AffineAnalysis",
    "affine_analyze",
    "is_one_nondegenerate",
    "generic_rank",
]


def d_m1(chart: Chart, alpha: int) -> DiffForm:
    """``d^{m-1}x_alpha = i(d/dx^alpha) d^m x`` (alpha 0-based)."""
    return contract(MultiVector.basis(chart, chart.base_names[alpha]), volume_form(chart))


def _velocity(chart: Chart, A: int, alpha: int) -> str:
    return f"v{A + 1}_{alpha + 1}"


def _momentum(chart: Chart, A: int, alpha: int) -> str:
    return f"p{A + 1}_{alpha + 1}"


def _require(chart: Chart, kind: str):
    if chart.kind != kind:
        raise ValueError(f"expected a {kind} chart, got {chart.kind}")


def _matrix_problem(chart: Chart, rows: Sequence[Sequence[Expr]]) -> LinearProblem:
    ncols = len(rows[0]) if rows else 0
    zero = chart.expr(0)
    return LinearProblem(
        chart,
        tuple(tuple(r) for r in rows),
        tuple(zero for _ in rows),
        tuple(("c", j) for j in range(ncols)),
        tuple(RowTag("vertical", coordinate=str(i)) for i in range(len(rows))),
    )


def generic_rank(chart: Chart, rows: Sequence[Sequence[Expr]]) -> int:
    """Rank of a matrix of Exprs over the rational-function field."""
    if not rows or not rows[0]:
        return 0
    return solve(_matrix_problem(chart, rows)).rank


# ---------------------------------------------------------------------------
# Lagrangian side


@dataclass(frozen=True)
class LagrangianSystem:
    chart: Chart
    L: Expr
    Theta: DiffForm
    Omega: DiffForm
    hessian: tuple[tuple[Expr, ...], ...]
    regularity: str  # regular | almost-regular-candidate | degenerate
    hessian_rank: int
    sampled_ranks: tuple[int, ...]

    @property
    def omega(self) -> DiffForm:
        return volume_form(self.chart)

    @property
    def system(self) -> PremultisymplecticSystem:
        return PremultisymplecticSystem(self.Omega, self.omega)

    def dL(self, A: int, alpha: int) -> Expr:
        return self.L.diff(_velocity(self.chart, A, alpha))


def omega_lagrangian_direct(chart: Chart, L: Expr) -> DiffForm:
    """``Omega_L`` assembled term by term from second derivatives of ``L``."""
    _require(chart, "first-jet")
    m, n = chart.m, chart.n
    ys = chart.fields
    x = chart.base_names
    vol = volume_form(chart)
    out = DiffForm.zero(chart, m + 1)
    pairs = [(A, a) for A in range(n) for a in range(m)]
    for A, a in pairs:
        LvA = L.diff(_velocity(chart, A, a))
        dm1 = d_m1(chart, a)
        for B, nu in pairs:
            c = LvA.diff(_velocity(chart, B, nu))
            if not c.is_zero:
                out = out - DiffForm.basis(chart, _velocity(chart, B, nu), ys[A], coeff=c).wedge(dm1)
        for B in range(n):
            c = LvA.diff(ys[B])
            if not c.is_zero:
                out = out - DiffForm.basis(chart, ys[B], ys[A], coeff=c).wedge(dm1)
    for B, nu in pairs:
        c = chart.expr(0)
        for A, a in pairs:
            c = c + L.diff(_velocity(chart, A, a)).diff(_velocity(chart, B, nu)) * chart.symbol(_velocity(chart, A, a))
        if not c.is_zero:
            out = out + DiffForm.basis(chart, _velocity(chart, B, nu), coeff=c).wedge(vol)
    for B in range(n):
        c = -L.diff(ys[B])
        for A, a in pairs:
            c = c + L.diff(_velocity(chart, A, a)).diff(ys[B]) * chart.symbol(_velocity(chart, A, a))
        for a in range(m):
            c = c + L.diff(_velocity(chart, B, a)).diff(x[a])
        if not c.is_zero:
            out = out + DiffForm.basis(chart, ys[B], coeff=c).wedge(vol)
    return out


def build_lagrangian_system(chart: Chart, L: Expr, *, seed: int = 0, samples: int = 5, cross_check: bool = True) -> LagrangianSystem:
    """Poincare-Cartan forms, Hessian and regularity class of ``L``.

    With ``cross_check`` the result of ``-d Theta_L`` is compared against the
    term-by-term assembly and a mismatch raises ``AssertionError``.
    """
    _require(chart, "first-jet")
    m, n = chart.m, chart.n
    L = L.with_gens(chart.coords)
    pairs = [(A, a) for A in range(n) for a in range(m)]
    Theta = DiffForm.zero(chart, m)
    legendre_p = L
    for A, a in pairs:
        LvA = L.diff(_velocity(chart, A, a))
        legendre_p = legendre_p - chart.symbol(_velocity(chart, A, a)) * LvA
        if not LvA.is_zero:
            Theta = Theta + DiffForm.basis(chart, chart.fields[A], coeff=LvA).wedge(d_m1(chart, a))
    Theta = Theta + volume_form(chart).scale(legendre_p)
    Omega = -Theta.d()
    if cross_check:
        direct = omega_lagrangian_direct(chart, L)
        if direct != Omega:
            raise AssertionError("Omega_L disagrees with its direct expansion")
    hess = tuple(
        tuple(L.diff(_velocity(chart, A, a)).diff(_velocity(chart, B, b)) for B, b in pairs) for A, a in pairs
    )
    rank = generic_rank(chart, hess)
    ranks = tuple(sampled_ranks(_matrix_problem(chart, hess), random.Random(seed), samples))
    if rank == len(pairs):
        regularity = "regular"
    elif len(set(ranks)) <= 1:
        regularity = "almost-regular-candidate"
    else:
        regularity = "degenerate"
    return LagrangianSystem(chart, L, Theta, Omega, hess, regularity, rank, ranks)


@dataclass(frozen=True)
class LegendreMap:
    """Momenta as functions on the jet chart."""

    jet_chart: Chart
    momentum_chart: Chart
    momenta: Mapping[str, Expr]  # "p<A>_<nu>" -> dL/dv^A_nu
    p: Expr  # L - v dL/dv

    def pullback(self, form: DiffForm) -> DiffForm:
        """Pull a form on the momentum chart back to the jet chart."""
        return pullback(form, self.jet_chart, self.momenta)

    def pull_function(self, e: Expr) -> Expr:
        return e.subs(self.momenta).with_gens(self.jet_chart.coords)


def legendre_map(sys: LagrangianSystem) -> LegendreMap:
    chart = sys.chart
    mchart = Chart.momentum(chart.base_names, chart.fields)
    momenta = {}
    p = sys.L
    for A in range(chart.n):
        for a in range(chart.m):
            dL = sys.dL(A, a)
            momenta[_momentum(mchart, A, a)] = dL
            p = p - chart.symbol(_velocity(chart, A, a)) * dL
    return LegendreMap(chart, mchart, momenta, p)


@dataclass(frozen=True)
class HamiltonianSystem:
    chart: Chart
    H: Expr
    Omega: DiffForm

    @property
    def omega(self) -> DiffForm:
        return volume_form(self.chart)

    @property
    def system(self) -> PremultisymplecticSystem:
        return PremultisymplecticSystem(self.Omega, self.omega)


def build_hamiltonian_system(chart: Chart, H: Expr) -> HamiltonianSystem:
    _require(chart, "momentum")
    H = H.with_gens(chart.coords)
    Omega = DiffForm.differential(chart, H).wedge(volume_form(chart))
    for A in range(chart.n):
        for a in range(chart.m):
            Omega = Omega - DiffForm.basis(chart, _momentum(chart, A, a), chart.fields[A]).wedge(d_m1(chart, a))
    return HamiltonianSystem(chart, H, Omega)


def is_one_nondegenerate(Omega: DiffForm) -> bool:
    """Whether ``i(v) Omega = 0`` forces ``v = 0`` (generic rank over the chart)."""
    chart = Omega.chart
    rows = []
    images = [contract(MultiVector.basis(chart, c), Omega) for c in chart.coords]
    masks = sorted({mk for f in images for mk in f.terms})
    zero = chart.expr(0)
    for f in images:
        rows.append([f.terms.get(mk, zero) for mk in masks])
    if not masks:
        return False
    # columns are form components; rank over rows (one per coordinate vector)
    cols = [list(c) for c in zip(*rows)]
    return generic_rank(chart, cols) == chart.dim


# ---------------------------------------------------------------------------
# semi-holonomy and Euler-Lagrange residuals


def _section(sys_chart: Chart, X) -> CandidateSection:
    if isinstance(X, CandidateSection):
        return X
    if isinstance(X, MultiVector):
        return mvf_to_section(X, EhresmannConnection.trivial(sys_chart))
    raise TypeError("expected a MultiVector or CandidateSection")


@dataclass(frozen=True)
class SemiHolonomy:
    defects: Mapping[tuple[int, int], Expr]  # (A, alpha) 0-based -> Gamma^{yA}_alpha - v^A_alpha
    s_constraints: tuple[Expr, ...]
    forced: bool | None = None  # every member of a solution family is semi-holonomic


def semi_holonomy(
    sys: LagrangianSystem,
    X,
    constraints: Sequence[Expr] = (),
    family: SolutionFamily | None = None,
) -> SemiHolonomy:
    """Defects ``Gamma^{yA}_alpha - v^A_alpha`` of ``X``.

    Defects are reduced modulo ``constraints``; the nonzero ones form the
    S-constraint list.  When ``family`` is given, ``forced`` reports whether
    the whole family has zero defect, i.e. the nullspace has no component
    in the ``y`` directions.
    """
    chart = sys.chart
    _require(chart, "first-jet")
    section = _section(chart, X)
    defects = {}
    s = []
    for A, y in enumerate(chart.fields):
        for a in range(chart.m):
            d = section.total(y, a) - chart.symbol(_velocity(chart, A, a))
            d = reduce_modulo(d, list(constraints), chart)
            defects[(A, a)] = d
            if not d.is_zero:
                s.append(d)
    forced = None
    if family is not None:
        ys = set(chart.fields)
        idx = [j for j, (u, _) in enumerate(family.unknowns) if u in ys]
        null_ok = all(
            reduce_modulo(vec[j], list(constraints), chart).is_zero for vec in family.nullspace for j in idx
        )
        forced = null_ok and not s
    return SemiHolonomy(defects, tuple(s), forced)


def semi_holonomic_analysis(
    sys: LagrangianSystem,
    report: AnalysisReport,
    *,
    max_generations: int = 16,
    seed: int = 0,
) -> AnalysisReport:
    """Constraint algorithm restricted to semi-holonomic solutions.

    Starts on the final set of ``report`` with ``Gamma^{yA}_alpha = v^A_alpha``
    pinned; the generations of the returned report are the S-constraints
    and their tangency consequences.
    """
    chart = sys.chart
    frozen = {
        (y, a): chart.symbol(_velocity(chart, A, a)) for A, y in enumerate(chart.fields) for a in range(chart.m)
    }
    return run_constraint_algorithm(
        sys.system,
        report.connection,
        max_generations=max_generations,
        seed=seed,
        frozen=frozen,
        initial_constraints=report.constraints,
        label="semi-holonomy",
    )


def el_residual(sys: LagrangianSystem, X, constraints: Sequence[Expr] = ()) -> list[Expr]:
    """Euler-Lagrange residual per field for a semi-holonomic ``X``.

    ``Gamma^B_{alpha nu}`` is the ``d/dv^B_nu`` component of the frame field
    ``X_alpha``.  Residuals are reduced modulo ``constraints``.
    """
    chart = sys.chart
    _require(chart, "first-jet")
    section = _section(chart, X)
    sh = semi_holonomy(sys, section, constraints)
    if sh.s_constraints:
        raise ValueError(f"X is not semi-holonomic: defects {[str(d) for d in sh.s_constraints]}")
    m, n = chart.m, chart.n
    L = sys.L
    out = []
    for A in range(n):
        r = -L.diff(chart.fields[A])
        for a in range(m):
            LvA = L.diff(_velocity(chart, A, a))
            r = r + LvA.diff(chart.base_names[a])
            for B in range(n):
                r = r + LvA.diff(chart.fields[B]) * chart.symbol(_velocity(chart, B, a))
                for nu in range(m):
                    h = LvA.diff(_velocity(chart, B, nu))
                    if not h.is_zero:
                        r = r + h * section.total(_velocity(chart, B, nu), a)
        out.append(reduce_modulo(r, list(constraints), chart))
    return out


# ---------------------------------------------------------------------------
# affine Lagrangians


@dataclass(frozen=True)
class AffineLagrangian:
    """``L = a(x, y) + f^mu_B(x, y) v^B_mu`` given on the plain chart ``(x; y)``.

    ``f`` maps ``(mu, B)`` (0-based) to ``f^mu_B``.
    """

    chart: Chart
    a: Expr
    f: Mapping[tuple[int, int], Expr] = field(default_factory=dict)

    def __post_init__(self):
        for mu, B in self.f:
            if not (0 <= mu < self.chart.m and 0 <= B < len(self.chart.fibre_names)):
                raise ValueError(f"bad affine index ({mu}, {B})")

    @property
    def m(self) -> int:
        return self.chart.m

    @property
    def n(self) -> int:
        return len(self.chart.fibre_names)

    def F(self, mu: int, B: int) -> Expr:
        return self.f.get((mu, B), self.chart.expr(0))

    def block(self, mu: int) -> list[list[Expr]]:
        """``f^mu_{AB} = df^mu_B/dy^A - df^mu_A/dy^B``, rows A, columns B."""
        ys = self.chart.fibre_names
        return [[self.F(mu, B).diff(ys[A]) - self.F(mu, A).diff(ys[B]) for B in range(self.n)] for A in range(self.n)]

    @property
    def alpha(self) -> DiffForm:
        ch = self.chart
        out = volume_form(ch).scale(self.a.with_gens(ch.coords))
        for (mu, B), c in sorted(self.f.items()):
            out = out + DiffForm.basis(ch, ch.fibre_names[B], coeff=c).wedge(d_m1(ch, mu))
        return out

    @property
    def Omega(self) -> DiffForm:
        return -self.alpha.d()

    @property
    def system(self) -> PremultisymplecticSystem:
        return PremultisymplecticSystem(self.Omega, volume_form(self.chart))

    @property
    def jet_chart(self) -> Chart:
        return Chart.first_jet(self.chart.base_names, self.chart.fibre_names)

    def lagrangian(self) -> Expr:
        jc = self.jet_chart
        L = self.a.with_gens(jc.coords)
        for (mu, B), c in self.f.items():
            L = L + c * jc.symbol(f"v{B + 1}_{mu + 1}")
        return L.with_gens(jc.coords)


@dataclass(frozen=True)
class AffineAnalysis:
    matrix: tuple[tuple[Expr, ...], ...]
    rhs: tuple[Expr, ...]
    nondegenerate: bool
    family: SolutionFamily
    dimension: int | None
    zeta: Mapping[tuple[str, int, int], Expr]
    engine_agrees: bool
    report: AnalysisReport


def _row_scale(u: Sequence[Expr], v: Sequence[Expr]) -> Expr | None:
    """Constant ``c`` with ``v = c u`` (``None`` if there is none)."""
    c = None
    for a, b in zip(u, v):
        if a.is_zero and b.is_zero:
            continue
        if a.is_zero or b.is_zero:
            return None
        r = b / a
        if not r.is_constant:
            return None
        if c is None:
            c = r
        elif r != c:
            return None
    return c if c is not None else Expr(1)


def affine_analyze(aff: AffineLagrangian, *, seed: int = 0, max_generations: int = 16) -> AffineAnalysis:
    """Closed-form system for an affine Lagrangian, checked against the engine.

    Rows ``A``, columns ``(B, mu)``:
    ``(df^mu_A/dy^B - df^mu_B/dy^A) F^B_mu = da/dy^A - df^nu_A/dx^nu``.
    A system of rank ``n`` has solution space dimension ``n m - n``;
    otherwise the constraint algorithm decides.
    """
    ch = aff.chart
    ys, xs = ch.fibre_names, ch.base_names
    n, m = aff.n, aff.m
    blocks = [aff.block(mu) for mu in range(m)]
    matrix = tuple(tuple(blocks[mu][B][A] for B in range(n) for mu in range(m)) for A in range(n))
    rhs = []
    for A in range(n):
        r = aff.a.with_gens(ch.coords).diff(ys[A])
        for nu in range(m):
            r = r - aff.F(nu, A).diff(xs[nu])
        rhs.append(r)
    unknowns = tuple((y, mu) for y in ys for mu in range(m))
    problem = LinearProblem(ch, matrix, tuple(rhs), unknowns, tuple(RowTag("vertical", coordinate=y) for y in ys))
    family = solve(problem)
    nondeg = family.rank == n
    report = run_constraint_algorithm(aff.system, max_generations=max_generations, seed=seed)
    conn = report.connection
    engine = assemble(aff.Omega, conn, report.splitting.gamma)
    agrees = True
    for A in range(n):
        c = _row_scale(list(matrix[A]) + [rhs[A]], list(engine.matrix[A]) + [engine.rhs[A]])
        if c is None:
            agrees = False
    if nondeg:
        dimension = len(family.nullspace)
        sol = family
    else:
        dimension = len(report.solution.nullspace) if report.status == "final-submanifold-found" else None
        sol = report.solution
    section = CandidateSection(EhresmannConnection.trivial(ch), sol.as_mapping())
    zeta = bracket_components(section)
    return AffineAnalysis(matrix, tuple(rhs), nondeg, family, dimension, zeta, agrees, report)
