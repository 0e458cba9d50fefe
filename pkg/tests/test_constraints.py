import random

import pytest
import sympy
from hypothesis import given, settings, strategies as st

from premultisym.constraints import (
    FINAL,
    LIMIT,
    NO_SOLUTION,
    PremultisymplecticSystem,
    bracket_components,
    run_constraint_algorithm,
    run_integrability_algorithm,
    verify_report,
)
from premultisym.fieldtheory import build_lagrangian_system
from premultisym.geometry import (
    AssumptionViolation,
    CandidateSection,
    DiffForm,
    EhresmannConnection,
    section_to_mvf,
)
from premultisym.symexpr import Chart


def _gens(report):
    return [[str(c) for c in g] for g in report.generations]


def _free(chart):
    """Omega = 0 on a plain chart: every splitting solves the field equations."""
    return PremultisymplecticSystem(DiffForm.zero(chart, chart.m + 1))


def test_affine_example(affine_system):
    r = run_constraint_algorithm(affine_system)
    assert r.status == FINAL
    assert _gens(r) == [["y1 - y2"]]
    assert r.generations[0].provenance == ("consistency",)
    assert r.warnings == ()
    assert verify_report(r) == []


def test_affine_example_rerun_is_stable(affine_system):
    r = run_constraint_algorithm(affine_system)
    again = run_constraint_algorithm(affine_system, initial_constraints=r.constraints, seed=7)
    assert again.status == FINAL and again.generations == ()
    assert again.constraints == r.constraints


def test_affine_example_integrability_is_flat(affine_system):
    r = run_integrability_algorithm(run_constraint_algorithm(affine_system))
    assert r.integrability.status == "flat"
    assert all(z.is_zero for z in r.integrability.zeta.values())


def test_harmonic_has_no_constraints(harmonic):
    r = run_constraint_algorithm(harmonic.system)
    assert r.status == FINAL and r.generations == ()
    assert len(r.solution.nullspace) == 3
    assert verify_report(r) == []


@pytest.mark.parametrize(
    "fibres,coeff,status,gens",
    [
        (["q", "p"], "p", FINAL, [["p"]]),
        (["q"], "t", NO_SOLUTION, [["t"]]),
        (["q"], "1", NO_SOLUTION, []),
    ],
)
def test_one_dimensional_toys(fibres, coeff, status, gens):
    ch = Chart.plain(["t"], fibres)
    Om = DiffForm.basis(ch, "q", "t", coeff=ch.parse(coeff))
    r = run_constraint_algorithm(PremultisymplecticSystem(Om))
    assert r.status == status
    assert _gens(r) == gens
    if status == NO_SOLUTION:
        assert r.warnings


def test_dirac_chain():
    # L = v^2/2 + y1*y2: dL/dy2 = y1 has no velocity, so y1 = 0, then its
    # velocity v1_1 = 0, then the force y2 = 0
    ch = Chart.first_jet(["x1"], ["y1", "y2"])
    sys_ = build_lagrangian_system(ch, ch.parse("v1_1^2/2 + y1*y2"))
    r = run_constraint_algorithm(sys_.system)
    assert r.status == FINAL
    assert _gens(r) == [["y1"], ["v1_1"], ["y2"]]
    assert [g.provenance for g in r.generations] == [("consistency",), ("tangency",), ("tangency",)]
    assert verify_report(r) == []


def test_iteration_limit():
    ch = Chart.first_jet(["x1"], ["y1", "y2"])
    sys_ = build_lagrangian_system(ch, ch.parse("v1_1^2/2 + y1*y2"))
    r = run_constraint_algorithm(sys_.system, max_generations=2)
    assert r.status == LIMIT and len(r.generations) == 2


@pytest.mark.parametrize("seed", [0, 1, 2, 99])
def test_seed_independent_result(affine_system, seed):
    assert _gens(run_constraint_algorithm(affine_system, seed=seed)) == [["y1 - y2"]]


def test_assumption_violation_raises():
    ch = Chart.plain(["x1", "x2"], ["y1", "y2", "y3"])
    with pytest.raises(AssumptionViolation):
        run_constraint_algorithm(PremultisymplecticSystem(DiffForm.basis(ch, "y1", "y2", "y3")))


def test_integrability_on_a_subset():
    ch = Chart.plain(["x1", "x2"], ["y"])
    r = run_constraint_algorithm(_free(ch))
    # X1 = d1, X2 = d2 + x1*y dy: [X1, X2] = y dy
    sec = CandidateSection(EhresmannConnection.trivial(ch), {("y", 1): ch.parse("x1*y")})
    out = run_integrability_algorithm(r, sec).integrability
    assert str(out.zeta[("y", 0, 1)]) == "y"
    assert out.status == "integrable-on-subset"
    assert [[str(c) for c in g] for g in out.generations] == [["y"]]


def test_integrability_accepts_multivector():
    ch = Chart.plain(["x1", "x2"], ["y"])
    r = run_constraint_algorithm(_free(ch))
    sec = CandidateSection(EhresmannConnection.trivial(ch), {("y", 0): ch.parse("y")})
    out = run_integrability_algorithm(r, section_to_mvf(sec)).integrability
    assert out.status == "flat"


def test_integrability_not_integrable():
    ch = Chart.plain(["x1", "x2"], ["y"])
    r = run_constraint_algorithm(_free(ch))
    # [d1, d2 + x1 dy] = dy: the bracket is never zero
    sec = CandidateSection(EhresmannConnection.trivial(ch), {("y", 1): ch.parse("x1")})
    assert run_integrability_algorithm(r, sec).integrability.status == "not-integrable"


def test_integrability_needs_final_set():
    ch = Chart.plain(["t"], ["q"])
    r = run_constraint_algorithm(PremultisymplecticSystem(DiffForm.basis(ch, "q", "t")))
    with pytest.raises(ValueError):
        run_integrability_algorithm(r)


_POLYS = ["0", "y", "x1", "x2*y", "y^2", "x1*x2", "1", "x1 + y", "u*y", "u"]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(_POLYS), min_size=4, max_size=4))
def test_bracket_matches_sympy_lie_bracket(srcs):
    ch = Chart.plain(["x1", "x2"], ["y", "u"])
    comps = dict(zip([("y", 0), ("y", 1), ("u", 0), ("u", 1)], map(ch.parse, srcs)))
    sec = CandidateSection(EhresmannConnection.trivial(ch), comps)
    zeta = bracket_components(sec)
    # independent Lie bracket of the two frame vectors in sympy
    xs = sympy.symbols("x1 x2 y u")
    def field(mu):
        v = [sympy.Integer(0)] * 4
        v[mu] = sympy.Integer(1)
        for k, a in ((2, "y"), (3, "u")):
            v[k] = sympy.sympify(str(sec.total(a, mu)).replace("^", "**"))
        return v
    X, Y = field(0), field(1)
    br = [sympy.expand(sum(X[j] * sympy.diff(Y[i], xs[j]) - Y[j] * sympy.diff(X[i], xs[j]) for j in range(4)))
          for i in range(4)]
    assert br[0] == 0 and br[1] == 0
    for k, a in ((2, "y"), (3, "u")):
        assert sympy.expand(sympy.sympify(str(zeta[(a, 0, 1)]).replace("^", "**")) - br[k]) == 0
    # involutive exactly when every component vanishes
    r = run_integrability_algorithm(run_constraint_algorithm(_free(ch)), sec)
    assert (r.integrability.status == "flat") == all(b == 0 for b in br)
