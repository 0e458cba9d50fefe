import random
from fractions import Fraction

import pytest

from premultisym.constraints import PremultisymplecticSystem
from premultisym.fieldtheory import build_lagrangian_system
from premultisym.geometry import DiffForm
from premultisym.symexpr import Chart

AFFINE_L = "x2*(y1*v1_2 + y2*v2_2) + y1*y2"


@pytest.fixture
def e_chart():
    return Chart.plain(["x1", "x2"], ["y1", "y2"])


@pytest.fixture
def jet_chart():
    return Chart.first_jet(["x1", "x2"], ["y1", "y2"])


@pytest.fixture
def harmonic_chart():
    return Chart.first_jet(["x1", "x2"], ["y1"])


def affine_alpha(chart):
    """y1*y2 dx1^dx2 - x2*y1 dy1^dx1 - x2*y2 dy2^dx1 (written out by hand)."""
    P = chart.parse
    return (
        DiffForm.basis(chart, "x1", "x2", coeff=P("y1*y2"))
        + DiffForm.basis(chart, "y1", "x1", coeff=P("-x2*y1"))
        + DiffForm.basis(chart, "y2", "x1", coeff=P("-x2*y2"))
    )


@pytest.fixture
def affine_system(e_chart):
    return PremultisymplecticSystem(-affine_alpha(e_chart).d())


@pytest.fixture
def harmonic(harmonic_chart):
    return build_lagrangian_system(harmonic_chart, harmonic_chart.parse("(v1_1^2 + v1_2^2)/2"))


@pytest.fixture
def rng():
    return random.Random(12345)


def rational_point(names, rng, lo=-20, hi=20):
    return {n: Fraction(rng.randint(lo, hi), rng.randint(1, 7)) for n in names}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; echoed again in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
