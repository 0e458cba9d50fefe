"""Model files: a TOML document with ``[model]``, ``[connection]``,
``[section]``, ``[options]`` and ``[expect]`` tables.

Example::

    [model]
    kind = "lagrangian"          # lagrangian | hamiltonian | premultisymplectic | affine
    base = ["x1", "x2"]
    fields = ["y1", "y2"]
    lagrangian = "x2*(y1*v1_2 + y2*v2_2) + y1*y2"

    [options]
    max_generations = 16
    seed = 0

Payload keys per kind: ``lagrangian``; ``hamiltonian``; ``omega`` (a table
from basis names such as ``"dy1^dx1^dx2"`` to coefficients); ``a`` and
``f`` (a table from base names to one coefficient per field).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

import tomli

from .constraints import PremultisymplecticSystem
from .fieldtheory import (
    AffineLagrangian,
    HamiltonianSystem,
    LagrangianSystem,
    build_hamiltonian_system,
    build_lagrangian_system,
)
from .geometry import DiffForm, EhresmannConnection, volume_form
from .symexpr import Chart, Expr, ParseError, parse_expr

__all__ = ["ModelError", "Model", "load_model", "parse_model"]

KINDS = ("lagrangian", "hamiltonian", "premultisymplectic", "affine")
_LOC = re.compile(r"\(at line (\d+), column (\d+)\)")


class ModelError(ValueError):
    """Invalid model file; ``line``/``column`` are set for syntax errors."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        super().__init__(message)


@dataclass(frozen=True)
class Model:
    kind: str
    chart: Chart
    system: PremultisymplecticSystem
    connection: EhresmannConnection
    lagrangian: LagrangianSystem | None = None
    hamiltonian: HamiltonianSystem | None = None
    affine: AffineLagrangian | None = None
    section: Mapping[tuple[str, int], Expr] | None = None
    options: Mapping[str, Any] = field(default_factory=dict)
    expect: Mapping[str, Any] = field(default_factory=dict)
    source: str = ""

    @property
    def max_generations(self) -> int:
        return int(self.options.get("max_generations", 16))

    @property
    def seed(self) -> int:
        return int(self.options.get("seed", 0))


def _names(table: Mapping, key: str) -> list[str]:
    v = table.get(key)
    if not isinstance(v, list) or not v or not all(isinstance(s, str) for s in v):
        raise ModelError(f"[model] {key} must be a non-empty list of names")
    return v


def _expr(src: Any, chart: Chart, where: str, functions=()) -> Expr:
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        src = str(Fraction(src).limit_denominator(10**12)) if isinstance(src, float) else str(src)
    if not isinstance(src, str):
        raise ModelError(f"{where}: expected an expression string")
    try:
        return parse_expr(src, chart, functions)
    except ParseError as exc:
        raise ModelError(f"{where}: {exc}") from None


def _per_base(table: Mapping, chart: Chart, where: str, functions) -> dict[tuple[str, int], Expr]:
    out = {}
    for name, vals in table.items():
        if name not in chart.fibre_names:
            raise ModelError(f"{where}: {name!r} is not a fibre coordinate")
        if not isinstance(vals, list) or len(vals) != chart.m:
            raise ModelError(f"{where}.{name}: need one expression per base coordinate ({chart.m})")
        for mu, s in enumerate(vals):
            e = _expr(s, chart, f"{where}.{name}[{mu + 1}]", functions)
            if not e.is_zero:
                out[(name, mu)] = e
    return out


def _omega(table: Any, chart: Chart, functions) -> DiffForm:
    if not isinstance(table, Mapping):
        raise ModelError("[model] omega must be a table of basis name -> coefficient")
    m = chart.m
    out = DiffForm.zero(chart, m + 1)
    for key, src in table.items():
        parts = [p.strip() for p in key.split("^")]
        if len(parts) != m + 1 or not all(p.startswith("d") and p[1:] in chart.coords for p in parts):
            raise ModelError(f"[model] omega key {key!r} is not an {m + 1}-fold wedge of chart differentials")
        c = _expr(src, chart, f"omega[{key}]", functions)
        out = out + DiffForm.basis(chart, *[p[1:] for p in parts], coeff=c)
    return out


def parse_model(text: str, source: str = "<string>") -> Model:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ModelError(f"{source}: {exc}", line, col) from None
    model = doc.get("model")
    if not isinstance(model, Mapping):
        raise ModelError("missing [model] table")
    kind = model.get("kind")
    if kind not in KINDS:
        raise ModelError(f"[model] kind must be one of {', '.join(KINDS)}")
    base = _names(model, "base")
    fields = _names(model, "fields")
    functions = tuple(model.get("functions", ()))
    lag = ham = aff = None
    try:
        if kind == "lagrangian":
            chart = Chart.first_jet(base, fields)
            if "lagrangian" not in model:
                raise ModelError("lagrangian models need [model] lagrangian")
            L = _expr(model["lagrangian"], chart, "lagrangian", functions)
            lag = build_lagrangian_system(chart, L, seed=int(doc.get("options", {}).get("seed", 0)))
            system = lag.system
        elif kind == "hamiltonian":
            chart = Chart.momentum(base, fields)
            if "hamiltonian" not in model:
                raise ModelError("hamiltonian models need [model] hamiltonian")
            ham = build_hamiltonian_system(chart, _expr(model["hamiltonian"], chart, "hamiltonian", functions))
            system = ham.system
        elif kind == "premultisymplectic":
            chart = Chart.plain(base, fields)
            if "omega" not in model:
                raise ModelError("premultisymplectic models need [model] omega")
            system = PremultisymplecticSystem(_omega(model["omega"], chart, functions), volume_form(chart))
        else:
            chart = Chart.plain(base, fields)
            if "a" not in model or "f" not in model:
                raise ModelError("affine models need [model] a and f")
            a = _expr(model["a"], chart, "a", functions)
            ftab = model["f"]
            if not isinstance(ftab, Mapping):
                raise ModelError("[model] f must map base names to coefficient lists")
            f = {}
            for bname, vals in ftab.items():
                if bname not in base:
                    raise ModelError(f"[model] f: {bname!r} is not a base coordinate")
                if not isinstance(vals, list) or len(vals) != len(fields):
                    raise ModelError(f"[model] f.{bname}: need one coefficient per field")
                mu = base.index(bname)
                for B, s in enumerate(vals):
                    e = _expr(s, chart, f"f.{bname}[{B + 1}]", functions)
                    if not e.is_zero:
                        f[(mu, B)] = e
            aff = AffineLagrangian(chart, a, f)
            system = aff.system
            lag = build_lagrangian_system(aff.jet_chart, aff.lagrangian())
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from None
    conn_tab = doc.get("connection", {})
    connection = EhresmannConnection(chart, _per_base(conn_tab, chart, "[connection]", functions))
    section = None
    if "section" in doc:
        section = _per_base(doc["section"], chart, "[section]", functions)
    options = dict(doc.get("options", {}))
    return Model(kind, chart, system, connection, lag, ham, aff, section, options, dict(doc.get("expect", {})), source)


def load_model(path: str | Path) -> Model:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read {p}: {exc.strerror}") from None
    return parse_model(text, str(p))
