"""Exact scalar expressions over a fibred coordinate chart.

An :class:`Expr` is a rational function with integer coefficients in the
chart coordinates, optionally involving opaque function atoms such as
``f(x1, y1)``.  Values are kept in a canonical form (expanded numerator and
denominator, gcd-reduced, positive leading denominator coefficient), so exact
zero testing is decidable on the atom-free fragment.

The polynomial arithmetic is delegated to sympy; this module owns the parser,
the printer, the chart model and the error surface.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

import sympy
from sympy import QQ, grlex
from sympy.core.function import AppliedUndef
from sympy.polys.rings import PolyElement, PolyRing

__all__ = [
    "Expr",
    "Chart",
    "ParseError",
    "UnknownSymbolError",
    "MissingSymbolError",
    "EvaluationError",
    "NonDecidableError",
    "parse_expr",
    "diff",
    "evaluate",
]

Number = Union[int, Fraction, float]


class ParseError(ValueError):
    """Malformed expression text; ``position`` is a 0-based column."""

    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at position {position}")


class UnknownSymbolError(ParseError):
    def __init__(self, name: str, position: int, source: str = ""):
        self.name = name
        super().__init__(f"unknown symbol {name!r}", position, source)


class MissingSymbolError(KeyError):
    pass


class EvaluationError(ZeroDivisionError):
    """Raised when an expression has a pole at the evaluation point."""


class NonDecidableError(ValueError):
    """An operation needs exact zero testing on an opaque-atom coefficient."""


def _atoms_of(e: sympy.Expr) -> frozenset:
    return frozenset(e.atoms(AppliedUndef, sympy.Derivative))


def _gen_key(g) -> tuple:
    return (0, g.name) if g.is_Symbol else (1, str(g))


_RINGS: dict[tuple, PolyRing] = {}
_PLACEHOLDER = sympy.Symbol("_none")


def _ring(gens: Iterable) -> PolyRing:
    key = tuple(sorted(set(gens) - {_PLACEHOLDER}, key=_gen_key))
    r = _RINGS.get(key)
    if r is None:
        r = _RINGS[key] = PolyRing(key or (_PLACEHOLDER,), QQ, grlex)
    return r


def _unify(a: PolyElement, b: PolyElement):
    if a.ring is b.ring:
        return a, b
    r = _ring(a.ring.symbols + b.ring.symbols)
    return a.set_ring(r), b.set_ring(r)


def _normalize(num: PolyElement, den: PolyElement):
    if den.is_ground:
        c = den.LC
        return (num.quo_ground(c) if c != 1 else num), den.ring.one
    if num.is_zero:
        return num, num.ring.one
    num, den = num.cancel(den)
    c = den.LC
    if c != 1:
        num, den = num.quo_ground(c), den.quo_ground(c)
    return num, den


class Expr:
    """Immutable exact scalar in canonical rational-function form.

    Stored as a gcd-reduced numerator/denominator pair of sparse rational
    polynomials with a monic denominator.  ``gens`` records a preferred
    symbol order for printing; it plays no role in equality.
    """

    __slots__ = ("_num", "_den", "_gens", "_hash", "_sym")

    def __init__(self, value: "sympy.Expr | Number | Expr" = 0, gens: Sequence[str] = ()):
        self._hash = None
        self._sym = None
        if isinstance(value, Expr):
            self._num, self._den = value._num, value._den
            self._gens = tuple(gens) or value._gens
            return
        if isinstance(value, float):
            raise TypeError("Expr is exact; use Fraction or int, not float")
        if isinstance(value, (int, Fraction)):
            r = _ring(())
            self._num, self._den = r(QQ(value.numerator, value.denominator)), r.one
        else:
            e = sympy.sympify(value)
            gens_ = list(e.free_symbols) + list(_atoms_of(e))
            e = sympy.together(e)
            n, d = sympy.fraction(e)
            r = _ring(gens_)
            self._num, self._den = _normalize(r.from_expr(n) if n != 0 else r.zero, r.from_expr(d))
        self._gens = tuple(gens)

    @classmethod
    def _make(cls, num: PolyElement, den: PolyElement, gens: tuple, normalize: bool = True) -> "Expr":
        self = object.__new__(cls)
        if normalize:
            num, den = _normalize(num, den)
        self._num, self._den, self._gens = num, den, gens
        self._hash = None
        self._sym = None
        return self

    # constructors ---------------------------------------------------------
    @classmethod
    def symbol(cls, name: str) -> "Expr":
        r = _ring((sympy.Symbol(name),))
        return cls._make(r.gens[0], r.one, (name,), False)

    @classmethod
    def const(cls, value: int | Fraction) -> "Expr":
        return cls(value)

    @classmethod
    def function(cls, name: str, args: Sequence["Expr | str"]) -> "Expr":
        """Opaque function atom ``name(args...)`` of coordinate symbols."""
        syms = []
        for a in args:
            e = Expr.symbol(a) if isinstance(a, str) else a
            if not e.sym.is_Symbol:
                raise TypeError("opaque function arguments must be coordinate symbols")
            syms.append(e.sym)
        return cls(sympy.Function(name)(*syms), tuple(s.name for s in syms))

    # plumbing -------------------------------------------------------------
    @property
    def sym(self) -> sympy.Expr:
        """The value as a sympy expression."""
        if self._sym is None:
            self._sym = self._num.as_expr() / self._den.as_expr()
        return self._sym

    @property
    def gens(self) -> tuple[str, ...]:
        return self._gens

    @staticmethod
    def _coerce(other) -> "Expr":
        if isinstance(other, Expr):
            return other
        if isinstance(other, (int, Fraction)):
            return Expr(other)
        if isinstance(other, sympy.Basic):
            return Expr(other)
        return NotImplemented

    def _pgens(self, other: "Expr") -> tuple:
        return self._gens if self._gens == other._gens else _merge_gens(self._gens, other._gens)

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        a, b = _unify(self._num, other._num)
        da, db = _unify(self._den, other._den)
        if da.ring is not a.ring:
            a, da = _unify(a, da)
            b, db = _unify(b, db)
        g = self._pgens(other)
        if da == db:
            if da.is_one:
                return Expr._make(a + b, da, g, False)
            return Expr._make(a + b, da, g)
        return Expr._make(a * db + b * da, da * db, g)

    __radd__ = __add__

    def __neg__(self):
        return Expr._make(-self._num, self._den, self._gens, False)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        a, b = _unify(self._num, other._num)
        da, db = _unify(self._den, other._den)
        if da.ring is not a.ring:
            a, da = _unify(a, da)
            b, db = _unify(b, db)
        g = self._pgens(other)
        if da.is_one and db.is_one:
            return Expr._make(a * b, da, g, False)
        return Expr._make(a * b, da * db, g)

    __rmul__ = __mul__

    def inverse(self) -> "Expr":
        if self._num.is_zero:
            raise ZeroDivisionError("division by the zero expression")
        return Expr._make(self._den, self._num, self._gens)

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self * other.inverse()

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other * self.inverse()

    def __pow__(self, k: int):
        if not isinstance(k, int):
            raise TypeError("only integer powers are supported")
        if k == 0:
            return Expr(1, self._gens)
        if k < 0:
            return self.inverse() ** (-k)
        return Expr._make(self._num**k, self._den**k, self._gens, False)

    def __pos__(self):
        return self

    def __eq__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        a, b = _unify(self._num, other._num)
        if a != b:
            return False
        da, db = _unify(self._den, other._den)
        return da == db

    def _key(self):
        used = set()
        for p in (self._num, self._den):
            for mono in p.itermonoms():
                used.update(i for i, k in enumerate(mono) if k)
        idx = sorted(used)
        gens = tuple(str(self._num.ring.symbols[i]) for i in idx)

        def proj(p):
            return tuple(sorted((tuple(m[i] for i in idx), c) for m, c in p.iterterms()))

        return gens, proj(self._num), proj(self._den)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._key())
        return self._hash

    def __bool__(self):
        return not self.is_zero

    # queries --------------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self._num.is_zero

    @property
    def is_constant(self) -> bool:
        return self._num.is_ground and self._den.is_ground

    @property
    def is_polynomial(self) -> bool:
        return self._den.is_one

    @property
    def atoms(self) -> frozenset:
        """Opaque function atoms (and their derivatives) occurring in self."""
        return frozenset(g for g in self._used_gens() if not g.is_Symbol)

    def _used_gens(self):
        gens = self._num.ring.symbols
        used = set()
        for p in (self._num, self._den):
            for mono in p.itermonoms():
                used.update(i for i, k in enumerate(mono) if k)
        return [gens[i] for i in sorted(used)]

    @property
    def is_decidable(self) -> bool:
        return not self.atoms

    @property
    def free_symbols(self) -> frozenset[str]:
        out = set()
        for g in self._used_gens():
            out.update(s.name for s in g.free_symbols)
        return frozenset(out)

    @property
    def numerator(self) -> "Expr":
        return Expr._make(self._num, self._num.ring.one, self._gens, False)

    @property
    def denominator(self) -> "Expr":
        return Expr._make(self._den, self._den.ring.one, self._gens, False)

    def as_fraction(self) -> Fraction:
        if not self.is_constant:
            raise ValueError(f"{self} is not a rational constant")
        v = QQ.to_sympy(self._num.LC if not self._num.is_zero else QQ(0)) / QQ.to_sympy(self._den.LC)
        return Fraction(int(v.p), int(v.q))

    def require_decidable(self, what: str = "coefficient") -> "Expr":
        if self.atoms:
            raise NonDecidableError(f"non-decidable {what}: {self} contains opaque atoms")
        return self

    def with_gens(self, gens: Sequence[str]) -> "Expr":
        return Expr._make(self._num, self._den, tuple(gens), False)

    def poly_parts(self) -> tuple[PolyElement, PolyElement]:
        """The canonical (numerator, denominator) ring elements."""
        return self._num, self._den

    # calculus -------------------------------------------------------------
    def diff(self, name: str) -> "Expr":
        s = sympy.Symbol(name)
        if self.atoms:
            return Expr(sympy.diff(self.sym, s), self._gens)
        ring = self._num.ring
        if s not in ring.symbols:
            return Expr(0, self._gens)
        x = ring.gens[ring.symbols.index(s)]
        n, d = self._num, self._den
        dn = n.diff(x)
        if d.is_one:
            return Expr._make(dn, d, self._gens, False)
        return Expr._make(dn * d - n * d.diff(x), d * d, self._gens)

    def subs(self, mapping: Mapping[str, "Expr | int | Fraction"]) -> "Expr":
        """Substitute expressions for coordinate symbols."""
        if not mapping:
            return self
        if self.atoms:
            rep = {sympy.Symbol(k): self._coerce(v).sym for k, v in mapping.items()}
            return Expr(self.sym.subs(rep), self._gens)
        vals = {k: self._coerce(v) for k, v in mapping.items()}
        gens = self._gens
        for v in vals.values():
            gens = _merge_gens(gens, v._gens)
        return _compose(self._num, vals, gens) / _compose(self._den, vals, gens)

    def degree_in(self, name: str) -> int:
        """Degree of the numerator in ``name``; -1 if name occurs in the denominator."""
        s = sympy.Symbol(name)
        ring = self._num.ring
        if s not in ring.symbols:
            return 0
        i = ring.symbols.index(s)
        if self._den.degree(ring.gens[i]) > 0:
            return -1
        return max(self._num.degree(ring.gens[i]), 0)

    def evaluate(self, point: Mapping[str, Number], functions: Mapping[str, Callable] | None = None):
        return evaluate(self, point, functions)

    def to_callable(self, names: Sequence[str]) -> Callable:
        """Vectorised numpy evaluator taking arrays in ``names`` order."""
        self.require_decidable("numeric compilation")
        return sympy.lambdify([sympy.Symbol(n) for n in names], self.sym, modules="numpy")

    # printing -------------------------------------------------------------
    def __str__(self):
        return to_text(self)

    def __repr__(self):
        return f"Expr('{to_text(self)}')"


def _compose(p: PolyElement, vals: Mapping[str, Expr], gens: tuple) -> Expr:
    ring = p.ring
    gexpr = []
    for g in ring.symbols:
        name = g.name
        gexpr.append(vals[name] if name in vals else Expr.symbol(name))
    total = Expr(0, gens)
    powers: dict[tuple[int, int], Expr] = {}
    for mono, c in p.iterterms():
        term = Expr(Fraction(int(c.numerator), int(c.denominator)), gens)
        for i, k in enumerate(mono):
            if k:
                key = (i, k)
                if key not in powers:
                    powers[key] = gexpr[i] ** k
                term = term * powers[key]
        total = total + term
    return total.with_gens(gens)


def _merge_gens(a: Sequence[str], b: Sequence[str]) -> tuple[str, ...]:
    if not b:
        return tuple(a)
    if not a:
        return tuple(b)
    seen = dict.fromkeys(a)
    for n in b:
        seen.setdefault(n, None)
    return tuple(seen)


# ---------------------------------------------------------------------------
# printing


def _sorted_gens(e: Expr, preferred: Sequence[str]) -> list:
    used = e._used_gens()
    syms = {g.name: g for g in used if g.is_Symbol}
    order = [syms[n] for n in preferred if n in syms]
    order += [syms[n] for n in sorted(syms) if syms[n] not in order]
    return order + sorted((g for g in used if not g.is_Symbol), key=str)


def _atom_text(a) -> str:
    if isinstance(a, sympy.Derivative):
        inner = a.expr
        wrt = "".join(f"_{v.name}" * c for v, c in a.variable_count)
        args = ",".join(str(x) for x in inner.args)
        return f"{inner.func.__name__}{wrt}({args})"
    if isinstance(a, AppliedUndef):
        return f"{a.func.__name__}({','.join(str(x) for x in a.args)})"
    return str(a)


def _poly_text(p: sympy.Expr, gens: list) -> tuple[str, int]:
    """Render a polynomial in grlex order; returns (text, number of terms)."""
    if p.is_Number:
        return _number_text(p), 1
    poly = sympy.Poly(p, *gens)
    parts = []
    for mono, coeff in poly.terms(order="grlex"):
        factors = []
        for g, k in zip(gens, mono):
            if k == 0:
                continue
            name = g.name if g.is_Symbol else _atom_text(g)
            factors.append(name if k == 1 else f"{name}^{k}")
        c = sympy.Rational(coeff)
        neg = c < 0
        c = abs(c)
        if not factors:
            body = _number_text(c)
        elif c == 1:
            body = "*".join(factors)
        else:
            body = _number_text(c) + "*" + "*".join(factors)
        parts.append((neg, body))
    out = ("-" if parts[0][0] else "") + parts[0][1]
    for neg, body in parts[1:]:
        out += (" - " if neg else " + ") + body
    return out, len(parts)


def _number_text(c) -> str:
    c = sympy.Rational(c)
    if c.q == 1:
        return str(c.p)
    return f"{c.p}/{c.q}"


def to_text(e: Expr) -> str:
    """Deterministic text form, parseable by :func:`parse_expr`.

    Monomials are listed in graded lexicographic order with respect to the
    expression's generator order (chart order when built from a chart).
    Denominator coefficients are cleared to integers for display.
    """
    num, den = e.poly_parts()
    gens = _sorted_gens(e, e.gens)
    if den.is_one:
        return _poly_text(num.as_expr(), gens)[0]
    scale = 1
    for c in num.coeffs() + den.coeffs():
        scale = sympy.ilcm(scale, int(c.denominator))
    common = math.gcd(*[int(c * scale) for c in num.coeffs() + den.coeffs()])
    scale = sympy.Rational(scale, common)
    ntext, nterms = _poly_text(sympy.expand(num.as_expr() * scale), gens)
    dtext, dterms = _poly_text(sympy.expand(den.as_expr() * scale), gens)
    if nterms > 1:
        ntext = f"({ntext})"
    if dterms > 1 or "*" in dtext or "/" in dtext or "^" in dtext:
        dtext = f"({dtext})"
    return f"{ntext}/{dtext}"


# ---------------------------------------------------------------------------
# chart


@dataclass(frozen=True)
class Chart:
    """A fibred coordinate chart ``(x^mu; u^a)``.

    ``kind`` is ``"plain"``, ``"first-jet"`` (fibre = fields ``y^A`` followed
    by velocities ``v<A>_<mu>``) or ``"momentum"`` (fields followed by
    ``p<A>_<mu>``).  For the two structured kinds ``fields`` lists the ``y^A``.
    """

    base_names: tuple[str, ...]
    fibre_names: tuple[str, ...]
    kind: str = "plain"
    fields: tuple[str, ...] = ()

    def __post_init__(self):
        names = self.base_names + self.fibre_names
        if len(self.base_names) < 1:
            raise ValueError("a chart needs at least one base coordinate")
        if len(self.fibre_names) < 1:
            raise ValueError("a chart needs at least one fibre coordinate")
        if len(set(names)) != len(names):
            raise ValueError(f"chart coordinate names are not distinct: {names}")
        if len(names) > 63:
            raise ValueError("charts are limited to 63 coordinates")
        for n in names:
            if not _IDENT.fullmatch(n):
                raise ValueError(f"invalid coordinate name {n!r}")
        if self.kind not in ("plain", "first-jet", "momentum"):
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if self.kind != "plain":
            prefix = "v" if self.kind == "first-jet" else "p"
            expect = tuple(self.fields) + tuple(
                f"{prefix}{A}_{mu}" for A in range(1, len(self.fields) + 1) for mu in range(1, self.m + 1)
            )
            if self.fibre_names != expect:
                raise ValueError(f"{self.kind} chart fibre block must be {expect}")

    @classmethod
    def plain(cls, base: Sequence[str], fibre: Sequence[str]) -> "Chart":
        return cls(tuple(base), tuple(fibre), "plain")

    @classmethod
    def first_jet(cls, base: Sequence[str], fields: Sequence[str]) -> "Chart":
        m = len(base)
        vel = [f"v{A}_{mu}" for A in range(1, len(fields) + 1) for mu in range(1, m + 1)]
        return cls(tuple(base), tuple(fields) + tuple(vel), "first-jet", tuple(fields))

    @classmethod
    def momentum(cls, base: Sequence[str], fields: Sequence[str]) -> "Chart":
        m = len(base)
        mom = [f"p{A}_{mu}" for A in range(1, len(fields) + 1) for mu in range(1, m + 1)]
        return cls(tuple(base), tuple(fields) + tuple(mom), "momentum", tuple(fields))

    @property
    def m(self) -> int:
        return len(self.base_names)

    @property
    def n(self) -> int:
        """Number of fields (structured kinds) or fibre coordinates (plain)."""
        return len(self.fields) if self.kind != "plain" else len(self.fibre_names)

    @property
    def coords(self) -> tuple[str, ...]:
        return self.base_names + self.fibre_names

    @property
    def dim(self) -> int:
        return len(self.coords)

    def index(self, name: str) -> int:
        try:
            return self.coords.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not a coordinate of this chart") from None

    def __contains__(self, name: str) -> bool:
        return name in self.coords

    def symbol(self, name: str) -> Expr:
        if name not in self.coords:
            raise KeyError(f"{name!r} is not a coordinate of this chart")
        return Expr.symbol(name).with_gens(self.coords)

    def expr(self, value) -> Expr:
        """Coerce a number or Expr into an Expr carrying this chart's order."""
        return Expr(value).with_gens(self.coords)

    def velocity(self, A: int, mu: int) -> str:
        """Name of ``v^A_mu`` (1-based indices)."""
        if self.kind != "first-jet":
            raise ValueError("velocities exist only on first-jet charts")
        return f"v{A}_{mu}"

    def momentum_name(self, A: int, mu: int) -> str:
        if self.kind != "momentum":
            raise ValueError("momenta exist only on momentum charts")
        return f"p{A}_{mu}"

    def parse(self, source: str, functions: Iterable[str] = ()) -> Expr:
        return parse_expr(source, self, functions)


# ---------------------------------------------------------------------------
# parser

_IDENT = re.compile(r"[a-zA-Z][a-zA-Z0-9_]*")
_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<id>[a-zA-Z][a-zA-Z0-9_]*)|(?P<op>[-+*/^(),]))")


def _tokenize(src: str):
    pos = 0
    toks = []
    while True:
        while pos < len(src) and src[pos].isspace():
            pos += 1
        if pos >= len(src):
            break
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {src[pos]!r}", pos, src)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("eof", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str, chart: Chart | None, functions: Iterable[str]):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.chart = chart
        self.functions = set(functions)

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, op):
        t = self.take()
        if t[1] != op or t[0] != "op":
            raise ParseError(f"expected {op!r}, found {t[1] or 'end of input'!r}", t[2], self.src)
        return t

    def parse(self) -> Expr:
        e = self.expr()
        t = self.peek()
        if t[0] != "eof":
            raise ParseError(f"unexpected token {t[1]!r}", t[2], self.src)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op, _, pos = self.take()[1], None, self.toks[self.i - 1][2]
            rhs = self.unary()
            if op == "*":
                e = e * rhs
            else:
                if rhs.is_zero:
                    raise ParseError("division by zero", pos, self.src)
                e = e / rhs
        return e

    def unary(self):
        t = self.peek()
        if t[0] == "op" and t[1] in "+-":
            self.take()
            e = self.unary()
            return -e if t[1] == "-" else e
        return self.factor()

    def factor(self):
        base = self.base()
        t = self.peek()
        if t[0] == "op" and t[1] == "^":
            self.take()
            sign = 1
            t = self.peek()
            if t[0] == "op" and t[1] == "-":
                self.take()
                sign = -1
            t = self.take()
            if t[0] != "num" or "." in t[1]:
                raise ParseError("exponent must be an integer", t[2], self.src)
            k = sign * int(t[1])
            if k < 0 and base.is_zero:
                raise ParseError("negative power of zero", t[2], self.src)
            return base**k
        return base

    def base(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Expr(Fraction(text))
        if kind == "id":
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(" and text in self.functions:
                self.take()
                args = [self.argument()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.argument())
                self.expect(")")
                return Expr.function(text, args)
            if self.chart is not None and text not in self.chart.coords:
                raise UnknownSymbolError(text, pos, self.src)
            return Expr.symbol(text)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {text or 'end of input'!r}", pos, self.src)

    def argument(self):
        kind, text, pos = self.take()
        if kind != "id":
            raise ParseError("function arguments must be coordinate names", pos, self.src)
        if self.chart is not None and text not in self.chart.coords:
            raise UnknownSymbolError(text, pos, self.src)
        return text


def parse_expr(source: str, chart: Chart | None, functions: Iterable[str] = ()) -> Expr:
    """Parse ``source`` into a canonical :class:`Expr`.

    Grammar::

        expr   := term (('+'|'-') term)*
        term   := unary (('*'|'/') unary)*
        unary  := ('+'|'-') unary | factor
        factor := base ('^' int)?
        base   := number | ident | '(' expr ')'

    Identifiers must be coordinates of ``chart``.  Names listed in
    ``functions`` may additionally be applied to coordinates, ``f(x1, y1)``,
    producing opaque atoms.  Passing ``chart=None`` accepts any identifier.
    """
    e = _Parser(source, chart, functions).parse()
    return e.with_gens(chart.coords) if chart is not None else e


def diff(e: Expr, name: str, chart: Chart | None = None) -> Expr:
    """Exact partial derivative of ``e`` with respect to coordinate ``name``."""
    if chart is not None and name not in chart.coords:
        raise KeyError(f"{name!r} is not a coordinate of this chart")
    return e.diff(name)


def _derivative_value(a: sympy.Derivative, point, functions, h=1e-5):
    f = a.expr
    fn = functions[f.func.__name__]
    args = [float(point[s.name]) for s in f.args]
    vars_ = [v for v, c in a.variable_count for _ in range(c)]

    def partial(args, vs):
        if not vs:
            return fn(*args)
        v, rest = vs[0], vs[1:]
        i = [s.name for s in f.args].index(v.name)
        up = list(args)
        dn = list(args)
        up[i] += h
        dn[i] -= h
        return (partial(up, rest) - partial(dn, rest)) / (2 * h)

    return partial(args, vars_)


def evaluate(e: Expr, point: Mapping[str, Number], functions: Mapping[str, Callable] | None = None):
    """Evaluate ``e`` at ``point``.

    Exact (``Fraction``) when every value is rational and no opaque atoms
    occur; a float otherwise.  Opaque atoms need a callable in ``functions``;
    their derivatives are taken by central differences of that callable.
    """
    missing = sorted(e.free_symbols - set(point))
    if missing:
        raise MissingSymbolError(f"no value for {', '.join(missing)}")
    exact = not e.atoms and all(isinstance(point[n], (int, Fraction)) for n in e.free_symbols)
    num, den = e.poly_parts()
    values = []
    for g in num.ring.symbols:
        if g.is_Symbol:
            v = point.get(g.name, 0)
            values.append(Fraction(v) if exact else float(v))
        else:
            values.append(None if exact else _atom_value(g, point, functions or {}))
    d = _poly_value(den, values, exact)
    if d == 0:
        raise EvaluationError(f"{e} has a pole at {dict(point)}")
    return _poly_value(num, values, exact) / d


def _atom_value(a, point, functions) -> float:
    name = a.expr.func.__name__ if isinstance(a, sympy.Derivative) else a.func.__name__
    if name not in functions:
        raise MissingSymbolError(f"no callable for opaque function {name!r}")
    if isinstance(a, sympy.Derivative):
        return float(_derivative_value(a, point, functions))
    return float(functions[name](*[float(point[s.name]) for s in a.args]))


def _poly_value(p: PolyElement, values: list, exact: bool):
    total = Fraction(0) if exact else 0.0
    for mono, c in p.iterterms():
        t = Fraction(int(c.numerator), int(c.denominator))
        if not exact:
            t = float(t)
        for v, k in zip(values, mono):
            if k:
                t *= v**k
        total += t
    return total
