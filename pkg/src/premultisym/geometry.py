"""Exterior calculus on a single fibred chart.

Forms and multivectors are sparse maps from bitmask multi-indices to
:class:`~premultisym.symexpr.Expr` coefficients.  Bit ``i`` of a mask is the
``i``-th chart coordinate, so a mask is always a strictly increasing index set.

Contraction convention: ``(i(X1^...^Xk) a)(V1, ...) = a(X1, ..., Xk, V1, ...)``,
i.e. multivector factors fill the *first* slots of the form.  Other
references differ from this by a factor ``(-1)^m`` for ``m``-vector
insertions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .symexpr import Chart, Expr

__all__ = [
    "DiffForm",
    "MultiVector",
    "EhresmannConnection",
    "CandidateSection",
    "Splitting",
    "AssumptionViolation",
    "TransversalityError",
    "wedge",
    "exterior_derivative",
    "contract",
    "split_omega",
    "section_to_mvf",
    "mvf_to_section",
    "volume_form",
    "vertical_triple_violation",
    "pullback",
]


class AssumptionViolation(ValueError):
    """Omega has a component with three or more vertical slots."""

    def __init__(self, triple: tuple[str, str, str], value: Expr):
        self.triple = triple
        self.value = value
        super().__init__(f"i({triple[0]})i({triple[1]})i({triple[2]})Omega = {value} is not zero")


class TransversalityError(ValueError):
    pass


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def _merge_sign(a: int, b: int) -> int:
    """Sign of the permutation sorting the concatenation (a, b) of two index sets."""
    swaps = 0
    for j in _bits(b):
        swaps += bin(a >> (j + 1)).count("1")
    return -1 if swaps & 1 else 1


def _below(mask: int, i: int) -> int:
    return bin(mask & ((1 << i) - 1)).count("1")


class _Sparse:
    """Shared storage for forms and multivectors."""

    __slots__ = ("chart", "degree", "_terms")

    def __init__(self, chart: Chart, degree: int, terms: Mapping[int, Expr] | Iterable[tuple[int, Expr]] = ()):
        if degree < 0 or degree > chart.dim:
            raise ValueError(f"degree {degree} out of range for a {chart.dim}-dimensional chart")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[int, Expr] = {}
        for mask, c in items:
            if bin(mask).count("1") != degree:
                raise ValueError(f"multi-index {mask:b} does not have degree {degree}")
            if mask >> chart.dim:
                raise ValueError("multi-index outside the chart")
            c = c if isinstance(c, Expr) else Expr(c)
            acc[mask] = acc[mask] + c if mask in acc else c
        self.chart = chart
        self.degree = degree
        self._terms = {k: v.with_gens(chart.coords) for k, v in sorted(acc.items()) if not v.is_zero}

    @property
    def terms(self) -> dict[int, Expr]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def mask(self, names: Sequence[str]) -> tuple[int, int]:
        """(mask, sign) for an ordered list of coordinate names."""
        idx = [self.chart.index(n) for n in names]
        if len(set(idx)) != len(idx):
            return 0, 0
        sign = 1
        for i in range(len(idx)):
            for j in range(i + 1, len(idx)):
                if idx[i] > idx[j]:
                    sign = -sign
        mask = 0
        for i in idx:
            mask |= 1 << i
        return mask, sign

    def coefficient(self, *names: str) -> Expr:
        """Coefficient on the basis element for ``names`` in the given order."""
        if len(names) != self.degree:
            raise ValueError("wrong number of indices")
        mask, sign = self.mask(names)
        if sign == 0:
            return Expr(0, self.chart.coords)
        return self._terms.get(mask, Expr(0, self.chart.coords)) * sign

    def names(self, mask: int) -> tuple[str, ...]:
        return tuple(self.chart.coords[i] for i in _bits(mask))

    def _same(self, other):
        if type(other) is not type(self) or other.chart != self.chart or other.degree != self.degree:
            raise ValueError("operands live in different spaces")

    def __add__(self, other):
        self._same(other)
        acc = dict(self._terms)
        for k, v in other._terms.items():
            acc[k] = acc[k] + v if k in acc else v
        return type(self)(self.chart, self.degree, acc)

    def __neg__(self):
        return type(self)(self.chart, self.degree, {k: -v for k, v in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def scale(self, f: Expr | int) -> "_Sparse":
        f = f if isinstance(f, Expr) else Expr(f)
        return type(self)(self.chart, self.degree, {k: v * f for k, v in self._terms.items()})

    def __mul__(self, f):
        if isinstance(f, (Expr, int)):
            return self.scale(f)
        return NotImplemented

    __rmul__ = __mul__

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.chart == other.chart and self.degree == other.degree and self._terms == other._terms

    def __hash__(self):
        return hash((type(self).__name__, self.degree, tuple(self._terms.items())))

    def map_coefficients(self, fn) -> "_Sparse":
        return type(self)(self.chart, self.degree, {k: fn(v) for k, v in self._terms.items()})

    def _fmt(self, prefix: str, joiner: str) -> str:
        if not self._terms:
            return "0"
        parts = []
        for mask, c in self._terms.items():
            basis = joiner.join(f"{prefix}{n}" for n in self.names(mask)) or "1"
            parts.append(f"({c})*{basis}")
        return " + ".join(parts)


class DiffForm(_Sparse):
    """A differential ``degree``-form on ``chart``."""

    __slots__ = ()

    @classmethod
    def zero(cls, chart: Chart, degree: int) -> "DiffForm":
        return cls(chart, degree)

    @classmethod
    def scalar(cls, chart: Chart, f: Expr | int) -> "DiffForm":
        return cls(chart, 0, {0: f if isinstance(f, Expr) else Expr(f)})

    @classmethod
    def basis(cls, chart: Chart, *names: str, coeff: Expr | int = 1) -> "DiffForm":
        """``coeff * d(names[0]) ^ d(names[1]) ^ ...`` in the given order."""
        tmp = cls(chart, len(names))
        mask, sign = tmp.mask(names)
        if sign == 0:
            return tmp
        c = coeff if isinstance(coeff, Expr) else Expr(coeff)
        return cls(chart, len(names), {mask: c * sign})

    @classmethod
    def differential(cls, chart: Chart, f: Expr) -> "DiffForm":
        """The exact 1-form ``df``."""
        return cls(chart, 1, {1 << i: f.diff(n) for i, n in enumerate(chart.coords)})

    def wedge(self, other: "DiffForm") -> "DiffForm":
        return wedge(self, other)

    def d(self) -> "DiffForm":
        return exterior_derivative(self)

    def contract(self, X: "MultiVector") -> "DiffForm":
        return contract(X, self)

    def __call__(self, *vectors: "MultiVector") -> Expr:
        """Evaluate on ``degree`` vector fields."""
        if len(vectors) != self.degree:
            raise ValueError("wrong number of arguments")
        out = self
        for v in vectors:
            out = contract(v, out)
        return out.function

    @property
    def function(self) -> Expr:
        if self.degree != 0:
            raise ValueError("not a 0-form")
        return self._terms.get(0, Expr(0, self.chart.coords))

    def __str__(self):
        return self._fmt("d", "^")

    __repr__ = __str__


class MultiVector(_Sparse):
    """A ``degree``-vector field; may carry a decomposable witness.

    ``factors`` (when set) is an ordered list of vector fields whose wedge
    equals this multivector.
    """

    __slots__ = ("factors",)

    def __init__(self, chart, degree, terms=(), factors: Sequence["MultiVector"] | None = None):
        super().__init__(chart, degree, terms)
        self.factors = tuple(factors) if factors is not None else None

    @classmethod
    def vector(cls, chart: Chart, components: Mapping[str, Expr | int]) -> "MultiVector":
        terms = {}
        for name, c in components.items():
            terms[1 << chart.index(name)] = c if isinstance(c, Expr) else Expr(c)
        return cls(chart, 1, terms)

    @classmethod
    def basis(cls, chart: Chart, *names: str) -> "MultiVector":
        tmp = cls(chart, len(names))
        mask, sign = tmp.mask(names)
        if sign == 0:
            return tmp
        return cls(chart, len(names), {mask: Expr(sign)})

    @classmethod
    def wedge_of(cls, vectors: Sequence["MultiVector"]) -> "MultiVector":
        """Wedge of vector fields, recording them as the decomposable witness."""
        if not vectors:
            raise ValueError("need at least one vector")
        chart = vectors[0].chart
        acc: dict[int, Expr] = {0: Expr(1)}
        for v in vectors:
            if v.degree != 1:
                raise ValueError("witness factors must be vector fields")
            nxt: dict[int, Expr] = {}
            for ma, ca in acc.items():
                for mb, cb in v._terms.items():
                    if ma & mb:
                        continue
                    c = ca * cb
                    if _merge_sign(ma, mb) < 0:
                        c = -c
                    key = ma | mb
                    nxt[key] = nxt[key] + c if key in nxt else c
            acc = nxt
        return cls(chart, len(vectors), acc, factors=vectors)

    def component(self, name: str) -> Expr:
        if self.degree != 1:
            raise ValueError("not a vector field")
        return self.coefficient(name)

    def apply(self, f: Expr) -> Expr:
        """Directional derivative ``X(f)`` of a function along a vector field."""
        if self.degree != 1:
            raise ValueError("not a vector field")
        out = Expr(0, self.chart.coords)
        for mask, c in self._terms.items():
            out = out + c * f.diff(self.chart.coords[mask.bit_length() - 1])
        return out

    def witness_consistent(self) -> bool:
        if self.factors is None:
            return True
        return MultiVector.wedge_of(self.factors)._terms == self._terms

    def __str__(self):
        return self._fmt("d/d", "^")

    __repr__ = __str__


def volume_form(chart: Chart) -> DiffForm:
    """``dx^1 ^ ... ^ dx^m`` on the base coordinates."""
    return DiffForm.basis(chart, *chart.base_names)


def wedge(a: DiffForm, b: DiffForm) -> DiffForm:
    """Exterior product; sign from the parity of the multi-index merge."""
    if a.chart != b.chart:
        raise ValueError("forms on different charts")
    deg = a.degree + b.degree
    if deg > a.chart.dim:
        raise ValueError(f"wedge of degree {deg} exceeds chart dimension {a.chart.dim}")
    acc: dict[int, Expr] = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            if ma & mb:
                continue
            c = ca * cb
            if _merge_sign(ma, mb) < 0:
                c = -c
            key = ma | mb
            acc[key] = acc[key] + c if key in acc else c
    return DiffForm(a.chart, deg, acc)


def exterior_derivative(a: DiffForm) -> DiffForm:
    chart = a.chart
    if a.degree >= chart.dim:
        return DiffForm(chart, a.degree + 1) if a.degree + 1 <= chart.dim else DiffForm.zero(chart, a.degree)
    acc: dict[int, Expr] = {}
    for mask, c in a.items():
        for j, name in enumerate(chart.coords):
            if mask >> j & 1:
                continue
            dc = c.diff(name)
            if dc.is_zero:
                continue
            if _below(mask, j) & 1:
                dc = -dc
            key = mask | (1 << j)
            acc[key] = acc[key] + dc if key in acc else dc
    return DiffForm(chart, a.degree + 1, acc)


def _contract_basis(imask: int, form_terms: Mapping[int, Expr]) -> dict[int, Expr]:
    """i(d/dx^{i1} ^ ... ^ d/dx^{ik}) applied to a sparse form, first slots first."""
    out = dict(form_terms)
    for i in _bits(imask):
        nxt = {}
        for mask, c in out.items():
            if not mask >> i & 1:
                continue
            nxt[mask & ~(1 << i)] = -c if _below(mask, i) & 1 else c
        out = nxt
        if not out:
            break
    return out


def contract(X: MultiVector, a: DiffForm) -> DiffForm:
    """Interior product ``i(X) a`` with X filling the first slots of ``a``."""
    if X.chart != a.chart:
        raise ValueError("operands on different charts")
    if X.degree > a.degree:
        raise ValueError(f"cannot contract a {X.degree}-vector into a {a.degree}-form")
    acc: dict[int, Expr] = {}
    for imask, xc in X.items():
        for mask, c in _contract_basis(imask, a._terms).items():
            v = xc * c
            acc[mask] = acc[mask] + v if mask in acc else v
    return DiffForm(a.chart, a.degree - X.degree, acc)


def pullback(form: DiffForm, source: Chart, substitution: Mapping[str, Expr]) -> DiffForm:
    """Pull ``form`` back along a map given in coordinates.

    ``substitution`` gives each target coordinate as a function on
    ``source``; target coordinates not listed must also be source coordinates
    and are mapped identically.
    """
    images: dict[str, Expr] = {}
    for n in form.chart.coords:
        if n in substitution:
            images[n] = substitution[n]
        elif n in source.coords:
            images[n] = source.symbol(n)
        else:
            raise KeyError(f"no image given for target coordinate {n!r}")
    dimg = {n: DiffForm.differential(source, e) for n, e in images.items()}
    total = DiffForm.zero(source, form.degree)
    for mask, c in form.items():
        term = DiffForm.scalar(source, c.subs(substitution))
        for n in form.names(mask):
            term = wedge(term, dimg[n])
        total = total + term
    return total


# ---------------------------------------------------------------------------
# connections and sections


@dataclass(frozen=True)
class EhresmannConnection:
    """Horizontal lift ``D_mu = d/dx^mu + G^a_mu d/du^a`` on a chart.

    ``coefficients`` maps ``(fibre name, mu)`` (mu 0-based) to ``G^a_mu``;
    missing entries are zero.
    """

    chart: Chart
    coefficients: Mapping[tuple[str, int], Expr] = field(default_factory=dict)

    def __post_init__(self):
        for (a, mu) in self.coefficients:
            if a not in self.chart.fibre_names or not 0 <= mu < self.chart.m:
                raise ValueError(f"bad connection index ({a}, {mu})")

    @classmethod
    def trivial(cls, chart: Chart) -> "EhresmannConnection":
        return cls(chart, {})

    def G(self, a: str, mu: int) -> Expr:
        return self.coefficients.get((a, mu), Expr(0, self.chart.coords))

    def horizontal(self, mu: int) -> MultiVector:
        comps = {self.chart.base_names[mu]: Expr(1)}
        for a in self.chart.fibre_names:
            g = self.G(a, mu)
            if not g.is_zero:
                comps[a] = g
        return MultiVector.vector(self.chart, comps)

    def frame(self) -> list[MultiVector]:
        return [self.horizontal(mu) for mu in range(self.chart.m)]

    def horizontal_mvf(self) -> MultiVector:
        """``Y = D_1 ^ ... ^ D_m``, the connection's horizontal m-vector field."""
        return MultiVector.wedge_of(self.frame())


@dataclass(frozen=True)
class CandidateSection:
    """A splitting ``h(d/dx^mu) = D_mu + Gamma^a_mu d/du^a`` relative to a connection."""

    connection: EhresmannConnection
    gamma: Mapping[tuple[str, int], Expr] = field(default_factory=dict)

    @property
    def chart(self) -> Chart:
        return self.connection.chart

    def Gamma(self, a: str, mu: int) -> Expr:
        return self.gamma.get((a, mu), Expr(0, self.chart.coords))

    def frame_vector(self, mu: int) -> MultiVector:
        chart = self.chart
        comps = {chart.base_names[mu]: Expr(1)}
        for a in chart.fibre_names:
            c = self.connection.G(a, mu) + self.Gamma(a, mu)
            if not c.is_zero:
                comps[a] = c
        return MultiVector.vector(chart, comps)

    def frame(self) -> list[MultiVector]:
        return [self.frame_vector(mu) for mu in range(self.chart.m)]

    def total(self, a: str, mu: int) -> Expr:
        """Full fibre component ``G^a_mu + Gamma^a_mu`` of ``h(d/dx^mu)``."""
        return self.connection.G(a, mu) + self.Gamma(a, mu)


@dataclass(frozen=True)
class Splitting:
    gamma: DiffForm
    omega_nabla: DiffForm
    assumption_ok: bool
    violation: tuple[str, str, str] | None = None


def vertical_triple_violation(Omega: DiffForm) -> tuple[tuple[str, str, str], Expr] | None:
    """First vertical triple (in chart order) with ``i(v1)i(v2)i(v3)Omega != 0``."""
    chart = Omega.chart
    fibre = chart.fibre_names
    if Omega.degree < 3:
        return None
    fmask = 0
    for n in fibre:
        fmask |= 1 << chart.index(n)
    if not any(bin(mask & fmask).count("1") >= 3 for mask, _ in Omega.items()):
        return None
    for a, b, c in itertools.combinations(fibre, 3):
        X = MultiVector.basis(chart, a, b, c)
        val = contract(X, Omega)
        if not val.is_zero:
            return (a, b, c), next(iter(val.terms.values()))
    return None


def split_omega(Omega: DiffForm, connection: EhresmannConnection, omega: DiffForm | None = None) -> Splitting:
    """Split ``Omega = Omega_nabla + omega ^ gamma`` with ``gamma = i(Y)Omega``."""
    chart = Omega.chart
    m = chart.m
    if Omega.degree != m + 1:
        raise ValueError(f"Omega must be an {m + 1}-form")
    omega = omega if omega is not None else volume_form(chart)
    Y = connection.horizontal_mvf()
    norm = contract(Y, omega).function
    if norm != 1:
        raise TransversalityError(f"i(Y)omega = {norm}, expected 1")
    gamma = contract(Y, Omega)
    omega_nabla = Omega - wedge(omega, gamma)
    bad = vertical_triple_violation(Omega)
    return Splitting(gamma, omega_nabla, bad is None, bad[0] if bad else None)


def section_to_mvf(h: CandidateSection) -> MultiVector:
    """``X = (D_1 + Gamma_1) ^ ... ^ (D_m + Gamma_m)`` with its witness."""
    return MultiVector.wedge_of(h.frame())


def mvf_to_section(X: MultiVector, connection: EhresmannConnection) -> CandidateSection:
    """Recover the normalized section spanning a decomposable transverse m-vector.

    Uses the Pluecker coordinates of ``X``: with ``c0 = i(X)omega`` and the
    fibre coordinates ordered after the base ones,
    ``G^a_mu + Gamma^a_mu = (-1)^(m-mu) X[base - mu + a] / c0``.
    """
    chart = X.chart
    m = chart.m
    if X.degree != m:
        raise ValueError(f"expected an {m}-vector field")
    if X.factors is not None and not X.witness_consistent():
        raise ValueError("decomposable witness does not reproduce the coefficients")
    c0 = X.coefficient(*chart.base_names)
    if c0.is_zero:
        raise TransversalityError("i(X)omega vanishes identically")
    gamma = {}
    for mu in range(m):
        sign = -1 if (m - 1 - mu) & 1 else 1
        rest = chart.base_names[:mu] + chart.base_names[mu + 1 :]
        for a in chart.fibre_names:
            comp = X.coefficient(*rest, a) * sign / c0
            g = comp - connection.G(a, mu)
            if not g.is_zero:
                gamma[(a, mu)] = g
    return CandidateSection(connection, gamma)
