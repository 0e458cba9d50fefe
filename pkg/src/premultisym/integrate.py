"""Integral sections of a flat connection on a rectangular base grid.

``integrate_section`` solves ``ds^a/dx^mu = F^a_mu(x, s)`` by classical RK4,
sweeping axis 1 from the start node, then axis 2 from every node of that
line, and so on.  Repeating the sweep in the opposite axis order gives the
path-independence defect, which vanishes (to integration error) for flat
connections.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .geometry import CandidateSection
from .symexpr import Chart, Expr, evaluate

__all__ = [
    "Axis",
    "Grid",
    "GridSection",
    "BlowUpError",
    "GridTooCoarseError",
    "integrate_section",
    "ELCheck",
    "numeric_el_check",
    "convergence_order",
]

BLOW_UP = 1e12


class BlowUpError(ArithmeticError):
    def __init__(self, location: Mapping[str, float], value: float):
        self.location = dict(location)
        self.value = value
        where = ", ".join(f"{k}={v:.6g}" for k, v in location.items())
        super().__init__(f"solution blew up (|s| = {value:.3g}) at {where}")


class GridTooCoarseError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    nodes: int

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if self.nodes < 2 or not self.hi > self.lo:
            raise ValueError(f"bad axis {self}")

    @classmethod
    def with_step(cls, lo: float, hi: float, h: float) -> "Axis":
        n = round((hi - lo) / h)
        if n < 1 or abs(n * h - (hi - lo)) > 1e-9 * max(1.0, abs(hi - lo)):
            raise ValueError(f"step {h} does not divide [{lo}, {hi}]")
        return cls(lo, hi, n + 1)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.nodes - 1)

    @property
    def points(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.nodes)


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]

    @classmethod
    def uniform(cls, m: int, lo: float = 0.0, hi: float = 1.0, h: float = 1 / 64) -> "Grid":
        return cls(tuple(Axis.with_step(lo, hi, h) for _ in range(m)))

    @classmethod
    def parse(cls, spec: str, m: int) -> "Grid":
        """``lo:hi:h`` for every axis, or ``m`` such specs separated by commas.

        ``h`` may be a fraction such as ``1/64``.
        """
        parts = [p.strip() for p in spec.split(",") if p.strip()]
        if len(parts) == 1:
            parts = parts * m
        if len(parts) != m:
            raise ValueError(f"grid spec needs 1 or {m} axis entries")
        axes = []
        for p in parts:
            bits = p.split(":")
            if len(bits) != 3:
                raise ValueError(f"axis spec {p!r} is not lo:hi:h")
            lo, hi, h = (float(Fraction(b.strip())) for b in bits)
            axes.append(Axis.with_step(lo, hi, h))
        return cls(tuple(axes))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.nodes for a in self.axes)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[a.points for a in self.axes], indexing="ij")


@dataclass(frozen=True)
class GridSection:
    """Fibre values at every node of ``grid``; ``values[..., k]`` is ``names[k]``."""

    base_names: tuple[str, ...]
    names: tuple[str, ...]
    grid: Grid
    values: np.ndarray
    start: Mapping[str, float] = field(default_factory=dict)
    order: int = 4
    defect: float | None = None

    def __post_init__(self):
        if self.values.shape != self.grid.shape + (len(self.names),):
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("section values must be finite")

    @classmethod
    def from_functions(cls, base_names: Sequence[str], grid: Grid, funcs: Mapping[str, Callable]) -> "GridSection":
        """Sample closed-form components ``funcs[name](*base_arrays)`` on the grid."""
        mesh = grid.mesh()
        names = tuple(funcs)
        vals = np.stack([np.broadcast_to(np.asarray(funcs[n](*mesh), dtype=float), grid.shape) for n in names], axis=-1)
        return cls(tuple(base_names), names, grid, vals, order=0)

    def component(self, name: str) -> np.ndarray:
        return self.values[..., self.names.index(name)]

    def to_table(self) -> str:
        """One node per line (row-major): base coordinates then fibre values."""
        out = io.StringIO()
        out.write("# " + " ".join(self.base_names + self.names) + "\n")
        mesh = self.grid.mesh()
        for idx in np.ndindex(*self.grid.shape):
            row = [m[idx] for m in mesh] + list(self.values[idx])
            out.write(" ".join("%.17g" % v for v in row) + "\n")
        return out.getvalue()


def _field_functions(chart: Chart, F: Mapping[tuple[str, int], Expr]) -> list[Callable]:
    """Per base axis, a vectorized map ``(X, S) -> ds/dx^mu``."""
    names = list(chart.coords)
    fibre = chart.fibre_names
    out = []
    for mu in range(chart.m):
        comps = []
        for a in fibre:
            e = F.get((a, mu))
            comps.append(None if e is None or e.is_zero else e.to_callable(names))

        def f(X, S, comps=comps):
            args = [X[:, i] for i in range(X.shape[1])] + [S[:, k] for k in range(S.shape[1])]
            cols = []
            for c in comps:
                if c is None:
                    cols.append(np.zeros(X.shape[0]))
                else:
                    cols.append(np.broadcast_to(np.asarray(c(*args), dtype=float), (X.shape[0],)))
            return np.stack(cols, axis=1)

        out.append(f)
    return out


def _check(X, S, chart: Chart):
    bad = ~np.isfinite(S) | (np.abs(S) > BLOW_UP)
    if bad.any():
        i = int(np.argwhere(bad.any(axis=1))[0][0])
        loc = {n: float(X[i, k]) for k, n in enumerate(chart.base_names)}
        val = float(np.nanmax(np.abs(np.where(np.isfinite(S[i]), S[i], np.inf))))
        raise BlowUpError(loc, val)


def _sweep(fns, chart: Chart, grid: Grid, s0: np.ndarray, order: Sequence[int]) -> np.ndarray:
    m = chart.m
    X = np.array([[ax.lo for ax in grid.axes]], dtype=float)
    S = s0[None, :].astype(float)
    for k in order:
        ax = grid.axes[k]
        h = ax.h
        f = fns[k]
        Xs, Ss = [X], [S]
        for j in range(1, ax.nodes):
            Xh = X.copy()
            Xh[:, k] = X[:, k] + h / 2
            Xn = X.copy()
            Xn[:, k] = ax.lo + j * h
            k1 = f(X, S)
            k2 = f(Xh, S + h / 2 * k1)
            k3 = f(Xh, S + h / 2 * k2)
            k4 = f(Xn, S + h * k3)
            S = S + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            X = Xn
            _check(X, S, chart)
            Xs.append(X)
            Ss.append(S)
        X = np.stack(Xs, axis=1).reshape(-1, m)
        S = np.stack(Ss, axis=1).reshape(-1, S.shape[1])
    shape = [grid.axes[k].nodes for k in order]
    S = S.reshape(shape + [S.shape[1]])
    perm = list(np.argsort(order)) + [m]
    return np.transpose(S, perm)


def integrate_section(
    F: Mapping[tuple[str, int], Expr] | CandidateSection,
    chart: Chart,
    start: Mapping[str, float],
    grid: Grid,
    constraints: Sequence[Expr] = (),
    tol: float = 1e-8,
) -> GridSection:
    """RK4 integral section of ``ds^a/dx^mu = F^a_mu`` through ``start``.

    ``start`` gives every fibre coordinate at the first grid node (base
    coordinates come from the grid).  It must satisfy ``constraints`` to
    ``tol``.
    """
    if isinstance(F, CandidateSection):
        sec = F
        F = {(a, mu): sec.total(a, mu) for a in chart.fibre_names for mu in range(chart.m)}
    if len(grid.axes) != chart.m:
        raise ValueError("grid dimension does not match the base")
    missing = [a for a in chart.fibre_names if a not in start]
    if missing:
        raise KeyError(f"start point misses {missing}")
    point = {n: float(ax.lo) for n, ax in zip(chart.base_names, grid.axes)}
    point.update({a: float(start[a]) for a in chart.fibre_names})
    for c in constraints:
        v = float(evaluate(c, point))
        if abs(v) > tol:
            raise ValueError(f"start point violates constraint {c} (value {v:.3g})")
    fns = _field_functions(chart, F)
    s0 = np.array([point[a] for a in chart.fibre_names])
    order = list(range(chart.m))
    S = _sweep(fns, chart, grid, s0, order)
    defect = 0.0
    if chart.m > 1:
        S2 = _sweep(fns, chart, grid, s0, order[::-1])
        diff = np.abs(S - S2)
        interior = tuple(slice(1, -1) if n >= 3 else slice(None) for n in grid.shape)
        defect = float(diff[interior].max()) if diff[interior].size else 0.0
    return GridSection(chart.base_names, chart.fibre_names, grid, S, {a: point[a] for a in chart.fibre_names}, 4, defect)


@dataclass(frozen=True)
class ELCheck:
    max: float
    l2: float
    residual: np.ndarray  # interior nodes, one slice per field

    def __str__(self):
        return f"max {self.max:.3e}, l2 {self.l2:.3e}"


def numeric_el_check(sys, sec: GridSection) -> ELCheck:
    """Finite-difference Euler-Lagrange residual of the section's fields.

    With ``s^A_a`` and ``s^A_{ab}`` taken from central differences, the
    residual per field is

        d2L/dx^a dv^A_a + d2L/dy^B dv^A_a s^B_a + d2L/dv^B_b dv^A_a s^B_{ab} - dL/dy^A

    evaluated on interior nodes (second order in the step).  ``l2`` is the
    discrete L2 norm weighted by the cell volume.
    """
    chart = sys.chart
    m, n = chart.m, chart.n
    if any(k < 4 for k in sec.grid.shape):
        raise GridTooCoarseError("need at least 4 nodes per axis")
    hs = [ax.h for ax in sec.grid.axes]
    mesh = sec.grid.mesh()
    inner = tuple(slice(1, -1) for _ in range(m))
    ys = [sec.component(y) for y in chart.fields]
    first = [[np.gradient(s, hs[a], axis=a)[inner] for a in range(m)] for s in ys]
    second = []
    for s in ys:
        block = []
        for a in range(m):
            row = []
            for b in range(m):
                if a == b:
                    lo = [slice(1, -1)] * m
                    up = list(lo)
                    dn = list(lo)
                    up[a] = slice(2, None)
                    dn[a] = slice(None, -2)
                    row.append((s[tuple(up)] - 2 * s[inner] + s[tuple(dn)]) / hs[a] ** 2)
                else:
                    g = np.gradient(np.gradient(s, hs[b], axis=b), hs[a], axis=a)
                    row.append(g[inner])
            block.append(row)
        second.append(block)
    env = {b: mesh[k][inner] for k, b in enumerate(chart.base_names)}
    for A, y in enumerate(chart.fields):
        env[y] = ys[A][inner]
        for a in range(m):
            env[f"v{A + 1}_{a + 1}"] = first[A][a]
    names = list(chart.coords)
    args = [env[c] for c in names]
    shape = env[chart.base_names[0]].shape

    def ev(e: Expr) -> np.ndarray:
        if e.is_zero:
            return np.zeros(shape)
        return np.broadcast_to(np.asarray(e.to_callable(names)(*args), dtype=float), shape)

    res = []
    for A, y in enumerate(chart.fields):
        r = -ev(sys.L.diff(y))
        for a in range(m):
            P = sys.dL(A, a)
            r = r + ev(P.diff(chart.base_names[a]))
            for B, yb in enumerate(chart.fields):
                r = r + ev(P.diff(yb)) * first[B][a]
                for b in range(m):
                    r = r + ev(P.diff(f"v{B + 1}_{b + 1}")) * second[B][b][a]
        res.append(r)
    R = np.stack(res)
    cell = math.prod(hs)
    return ELCheck(float(np.abs(R).max()), float(np.sqrt((R**2).sum() * cell)), R)


def convergence_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
