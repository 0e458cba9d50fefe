"""Constraint and integrability algorithms for pre-multisymplectic field theories."""

from .symexpr import Chart, Expr, parse_expr

__version__ = "0.1.0"

__all__ = ["Chart", "Expr", "parse_expr"]
