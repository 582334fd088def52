"""Closed-form and sampled profile functions evaluated on model grids.

A 1-D profile supplies the warp function w(r) of a surface-of-revolution
metric, or the conformal exponent u on a circle.  A 2-D profile supplies
the conformal exponent u(x, y) on a flat torus.  Profiles carry exact
first and second derivatives: curvature fields need w'' and the flat
Laplacian of u, and finite differences of the raw samples would pollute
them with grid noise.

Closed-form input is a small expression language (polynomials, sin, sinh,
exp, ...) parsed by sympy; sampled input goes through a cubic spline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline

_ALLOWED_1D = ("r", "t", "theta")


def _lambdify(expr, var):
    fn = sp.lambdify(var, expr, modules="numpy")

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        out = fn(x)
        # constants collapse to scalars under lambdify
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    return wrapped


def parse_expression(text: str, variables, params=None):
    """Parse a profile expression, substituting numeric parameters.

    Only the declared grid variables may remain free; anything else is a
    config error.
    """
    local = {str(v): sp.Symbol(str(v)) for v in variables}
    expr = sp.sympify(text, locals=local)
    if params:
        expr = expr.subs({sp.Symbol(k): float(v) for k, v in params.items()})
    extra = expr.free_symbols - {sp.Symbol(str(v)) for v in variables}
    if extra:
        names = ", ".join(sorted(str(s) for s in extra))
        raise ValueError(f"profile expression has unknown symbols: {names}")
    return expr


@dataclass
class Profile1D:
    """Scalar profile of one variable with two derivatives."""

    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    source: str = "callable"

    def __call__(self, r):
        return self.value(r)

    @classmethod
    def from_expression(cls, text: str, var: str = "r", params=None) -> "Profile1D":
        x = sp.Symbol(var)
        expr = parse_expression(text, [var], params)
        return cls(
            value=_lambdify(expr, x),
            d1=_lambdify(sp.diff(expr, x), x),
            d2=_lambdify(sp.diff(expr, x, 2), x),
            source=f"expr:{text}",
        )

    @classmethod
    def from_samples(cls, xs, ys, periodic: bool = False) -> "Profile1D":
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        bc = "periodic" if periodic else "natural"
        spline = CubicSpline(xs, ys, bc_type=bc)
        return cls(
            value=lambda r: spline(np.asarray(r, dtype=float)),
            d1=spline.derivative(1),
            d2=spline.derivative(2),
            source="samples",
        )

    @classmethod
    def constant(cls, c: float) -> "Profile1D":
        return cls(
            value=lambda r: np.full_like(np.asarray(r, dtype=float), c),
            d1=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
            d2=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
            source=f"const:{c}",
        )


@dataclass
class Profile2D:
    """Scalar profile on the periodic square, with second derivatives."""

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dxx: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dyy: Callable[[np.ndarray, np.ndarray], np.ndarray]
    source: str = "callable"

    @classmethod
    def from_expression(cls, text: str, params=None) -> "Profile2D":
        x, y = sp.symbols("x y")
        expr = parse_expression(text, ["x", "y"], params)

        def make(e):
            fn = sp.lambdify((x, y), e, modules="numpy")

            def wrapped(xv, yv):
                xv = np.asarray(xv, dtype=float)
                yv = np.asarray(yv, dtype=float)
                out = fn(xv, yv)
                return np.broadcast_to(np.asarray(out, dtype=float), xv.shape).copy()

            return wrapped

        return cls(
            value=make(expr),
            dxx=make(sp.diff(expr, x, 2)),
            dyy=make(sp.diff(expr, y, 2)),
            source=f"expr:{text}",
        )

    @classmethod
    def constant(cls, c: float) -> "Profile2D":
        def const(xv, yv):
            return np.full_like(np.asarray(xv, dtype=float), c)

        def zero(xv, yv):
            return np.zeros_like(np.asarray(xv, dtype=float))

        return cls(value=const, dxx=zero, dyy=zero, source=f"const:{c}")
