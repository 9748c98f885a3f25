"""Edge cost functions: affine, polynomial, piecewise-linear.

Every cost is nonnegative and nondecreasing on loads x >= 0, which keeps the
potential of the routing game convex. Each class provides:

- ``evaluate(x)``     the unit travel cost c(x), vectorized over numpy arrays
- ``primitive(x)``    the exact integral of c from 0 to x
- ``marginal()``      the cost c(x) + x*c'(x) as a new cost function
- ``derivative(x)``   c'(x), using the left derivative at piecewise kinks

Evaluating any cost at a negative load raises :class:`NegativeLoad`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeLoad

__all__ = [
    "CostFunction",
    "Affine",
    "Polynomial",
    "PiecewiseLinear",
    "cost_from_json",
    "cost_to_json",
]


def _check_load(x) -> np.ndarray | float:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise NegativeLoad(f"cost evaluated at negative load {arr.min()!r}")
    return arr if arr.ndim else float(arr)


class CostFunction:
    """Interface shared by all edge cost functions."""

    #: True when derivative() is defined everywhere (enables Newton polish).
    smooth: bool = False

    def evaluate(self, x):
        raise NotImplementedError

    def primitive(self, x):
        raise NotImplementedError

    def marginal(self) -> "CostFunction":
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)


@dataclass(frozen=True)
class Affine(CostFunction):
    """c(x) = a*x + b with a, b >= 0."""

    a: float
    b: float
    smooth = True

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"affine cost needs a, b >= 0, got ({self.a}, {self.b})")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    def evaluate(self, x):
        x = _check_load(x)
        return self.a * x + self.b

    def primitive(self, x):
        x = _check_load(x)
        return 0.5 * self.a * x * x + self.b * x

    def marginal(self) -> "Affine":
        return Affine(2.0 * self.a, self.b)

    def derivative(self, x):
        x = _check_load(x)
        return self.a * np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else self.a


@dataclass(frozen=True)
class Polynomial(CostFunction):
    """c(x) = sum_k coeffs[k] * x**k with all coefficients >= 0."""

    coeffs: tuple[float, ...]
    smooth = True

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs:
            raise ValueError("polynomial cost needs at least one coefficient")
        if any(c < 0 for c in coeffs):
            raise ValueError(f"polynomial cost needs nonnegative coefficients, got {coeffs}")
        object.__setattr__(self, "coeffs", coeffs)

    def evaluate(self, x):
        x = _check_load(x)
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def primitive(self, x):
        x = _check_load(x)
        prim = [0.0] + [c / (k + 1) for k, c in enumerate(self.coeffs)]
        return np.polynomial.polynomial.polyval(x, prim)

    def marginal(self) -> "Polynomial":
        # c + x c' scales the degree-k coefficient by (k + 1)
        return Polynomial(tuple((k + 1) * c for k, c in enumerate(self.coeffs)))

    def derivative(self, x):
        x = _check_load(x)
        der = [k * c for k, c in enumerate(self.coeffs)][1:] or [0.0]
        return np.polynomial.polynomial.polyval(x, der)


@dataclass(frozen=True)
class PiecewiseLinear(CostFunction):
    """Continuous piecewise-linear cost on knots (x[i], y[i]).

    Knots must be strictly increasing in x with nondecreasing y; the cost is
    linearly interpolated between knots and constant beyond either end.
    Derivatives use the left-hand slope at knots.
    """

    x: tuple[float, ...]
    y: tuple[float, ...]
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = tuple(float(v) for v in self.x)
        ys = tuple(float(v) for v in self.y)
        if len(xs) != len(ys) or len(xs) < 1:
            raise ValueError("piecewise-linear cost needs matching nonempty knot lists")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("piecewise-linear knots must be strictly increasing in x")
        if any(b < a for a, b in zip(ys, ys[1:])):
            raise ValueError("piecewise-linear values must be nondecreasing")
        if xs[0] < 0:
            raise ValueError("piecewise-linear knots must lie at nonnegative loads")
        if ys[0] < 0:
            raise ValueError("piecewise-linear cost must be nonnegative")
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "y", ys)
        # Integral of the cost from 0 up to each knot (constant y[0] below x[0]).
        cum = [ys[0] * xs[0]]
        for i in range(len(xs) - 1):
            cum.append(cum[-1] + 0.5 * (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i]))
        object.__setattr__(self, "_cum", tuple(cum))

    def evaluate(self, x):
        x = _check_load(x)
        return np.interp(x, self.x, self.y)

    def primitive(self, x):
        x = _check_load(x)
        xs = np.asarray(self.x)
        ys = np.asarray(self.y)
        cum = np.asarray(self._cum)
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        # index of the knot at or before each sample (-1: below the first knot)
        idx = np.searchsorted(xs, arr, side="right") - 1
        out = np.empty_like(arr)
        below = idx < 0
        out[below] = ys[0] * arr[below]
        above = idx >= len(xs) - 1
        out[above] = cum[-1] + ys[-1] * (arr[above] - xs[-1])
        mid = ~(below | above)
        i = idx[mid]
        dx = arr[mid] - xs[i]
        slope = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
        out[mid] = cum[i] + ys[i] * dx + 0.5 * slope * dx * dx
        return out if np.ndim(x) else float(out[0])

    def derivative(self, x):
        """Left-hand slope; 0 on the constant extensions."""
        x = _check_load(x)
        xs = np.asarray(self.x)
        ys = np.asarray(self.y)
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        slopes = np.diff(ys) / np.diff(xs) if len(xs) > 1 else np.zeros(0)
        # left derivative: the segment ending at x (knots belong to the left segment)
        idx = np.searchsorted(xs, arr, side="left") - 1
        out = np.zeros_like(arr)
        valid = (idx >= 0) & (idx < len(slopes))
        out[valid] = slopes[idx[valid]]
        out[arr > xs[-1]] = 0.0
        return out if np.ndim(x) else float(out[0])

    def marginal(self) -> "CostFunction":
        return _PiecewiseMarginal(self)


class _PiecewiseMarginal(CostFunction):
    """Marginal cost c(x) + x*c'(x) of a piecewise-linear cost.

    Not representable as one of the serializable cost types: with the
    left-derivative convention it jumps at interior knots. Only evaluation
    and the primitive are needed downstream; the primitive is the closed
    form integral of the marginal, x*c(x).
    """

    def __init__(self, base: PiecewiseLinear):
        self.base = base

    def evaluate(self, x):
        return self.base.evaluate(x) + np.asarray(x, dtype=float) * self.base.derivative(x)

    def primitive(self, x):
        x_arr = _check_load(x)
        return np.asarray(x_arr, dtype=float) * self.base.evaluate(x)

    def derivative(self, x):
        # d/dx (c + x c') = 2 c' between knots (c'' = 0); undefined at knots.
        return 2.0 * self.base.derivative(x)

    def marginal(self) -> "CostFunction":
        raise NotImplementedError("marginal of a marginal cost is not supported")


def cost_to_json(cost: CostFunction) -> dict:
    """Encode a cost function as a JSON-ready dict."""
    if isinstance(cost, Affine):
        return {"type": "affine", "a": cost.a, "b": cost.b}
    if isinstance(cost, Polynomial):
        return {"type": "poly", "coeffs": list(cost.coeffs)}
    if isinstance(cost, PiecewiseLinear):
        return {"type": "pwl", "x": list(cost.x), "y": list(cost.y)}
    raise ValueError(f"cost {cost!r} has no JSON encoding")


def cost_from_json(doc: dict) -> CostFunction:
    """Decode a cost function from its JSON dict."""
    if not isinstance(doc, dict) or "type" not in doc:
        raise ValueError(f"cost document must be a dict with a 'type' key, got {doc!r}")
    kind = doc["type"]
    if kind == "affine":
        return Affine(float(doc["a"]), float(doc["b"]))
    if kind == "poly":
        return Polynomial(tuple(float(c) for c in doc["coeffs"]))
    if kind == "pwl":
        return PiecewiseLinear(tuple(float(v) for v in doc["x"]),
                               tuple(float(v) for v in doc["y"]))
    raise ValueError(f"unknown cost type {kind!r}")
