"""
Exponential change of unknown for linear problems that violate c > 0 or
c - b'/2 > 0.

With u = exp(kappa p) w the problem for w has coefficients

    b~ = b - 2 eps kappa p'
    c~ = c - eps kappa p'' + kappa b p' - eps kappa^2 p'^2
    f~ = exp(-kappa p) f

so that c~ - b~'/2 = c - b'/2 + kappa b p' - eps kappa^2 p'^2. The auxiliary
function p increases along the flow of b away from the zero set of b; near the
zero set it is flat. It is built numerically and stored as a cubic spline, so
the transformed coefficients are ordinary expressions with tabulated nodes.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from layer_fem import expr
from layer_fem.errors import ProblemError, TransformError
from layer_fem.expr import Num, Tabulated, Var
from layer_fem.problem import ROOT_TOLERANCE, SCAN_POINTS, BoundaryValueProblem, find_roots

logger = logging.getLogger(__name__)

MEMO_POINTS = 2001
MOLLIFIER_POINTS = 64
CHECK_POINTS = 1001


def _bump(y):
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1.0
    values = np.zeros_like(y)
    values[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
    return values


def zero_set(problem: BoundaryValueProblem, scan_points: int = SCAN_POINTS) -> np.ndarray:
    """Grid points where |b| vanishes together with the located sign changes of b."""
    grid = np.linspace(problem.left, problem.right, scan_points + 1)
    values = problem.evaluate(problem.b, grid)
    points = set(grid[np.abs(values) <= ROOT_TOLERANCE].tolist())
    points.update(find_roots(problem, scan_points))
    return np.array(sorted(points))


def _distance_to(x, points):
    if points.size == 0:
        return np.full(np.shape(x), np.inf)
    return np.min(np.abs(np.asarray(x)[..., None] - points), axis=-1)


@dataclass(frozen=True, eq=False)
class AuxiliaryFunction:
    """Smooth weight p >= 1 with derivatives from its spline."""

    spline: CubicSpline
    zeros: np.ndarray
    delta0: float

    def __call__(self, x, nu: int = 0):
        return self.spline(x, nu)

    @property
    def max_abs_second_derivative(self) -> float:
        grid = np.linspace(self.spline.x[0], self.spline.x[-1], MEMO_POINTS)
        return float(np.max(np.abs(self.spline(grid, 2))))


def build_auxiliary_function(
    problem: BoundaryValueProblem,
    delta0: float,
    memo_points: int = MEMO_POINTS,
    scan_points: int = SCAN_POINTS,
) -> AuxiliaryFunction:
    """
    Builds p from the raw function whose slope is sign(b) outside the
    2 delta0/3 neighbourhood of the zero set of b and 0 inside it, extended by
    one unit beyond the interval with the endpoint slope, mollified with radius
    delta0/6 and shifted so that min p = 1.
    """
    if delta0 <= 0:
        raise ProblemError(f"delta0 must be positive, got {delta0}")
    left, right = problem.left, problem.right
    zeros = zero_set(problem, scan_points)
    radius = delta0 / 6.0

    # Raw slope on a grid fine enough for the mollifier.
    spacing = min(radius / 20.0, (right - left) / 2000.0)
    count = int(math.ceil((right - left + 2.0) / spacing)) + 1
    fine = np.linspace(left - 1.0, right + 1.0, count)
    clamped = np.clip(fine, left, right)
    sign = np.sign(problem.evaluate(problem.b, clamped))
    slope = np.where(_distance_to(clamped, zeros) >= 2.0 * delta0 / 3.0, sign, 0.0)
    raw = cumulative_trapezoid(slope, fine, initial=0.0)

    # Mollify by Gauss-Legendre quadrature of the normalized bump.
    nodes, weights = legendre.leggauss(MOLLIFIER_POINTS)
    kernel = weights * _bump(nodes)
    kernel = kernel / kernel.sum()
    xs = np.linspace(left, right, memo_points)
    shifted = xs[:, None] - radius * nodes[None, :]
    values = np.interp(shifted, fine, raw) @ kernel
    values = values - values.min() + 1.0

    logger.info(f"Built auxiliary function on {memo_points} points, {zeros.size} zero(s) of b, delta0={delta0:g}")
    return AuxiliaryFunction(CubicSpline(xs, values), zeros, delta0)


def default_kappa(problem: BoundaryValueProblem, p: AuxiliaryFunction) -> float:
    """
    kappa = min{1, b0/(4 eps), c0/(4 eps) (1 + max|p''|)^-1} with b0 the minimum
    of |b| outside the delta0/3 neighbourhood of the zero set and c0 the minimum
    of c on the zero set.
    """
    grid = np.linspace(problem.left, problem.right, CHECK_POINTS)
    away = _distance_to(grid, p.zeros) >= p.delta0 / 3.0
    b0 = float(np.min(np.abs(problem.evaluate(problem.b, grid[away])))) if np.any(away) else math.inf
    c0 = float(np.min(problem.evaluate(problem.c, p.zeros))) if p.zeros.size else math.inf
    eps = problem.eps
    return min(1.0, b0 / (4.0 * eps), c0 / (4.0 * eps) / (1.0 + p.max_abs_second_derivative))


@dataclass(frozen=True, eq=False)
class TransformResult:
    problem: BoundaryValueProblem
    kappa: float
    p: AuxiliaryFunction
    min_c: float
    min_c_minus_half_bprime: float

    def to_original(self, x, w_values):
        """u = exp(kappa p) w."""
        return np.exp(self.kappa * self.p(x)) * w_values

    def to_transformed(self, x, u_values):
        return np.exp(-self.kappa * self.p(x)) * u_values


def transform_linear_problem(
    problem: BoundaryValueProblem,
    delta0: float,
    kappa: float | None = None,
    verify: bool = True,
) -> TransformResult:
    """
    Rewrites a linear problem for w = exp(-kappa p) u.

    Args:
        problem (BoundaryValueProblem): A linear problem.
        delta0 (float): Neighbourhood size around the zero set of b.
        kappa (float, optional): Exponent scale; defaults to default_kappa.
        verify (bool): Check positivity of the new coefficients on a grid.

    Returns:
        TransformResult: transformed problem, kappa, p and the attained minima.

    Raises:
        ProblemError: For semilinear input.
        TransformError: If verification finds min c~ <= 0 or min (c~ - b~'/2) <= 0.
    """
    if not problem.is_linear:
        raise ProblemError("The exponential transformation applies to linear problems only")
    p = build_auxiliary_function(problem, delta0)
    if kappa is None:
        kappa = default_kappa(problem, p)
    if kappa < 0:
        raise ProblemError(f"kappa must be non-negative, got {kappa}")

    eps = problem.eps
    x = Var("x")
    p0 = Tabulated("p", x, p.spline)
    p1 = Tabulated("p'", x, p.spline.derivative(1))
    p2 = Tabulated("p''", x, p.spline.derivative(2))

    b = expr.sub(problem.b, expr.mul(Num(2.0 * eps * kappa), p1))
    c = expr.sub(problem.c, expr.mul(Num(eps * kappa), p2))
    c = expr.add(c, expr.mul(expr.mul(Num(kappa), problem.b), p1))
    c = expr.sub(c, expr.mul(Num(eps * kappa**2), expr.mul(p1, p1)))
    rhs = expr.mul(expr.exp(expr.mul(Num(-kappa), p0)), problem.rhs)

    transformed = dataclasses.replace(
        problem,
        b=b,
        c=c,
        rhs=rhs,
        nu_left=problem.nu_left * math.exp(-kappa * float(p(problem.left))),
        nu_right=problem.nu_right * math.exp(-kappa * float(p(problem.right))),
        gamma=None,
        gamma_tilde=None,
        name=f"{problem.name}-transformed",
    )

    grid = np.linspace(problem.left, problem.right, CHECK_POINTS)
    c_values = transformed.evaluate(transformed.c, grid)
    margin = c_values - 0.5 * transformed.evaluate(transformed.b_prime, grid)
    min_c, min_margin = float(np.min(c_values)), float(np.min(margin))
    logger.info(f"Transformed with kappa={kappa:.6g}: min c~ = {min_c:.6g}, min c~ - b~'/2 = {min_margin:.6g}")
    if verify and (min_c <= 0 or min_margin <= 0):
        raise TransformError(min_c, min_margin)
    return TransformResult(transformed, kappa, p, min_c, min_margin)


def operator_identity_residual(result: TransformResult, original: BoundaryValueProblem, v, dv, d2v, x) -> float:
    """
    Relative defect of L~(exp(-kappa p) v) = exp(-kappa p) L v at the points x,
    for a smooth v given with its first two derivatives.
    """
    x = np.asarray(x, dtype=float)
    kappa, p = result.kappa, result.p
    eps = original.eps
    weight = np.exp(-kappa * p(x))
    p1, p2 = p(x, 1), p(x, 2)
    v0, v1, v2 = v(x), dv(x), d2v(x)

    w0 = weight * v0
    w1 = weight * (v1 - kappa * p1 * v0)
    w2 = weight * (v2 - 2.0 * kappa * p1 * v1 - kappa * p2 * v0 + kappa**2 * p1**2 * v0)

    transformed = result.problem
    left_side = (
        -eps * w2
        + transformed.evaluate(transformed.b, x) * w1
        + transformed.evaluate(transformed.c, x) * w0
    )
    right_side = weight * (
        -eps * v2 + original.evaluate(original.b, x) * v1 + original.evaluate(original.c, x) * v0
    )
    scale = max(float(np.max(np.abs(right_side))), np.finfo(float).tiny)
    return float(np.max(np.abs(left_side - right_side))) / scale
