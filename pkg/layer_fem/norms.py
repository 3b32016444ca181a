"""
Error norms, reference solutions, convergence rates and interpolation studies.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.polynomial import legendre

from layer_fem import expr
from layer_fem.errors import ReferenceSolutionError
from layer_fem.expr import Expr
from layer_fem.fem import DiscreteFunction, FESpace, interpolate, solve
from layer_fem.mesh import Mesh, sun_stynes_parameters
from layer_fem.problem import BoundaryValueProblem

logger = logging.getLogger(__name__)

# Uniform samples per cell added to the quadrature points for the max norm.
MAX_NORM_SAMPLES = 16

# Reference strategies.
EXACT = "exact"
FINE_MESH = "fine-mesh"


@dataclass(frozen=True, eq=False)
class Reference:
    """
    A reference solution: either exact callables for u and u', or a discrete
    solution on a finer mesh.
    """

    kind: str
    value: Callable
    derivative: Callable
    provenance: Mapping = field(default_factory=dict)

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.value(x), dtype=float), np.asarray(self.derivative(x), dtype=float)

    @classmethod
    def from_discrete(cls, u: DiscreteFunction, provenance=None):
        return cls(FINE_MESH, u.evaluate, lambda x: u.evaluate(x, derivative=1), dict(provenance or {}))

    @classmethod
    def from_expr(cls, value: Expr, derivative: Expr | None = None, parameters: Mapping[str, float] | None = None):
        derivative = expr.differentiate(value, "x") if derivative is None else derivative
        return cls(
            EXACT,
            expr.to_callable(value, parameters),
            expr.to_callable(derivative, parameters),
            {"strategy": EXACT, "value": str(value), "derivative": str(derivative)},
        )


@dataclass(frozen=True)
class ErrorReport:
    """
    Error norms of one discrete solution together with the parameters they
    were measured with: eps and gamma_tilde of the energy norm, the number of
    Gauss-Legendre points per cell and the provenance of the reference.
    """

    energy: float
    l2: float
    h1: float
    max: float
    eps: float = math.nan
    gamma_tilde: float = math.nan
    quadrature_points: int = 0
    reference: Mapping = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"energy": self.energy, "l2": self.l2, "h1": self.h1, "max": self.max}

    def metadata(self) -> dict:
        return {
            "eps": self.eps,
            "gamma_tilde": self.gamma_tilde,
            "quadrature_points": self.quadrature_points,
            "reference": dict(self.reference),
        }


def _sample_points(mesh: Mesh, q: int):
    xi, w = legendre.leggauss(q)
    widths = mesh.widths
    x = mesh.points[:-1, None] + widths[:, None] * (xi[None, :] + 1.0) / 2.0
    weights = w[None, :] * widths[:, None] / 2.0
    t = np.linspace(0.0, 1.0, MAX_NORM_SAMPLES)
    extra = mesh.points[:-1, None] + widths[:, None] * t[None, :]
    return x, weights, extra


def error_norms(
    u_N: DiscreteFunction,
    reference: Reference,
    eps: float,
    gamma_tilde: float,
    quadrature_points: int | None = None,
) -> ErrorReport:
    """
    Errors of u_N against a reference on the mesh of u_N.

    energy = (eps |e|_1^2 + gamma_tilde ||e||_0^2)^(1/2), with L2 and H1-seminorm
    parts by Gauss-Legendre quadrature (2k+2 points per cell by default), and
    the max norm sampled at the quadrature points, the mesh nodes and
    MAX_NORM_SAMPLES uniform points per cell.

    Raises:
        ValueError: If fewer than k+2 quadrature points are requested.
    """
    k = u_N.space.order
    q = 2 * k + 2 if quadrature_points is None else quadrature_points
    if q < k + 2:
        raise ValueError(f"Error quadrature needs at least k+2={k + 2} points per cell, got {q}")
    x, weights, extra = _sample_points(u_N.space.mesh, q)

    flat = x.ravel()
    ref_value, ref_derivative = reference.evaluate(flat)
    error = (u_N.evaluate(flat) - ref_value).reshape(x.shape)
    error_derivative = (u_N.evaluate(flat, derivative=1) - ref_derivative).reshape(x.shape)

    l2 = math.sqrt(float(np.sum(weights * error**2)))
    h1 = math.sqrt(float(np.sum(weights * error_derivative**2)))
    energy = math.sqrt(eps * h1**2 + gamma_tilde * l2**2)

    samples = np.concatenate([flat, extra.ravel(), u_N.space.node_coordinates])
    sampled_reference, _ = reference.evaluate(samples)
    maximum = float(np.max(np.abs(u_N.evaluate(samples) - sampled_reference)))
    return ErrorReport(
        energy=energy,
        l2=l2,
        h1=h1,
        max=maximum,
        eps=eps,
        gamma_tilde=gamma_tilde,
        quadrature_points=q,
        reference=dict(reference.provenance),
    )


def make_reference(
    problem: BoundaryValueProblem,
    strategy: str,
    k: int,
    mesh_factory: Callable[[int], Mesh] | None = None,
    max_study_N: int | None = None,
    multiplier: int = 4,
    exact: Expr | str | None = None,
    exact_derivative: Expr | str | None = None,
    **solve_options,
) -> Reference:
    """
    Builds the reference solution for an error study.

    'exact' uses the given closed-form solution (and derivative, computed
    symbolically if omitted). 'fine-mesh' solves with order k+1 on
    mesh_factory(multiplier * max_study_N).

    Raises:
        ReferenceSolutionError: If the strategy's inputs are missing.
    """
    if strategy == EXACT:
        if exact is None:
            raise ReferenceSolutionError("The exact strategy needs an exact solution expression")
        names = ("eps", *problem.parameters)
        value = expr.parse(exact, parameters=names) if isinstance(exact, str) else exact
        derivative = exact_derivative
        if isinstance(derivative, str):
            derivative = expr.parse(derivative, parameters=names)
        return Reference.from_expr(value, derivative, dict(problem.parameters, eps=problem.eps))

    if strategy == FINE_MESH:
        if mesh_factory is None or max_study_N is None:
            raise ReferenceSolutionError("The fine-mesh strategy needs a mesh factory and the largest study N")
        N_ref = multiplier * max_study_N
        space = FESpace(mesh_factory(N_ref), k + 1)
        logger.info(f"Computing fine-mesh reference: N={N_ref}, order={k + 1}, eps={problem.eps:g}")
        solution = solve(space, problem, **solve_options)
        return Reference.from_discrete(
            solution, {"strategy": FINE_MESH, "N": N_ref, "order": k + 1, "mesh": dict(space.mesh.provenance)}
        )

    raise ReferenceSolutionError(f"Unknown reference strategy '{strategy}'")


# ---------------------------------------------------------------------------
# Convergence rates
# ---------------------------------------------------------------------------

def plain_scale(Ns) -> np.ndarray:
    return 1.0 / np.asarray(Ns, dtype=float)


def log_scale(Ns) -> np.ndarray:
    Ns = np.asarray(Ns, dtype=float)
    return np.log(Ns) / Ns


def sun_stynes_scale(Ns, eps: float, lam: float, k: int) -> np.ndarray:
    """(K+1)/N with K the number of decades of the Sun-Stynes mesh for each N."""
    return np.array([(sun_stynes_parameters(eps, lam, k, int(N))[1] + 1) / N for N in Ns], dtype=float)


def pairwise_rates(errors: Sequence[float], scales: Sequence[float]) -> np.ndarray:
    """
    Rates log(e_{i-1}/e_i) / log(s_{i-1}/s_i) between consecutive entries; the
    first entry is NaN.
    """
    errors = np.asarray(errors, dtype=float)
    scales = np.asarray(scales, dtype=float)
    rates = np.full(errors.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates[1:] = np.log(errors[:-1] / errors[1:]) / np.log(scales[:-1] / scales[1:])
    return rates


def fit_order(errors: Sequence[float], scales: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(scale)."""
    errors = np.asarray(errors, dtype=float)
    scales = np.asarray(scales, dtype=float)
    usable = np.isfinite(errors) & (errors > 0)
    if usable.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(scales[usable]), np.log(errors[usable]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# Interpolation studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentialLayer:
    """exp(-beta d / eps_tilde) with d the distance to the layer point."""

    eps_tilde: float
    beta: float
    location: float

    def distance(self, x):
        return np.abs(np.asarray(x, dtype=float) - self.location)

    def value(self, x):
        return np.exp(-self.beta * self.distance(x) / self.eps_tilde)

    def derivative(self, x):
        sign = np.where(np.asarray(x, dtype=float) >= self.location, 1.0, -1.0)
        return -self.beta / self.eps_tilde * sign * self.value(x)

    @property
    def weight(self) -> float:
        return math.sqrt(self.eps_tilde)


@dataclass(frozen=True)
class PowerLayer:
    """
    (sqrt(eps) + d)^lam for lam > 0. For lam = 0 the cusp
    sqrt(eps) / (sqrt(eps) + d) stands in; its derivatives obey the same bounds.
    """

    eps: float
    lam: float
    location: float

    def distance(self, x):
        return np.abs(np.asarray(x, dtype=float) - self.location)

    def value(self, x):
        s = math.sqrt(self.eps)
        d = self.distance(x)
        if self.lam == 0:
            return s / (s + d)
        return (s + d) ** self.lam

    def derivative(self, x):
        s = math.sqrt(self.eps)
        d = self.distance(x)
        sign = np.where(np.asarray(x, dtype=float) >= self.location, 1.0, -1.0)
        if self.lam == 0:
            return -sign * s / (s + d) ** 2
        return sign * self.lam * (s + d) ** (self.lam - 1)

    @property
    def weight(self) -> float:
        return math.sqrt(self.eps)


def interp_error_study(layer, mesh: Mesh, k: int, node_rule: str | None = None) -> pd.DataFrame:
    """
    Interpolation errors of a layer function on a mesh, per region.

    One row per distinct segment tag (fine, coarse, graded, uniform) plus an
    'all' row, with columns: region, max, l2, h1, weighted (the eps-weighted H1
    seminorm), x1_deriv and x2_deriv (max of d^l |(phi - phi^I)'| for l = 1, 2,
    with d the distance to the layer point).
    """
    space = FESpace(mesh, k) if node_rule is None else FESpace(mesh, k, node_rule)
    interpolant = interpolate(layer.value, space)

    x, weights, extra = _sample_points(mesh, 2 * k + 2)
    error = interpolant.evaluate(x.ravel()).reshape(x.shape) - layer.value(x)
    error_derivative = interpolant.evaluate(x.ravel(), derivative=1).reshape(x.shape) - layer.derivative(x)
    # Keep derivative samples inside cells so the left-cell convention does not mix cells.
    inner = np.linspace(0.0, 1.0, MAX_NORM_SAMPLES)[1:-1]
    widths = mesh.widths
    samples = np.concatenate([x, extra], axis=1)
    sample_error = interpolant.evaluate(samples.ravel()).reshape(samples.shape) - layer.value(samples)
    dx = mesh.points[:-1, None] + widths[:, None] * inner[None, :]
    dx = np.concatenate([x, dx], axis=1)
    derivative_error = np.abs(interpolant.evaluate(dx.ravel(), derivative=1).reshape(dx.shape) - layer.derivative(dx))
    distance = layer.distance(dx)

    tags = mesh.cell_tags()
    rows = []
    for region in [*dict.fromkeys(tags), "all"]:
        cells = np.ones(tags.shape, dtype=bool) if region == "all" else tags == region
        h1 = math.sqrt(float(np.sum(weights[cells] * error_derivative[cells] ** 2)))
        rows.append(
            {
                "region": region,
                "max": float(np.max(np.abs(sample_error[cells]))),
                "l2": math.sqrt(float(np.sum(weights[cells] * error[cells] ** 2))),
                "h1": h1,
                "weighted": layer.weight * h1,
                "x1_deriv": float(np.max(distance[cells] * derivative_error[cells])),
                "x2_deriv": float(np.max(distance[cells] ** 2 * derivative_error[cells])),
            }
        )
    return pd.DataFrame(rows)


# Norms whose interpolation orders are fitted, in table order.
STUDY_NORMS = ("max", "l2", "h1", "weighted")


def predicted_orders(k: int) -> dict:
    """
    Orders the interpolation bounds give on a suitable layer-adapted mesh,
    measured against that mesh's scale: k+1 in the max and L2 norms, k in the
    weighted H1 seminorm. The plain H1 seminorm has no eps-uniform order.
    """
    return {"max": k + 1.0, "l2": k + 1.0, "h1": math.nan, "weighted": float(k)}


@dataclass(frozen=True, eq=False)
class InterpStudy:
    """
    Attributes:
        errors: one row per (N, region) as returned by interp_error_study.
        orders: one row per (region, norm) with the observed and predicted order.
    """

    errors: pd.DataFrame
    orders: pd.DataFrame

    def order(self, region: str, norm: str) -> float:
        rows = self.orders[(self.orders["region"] == region) & (self.orders["norm"] == norm)]
        return float(rows["observed"].iloc[0])


def interp_convergence_study(
    layer,
    mesh_factory: Callable[[int], Mesh],
    k: int,
    Ns: Sequence[int],
    scales: Sequence[float] | None = None,
) -> InterpStudy:
    """
    Runs interp_error_study over an N sweep and fits the order of every norm
    in every region against ``scales`` (plain_scale(Ns) by default).
    """
    Ns = [int(N) for N in Ns]
    scales = plain_scale(Ns) if scales is None else np.asarray(scales, dtype=float)
    if len(scales) != len(Ns):
        raise ValueError(f"Need one scale per N, got {len(scales)} scales for {len(Ns)} values of N")

    frames = []
    for N in Ns:
        frame = interp_error_study(layer, mesh_factory(N), k)
        frame.insert(0, "N", N)
        frames.append(frame)
    errors = pd.concat(frames, ignore_index=True)

    predicted = predicted_orders(k)
    rows = []
    for region in dict.fromkeys(errors["region"]):
        by_n = errors[errors["region"] == region].set_index("N").reindex(Ns)
        for norm in STUDY_NORMS:
            rows.append(
                {
                    "region": region,
                    "norm": norm,
                    "observed": fit_order(by_n[norm].to_numpy(), scales),
                    "predicted": predicted[norm],
                }
            )
    orders = pd.DataFrame(rows, columns=["region", "norm", "observed", "predicted"])
    logger.info(f"Interpolation orders of {type(layer).__name__} for k={k}:\n{orders.to_string(index=False)}")
    return InterpStudy(errors, orders)
