"""
Boundary value problems -eps u'' + b u' + f(x, u) = 0 on [left, right] and
their layer structure.

A linear problem is the special case f(x, u) = c(x) u - rhs(x). This module
checks the standing coercivity assumptions, locates the turning points of b,
classifies boundary and interior layers, evaluates the pointwise a priori
bound for derivatives and shifts non-homogeneous boundary data onto the
right-hand side.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from layer_fem import expr
from layer_fem.errors import BoundCaseError, ClassificationAmbiguityError, ProblemError
from layer_fem.expr import Expr, Num, Var

logger = logging.getLogger(__name__)

# Tolerances for locating and classifying roots of b.
ROOT_TOLERANCE = 1e-12
DERIVATIVE_TOLERANCE = 1e-10
AMBIGUOUS_DERIVATIVE = 1e-6
SCAN_POINTS = 10_000

# Turning point and boundary kinds.
INTERIOR_ATTRACTIVE = "interior-attractive"
INTERIOR_REPULSIVE = "interior-repulsive"
INTERIOR_MULTIPLE = "interior-multiple"
BOUNDARY_ATTRACTIVE = "boundary-attractive"
BOUNDARY_REPULSIVE = "boundary-repulsive"
BOUNDARY_MULTIPLE = "boundary-multiple"
OUTFLOW_BOUNDARY = "outflow-boundary"
INFLOW_BOUNDARY = "inflow-boundary"

# Exponential layer widths.
EPS_WIDTH = "eps"
SQRT_EPS_WIDTH = "sqrt_eps"


@dataclass(frozen=True)
class BoundaryValueProblem:
    """
    A singularly perturbed problem on [left, right].

    Exactly one of ``f`` (semilinear, an expression in x and u) or the pair
    ``c``/``rhs`` (linear) must be given. ``parameters`` binds additional named
    parameters used by the expressions; eps is always bound to ``eps``.
    """

    left: float
    right: float
    eps: float
    b: Expr
    c: Expr | None = None
    rhs: Expr | None = None
    f: Expr | None = None
    nu_left: float = 0.0
    nu_right: float = 0.0
    gamma: float | None = None
    gamma_tilde: float | None = None
    parameters: Mapping[str, float] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        if not self.left < self.right:
            raise ProblemError(f"Interval must satisfy left < right, got [{self.left}, {self.right}]")
        if not self.eps > 0.0:
            raise ProblemError(f"eps must be positive, got {self.eps}")
        if self.f is None and (self.c is None or self.rhs is None):
            raise ProblemError("A linear problem needs both c and rhs")
        if self.f is not None and (self.c is not None or self.rhs is not None):
            raise ProblemError("Give either a semilinear f(x, u) or the linear pair c, rhs, not both")
        if "u" in expr.free_symbols(self.b):
            raise ProblemError("The convection coefficient b must not depend on u")

    @classmethod
    def from_strings(cls, left, right, eps, b, c=None, rhs=None, f=None, parameters=None, **kwargs):
        """Builds a problem from expression strings."""
        parameters = dict(parameters or {})
        names = ("eps", *parameters)

        def parsed(source):
            return None if source is None else expr.parse(source, parameters=names)

        return cls(
            left=float(left),
            right=float(right),
            eps=float(eps),
            b=parsed(b),
            c=parsed(c),
            rhs=parsed(rhs),
            f=parsed(f),
            parameters=parameters,
            **kwargs,
        )

    @property
    def is_linear(self) -> bool:
        return self.f is None

    @cached_property
    def reaction(self) -> Expr:
        """The reaction term f(x, u); c u - rhs for linear problems."""
        if self.is_linear:
            return expr.sub(expr.mul(self.c, Var("u")), self.rhs)
        return self.f

    @cached_property
    def reaction_du(self) -> Expr:
        return expr.differentiate(self.reaction, "u")

    @cached_property
    def b_prime(self) -> Expr:
        return expr.differentiate(self.b, "x")

    @cached_property
    def b_second(self) -> Expr:
        return expr.differentiate(self.b_prime, "x")

    def bindings(self, x, u=None) -> dict:
        values = dict(self.parameters, eps=self.eps, x=x)
        if u is not None:
            values["u"] = u
        return values

    def evaluate(self, e: Expr, x, u=None):
        """Evaluates a coefficient expression with this problem's parameters bound."""
        return expr.evaluate(e, self.bindings(x, u))

    def with_eps(self, eps: float) -> "BoundaryValueProblem":
        return _replace(self, eps=eps)

    def to_mapping(self) -> dict:
        """Serializable description of the problem, inverse of ``from_mapping``."""
        data = {
            "name": self.name,
            "left": self.left,
            "right": self.right,
            "eps": self.eps,
            "b": str(self.b),
            "nu_left": self.nu_left,
            "nu_right": self.nu_right,
            "parameters": dict(self.parameters),
        }
        if self.is_linear:
            data.update(c=str(self.c), rhs=str(self.rhs))
        else:
            data["f"] = str(self.f)
        if self.gamma is not None:
            data["gamma"] = self.gamma
        if self.gamma_tilde is not None:
            data["gamma_tilde"] = self.gamma_tilde
        return data

    @classmethod
    def from_mapping(cls, data: Mapping) -> "BoundaryValueProblem":
        data = dict(data)
        return cls.from_strings(
            data.pop("left"),
            data.pop("right"),
            data.pop("eps"),
            data.pop("b"),
            c=data.pop("c", None),
            rhs=data.pop("rhs", None),
            f=data.pop("f", None),
            parameters=data.pop("parameters", None),
            **data,
        )


def _replace(problem, **changes):
    return dataclasses.replace(problem, **changes)


# ---------------------------------------------------------------------------
# Standing assumptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of check_assumptions.

    ``witnesses`` lists the grid points (x for linear problems, (x, u) pairs for
    semilinear ones) where a required positivity fails.
    """

    ok: bool
    min_c: float
    min_c_minus_half_bprime: float
    witnesses: tuple = ()
    u_bound: float | None = None


def inverse_monotone_bound(problem: BoundaryValueProblem, grid_size: int = 1001) -> float:
    """
    Bound M on |u| from inverse monotonicity: max{|nu_-|, |nu_+|, max |f(., 0)/c|}
    where c = d f/d u (x, 0).
    """
    x = np.linspace(problem.left, problem.right, grid_size)
    zeros = np.zeros_like(x)
    f0 = problem.evaluate(problem.reaction, x, zeros)
    c0 = problem.evaluate(problem.reaction_du, x, zeros)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(c0 > 0, np.abs(f0) / np.where(c0 > 0, c0, 1.0), 0.0)
    return float(max(abs(problem.nu_left), abs(problem.nu_right), float(np.max(ratio))))


def check_assumptions(problem: BoundaryValueProblem, grid_size: int = 1001, u_grid_size: int = 41, u_range=None) -> AssumptionReport:
    """
    Checks c >= gamma > 0 and c - b'/2 >= gamma_tilde > 0 on a sampling grid.

    For semilinear problems c is d f/d u, sampled on the grid x [-M, M] where M is
    the inverse-monotonicity bound unless ``u_range`` is given. When the problem
    declares gamma or gamma_tilde, the minima are compared against them;
    otherwise strict positivity is required.

    Returns:
        AssumptionReport: minima, pass/fail flag and failing witnesses.
    """
    x = np.linspace(problem.left, problem.right, grid_size)
    if problem.is_linear:
        points_x, points_u = x, None
        u_bound = None
    else:
        u_bound = inverse_monotone_bound(problem, grid_size) if u_range is None else None
        lower, upper = (-u_bound, u_bound) if u_range is None else u_range
        u = np.linspace(lower, upper, u_grid_size)
        points_x, points_u = (grid.ravel() for grid in np.meshgrid(x, u, indexing="ij"))

    if problem.is_linear:
        c_values = problem.evaluate(problem.c, points_x)
    else:
        c_values = problem.evaluate(problem.reaction_du, points_x, points_u)
    b_prime = problem.evaluate(problem.b_prime, points_x)
    margin = c_values - 0.5 * b_prime

    gamma = problem.gamma if problem.gamma is not None else 0.0
    gamma_tilde = problem.gamma_tilde if problem.gamma_tilde is not None else 0.0
    failed_c = c_values < gamma if problem.gamma is not None else c_values <= 0.0
    failed_margin = margin < gamma_tilde if problem.gamma_tilde is not None else margin <= 0.0
    failed = failed_c | failed_margin

    if points_u is None:
        witnesses = tuple(float(v) for v in points_x[failed])
    else:
        witnesses = tuple((float(a), float(b)) for a, b in zip(points_x[failed], points_u[failed]))

    report = AssumptionReport(
        ok=not bool(np.any(failed)),
        min_c=float(np.min(c_values)),
        min_c_minus_half_bprime=float(np.min(margin)),
        witnesses=witnesses,
        u_bound=u_bound,
    )
    if not report.ok:
        logger.warning(
            f"Standing assumptions fail at {len(witnesses)} grid points "
            f"(min c = {report.min_c:.6g}, min c - b'/2 = {report.min_c_minus_half_bprime:.6g})"
        )
    return report


# ---------------------------------------------------------------------------
# Turning points and layers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TurningPoint:
    """
    A root of b, or a boundary point described by its flow direction.

    For boundary records of kind outflow/inflow, b(location) is nonzero;
    for every other kind |b(location)| is within ROOT_TOLERANCE.
    ``lambda_cap`` is c/|b'| where b' is nonzero.
    """

    location: float
    kind: str
    b: float
    b_prime: float
    c: float
    lambda_cap: float | None = None
    b_second: float | None = None

    @property
    def is_boundary(self) -> bool:
        return self.kind.startswith("boundary") or self.kind.endswith("-boundary")


@dataclass(frozen=True)
class ExpLayer:
    """An exponential boundary layer of width eps (outflow) or sqrt(eps) (multiple turning point)."""

    location: float
    width: str
    beta: float

    def eps_tilde(self, eps: float) -> float:
        return eps if self.width == EPS_WIDTH else math.sqrt(eps)


@dataclass(frozen=True)
class PowerLayer:
    """A power-type layer at a simple turning point with grading exponent lam in [0, lambda_cap)."""

    location: float
    lambda_cap: float
    lam: float


@dataclass(frozen=True)
class LayerMap:
    """
    Layer structure of a problem for a given derivative order k.

    Attributes:
        exp_layers: boundary points with exponential layers.
        boundary_power: boundary points that are simple turning points.
        interior: attractive interior turning points (interior layers).
        interior_k: attractive interior points with -(k+1) b' >= c.
        turning_points: every root of b found or declared.
        boundary: records for both endpoints.
        delta: distance from each classified point to the other layer locations.
        delta_k: same as delta, measured against interior_k only.
        typical_width: width of the boundary layer at each boundary point.
    """

    left: float
    right: float
    k: int
    eps: float
    exp_layers: tuple = ()
    boundary_power: tuple = ()
    interior: tuple = ()
    interior_k: tuple = ()
    turning_points: tuple = ()
    boundary: tuple = ()
    delta: Mapping[float, float] = field(default_factory=dict)
    delta_k: Mapping[float, float] = field(default_factory=dict)
    typical_width: Mapping[float, float] = field(default_factory=dict)

    @classmethod
    def empty(cls, left, right, k=0, eps=1.0):
        return cls(left=left, right=right, k=k, eps=eps)

    @property
    def is_empty(self) -> bool:
        return not (self.exp_layers or self.boundary_power or self.interior)

    def power_points(self) -> tuple:
        """Boundary and interior power layers that need graded meshes for this k."""
        return tuple(sorted(self.boundary_power + self.interior_k, key=lambda layer: layer.location))


def find_roots(problem: BoundaryValueProblem, scan_points: int = SCAN_POINTS, tol: float = ROOT_TOLERANCE) -> list[float]:
    """
    Locates sign changes of b by scanning a uniform grid and refining each
    bracket by bisection. Grid points where b vanishes exactly are roots too.
    Roots of even multiplicity without a sign change are not found.
    """
    x = np.linspace(problem.left, problem.right, scan_points + 1)
    values = problem.evaluate(problem.b, x)

    def b_at(point):
        return problem.evaluate(problem.b, point)

    roots = [float(point) for point, value in zip(x, values) if abs(value) <= tol]
    brackets = np.flatnonzero(values[:-1] * values[1:] < 0)
    for i in brackets:
        roots.append(float(optimize.bisect(b_at, x[i], x[i + 1], xtol=tol)))
    roots.sort()

    # Merge duplicates found both on the grid and by bisection.
    merged = []
    for root in roots:
        if not merged or root - merged[-1] > 10 * tol:
            merged.append(root)
    return merged


def _classify_boundary(problem, location, normal):
    b = problem.evaluate(problem.b, location)
    b_prime = problem.evaluate(problem.b_prime, location)
    c = problem.evaluate(problem.reaction_du, location, 0.0)
    if abs(b) > ROOT_TOLERANCE:
        kind = OUTFLOW_BOUNDARY if b * normal > 0 else INFLOW_BOUNDARY
        return TurningPoint(location, kind, b, b_prime, c)
    if abs(b_prime) <= DERIVATIVE_TOLERANCE:
        try:
            b_second = problem.evaluate(problem.b_second, location)
        except Exception as e:
            raise ClassificationAmbiguityError(location, f"b' vanishes and b'' cannot be evaluated ({e})")
        return TurningPoint(location, BOUNDARY_MULTIPLE, b, b_prime, c, b_second=b_second)
    if abs(b_prime) <= AMBIGUOUS_DERIVATIVE:
        raise ClassificationAmbiguityError(location, f"|b'| = {abs(b_prime):.3g} is too small to decide simple vs multiple root")
    kind = BOUNDARY_ATTRACTIVE if b_prime < 0 else BOUNDARY_REPULSIVE
    return TurningPoint(location, kind, b, b_prime, c, lambda_cap=c / abs(b_prime))


def _classify_interior(problem, location):
    b = problem.evaluate(problem.b, location)
    b_prime = problem.evaluate(problem.b_prime, location)
    c = problem.evaluate(problem.reaction_du, location, 0.0)
    if abs(b_prime) <= DERIVATIVE_TOLERANCE:
        return TurningPoint(location, INTERIOR_MULTIPLE, b, b_prime, c)
    kind = INTERIOR_ATTRACTIVE if b_prime < 0 else INTERIOR_REPULSIVE
    return TurningPoint(location, kind, b, b_prime, c, lambda_cap=c / abs(b_prime))


def typical_layer_width(record: TurningPoint, eps: float) -> float:
    """Width of the layer at a boundary point: eps/|b| ln(1/eps), sqrt(eps)/sqrt(c) ln(1/sqrt(eps)) or 0."""
    if record.kind == OUTFLOW_BOUNDARY:
        return eps / abs(record.b) * max(math.log(1.0 / eps), 0.0)
    if record.kind == BOUNDARY_MULTIPLE and record.c > 0:
        return math.sqrt(eps) / math.sqrt(record.c) * max(math.log(1.0 / math.sqrt(eps)), 0.0)
    return 0.0


def _distance(point, others):
    distances = [abs(point - other) for other in others if other != point]
    return min(distances) if distances else math.inf


def classify_layers(
    problem: BoundaryValueProblem,
    k: int,
    declared_roots: Sequence[float] | None = None,
    mu: float = 0.9,
    scan_points: int = SCAN_POINTS,
) -> LayerMap:
    """
    Classifies the layers of ``problem`` for derivative order ``k``.

    Roots of b are found by scanning unless ``declared_roots`` is given (needed
    for roots without a sign change). Each endpoint is outflow (exponential
    layer of width eps), inflow (no layer), a simple turning point (power layer)
    or a multiple turning point (exponential layer of width sqrt(eps), requires
    c > 0 there). Interior attractive points carry interior layers; those with
    -(k+1) b' >= c need graded meshes at order k.

    Args:
        problem (BoundaryValueProblem): The problem to classify.
        k (int): Derivative order, k >= 0.
        declared_roots (sequence of float, optional): Roots of b to use instead of scanning.
        mu (float): Fraction of the lambda cap used as the default grading exponent.
        scan_points (int): Grid size for the root scan.

    Raises:
        ClassificationAmbiguityError: If a boundary root cannot be classified.
    """
    if k < 0:
        raise ProblemError(f"Derivative order k must be nonnegative, got {k}")
    if not 0.0 < mu < 1.0:
        raise ProblemError(f"mu must lie in (0, 1), got {mu}")

    left_record = _classify_boundary(problem, problem.left, -1.0)
    right_record = _classify_boundary(problem, problem.right, 1.0)
    boundary = (left_record, right_record)

    roots = find_roots(problem, scan_points) if declared_roots is None else sorted(float(r) for r in declared_roots)
    span = problem.right - problem.left
    interior_roots = [r for r in roots if problem.left + 1e-9 * span < r < problem.right - 1e-9 * span]
    interior_records = tuple(_classify_interior(problem, r) for r in interior_roots)

    exp_layers = []
    boundary_power = []
    for record in boundary:
        if record.kind == OUTFLOW_BOUNDARY:
            exp_layers.append(ExpLayer(record.location, EPS_WIDTH, abs(record.b)))
        elif record.kind == BOUNDARY_MULTIPLE:
            if record.c <= 0:
                raise ClassificationAmbiguityError(record.location, "multiple turning point with c <= 0")
            exp_layers.append(ExpLayer(record.location, SQRT_EPS_WIDTH, math.sqrt(record.c)))
        elif record.kind in (BOUNDARY_ATTRACTIVE, BOUNDARY_REPULSIVE):
            # Power layers at the boundary use the strongest grading.
            boundary_power.append(PowerLayer(record.location, record.lambda_cap, 0.0))

    interior = []
    interior_k = []
    for record in interior_records:
        if record.kind != INTERIOR_ATTRACTIVE:
            continue
        layer = PowerLayer(record.location, record.lambda_cap, mu * record.lambda_cap)
        interior.append(layer)
        if -(k + 1) * record.b_prime >= record.c:
            interior_k.append(layer)

    # Separation from the other endpoint and the interior layers.
    interior_locations = [layer.location for layer in interior]
    interior_k_locations = [layer.location for layer in interior_k]
    delta = {}
    delta_k = {}
    for record, other in ((left_record, problem.right), (right_record, problem.left)):
        delta[record.location] = _distance(record.location, [other, *interior_locations])
        delta_k[record.location] = _distance(record.location, [other, *interior_k_locations])
    for location in interior_locations:
        delta[location] = _distance(location, [problem.left, problem.right, *interior_locations])
    for location in interior_k_locations:
        delta_k[location] = _distance(location, [problem.left, problem.right, *interior_k_locations])

    typical_width = {record.location: typical_layer_width(record, problem.eps) for record in boundary}
    turning_points = tuple(
        sorted(
            [record for record in boundary if record.kind not in (OUTFLOW_BOUNDARY, INFLOW_BOUNDARY)] + list(interior_records),
            key=lambda record: record.location,
        )
    )

    layer_map = LayerMap(
        left=problem.left,
        right=problem.right,
        k=k,
        eps=problem.eps,
        exp_layers=tuple(exp_layers),
        boundary_power=tuple(boundary_power),
        interior=tuple(interior),
        interior_k=tuple(interior_k),
        turning_points=turning_points,
        boundary=boundary,
        delta=delta,
        delta_k=delta_k,
        typical_width=typical_width,
    )
    logger.info(
        f"Classified {problem.name}: {len(exp_layers)} exponential, {len(boundary_power)} boundary power, "
        f"{len(interior)} interior layer(s) for k={k}"
    )
    return layer_map


def describe_layers(layer_map: LayerMap) -> str:
    """One-line human-readable summary of a layer map."""
    parts = []
    for layer in layer_map.boundary_power:
        parts.append(f"power layer at {layer.location:g}")
    for layer in layer_map.exp_layers:
        width = "ε" if layer.width == EPS_WIDTH else "√ε"
        parts.append(f"exponential ({width}-width, β={layer.beta:g}) at {layer.location:g}")
    for layer in layer_map.interior:
        graded = " (graded for k)" if layer in layer_map.interior_k else ""
        parts.append(f"interior layer at {layer.location:g}, λ-cap={layer.lambda_cap:g}{graded}")
    return "; ".join(parts) if parts else "no layers"


# ---------------------------------------------------------------------------
# A priori bounds
# ---------------------------------------------------------------------------

def layer_function(distance, k, a, b_prime, c, eps, lam):
    """
    Bound for the k-th derivative near a boundary point at the given distance.

    ``a`` is b at the point oriented so that a < 0 means outflow, ``b_prime`` is
    b' at the point and ``c`` the reaction coefficient there. Cases are taken in
    order: outflow; simple root with b' > 0; root with 0 <= -k b' < c; root with
    b' < 0; inflow.

    Raises:
        BoundCaseError: If no case applies (a root with -k b' >= c and b' >= 0, or c + b' <= 0).
    """
    distance = np.asarray(distance, dtype=float)
    if a < -ROOT_TOLERANCE:
        return eps ** (-k) * np.exp(a * distance / eps)
    if a > ROOT_TOLERANCE:
        return np.zeros_like(distance)
    if b_prime > DERIVATIVE_TOLERANCE:
        return eps ** (lam / 2) * (math.sqrt(eps) + distance) ** (-lam - k)
    if 0.0 <= -k * b_prime < c and c + b_prime > 0:
        return eps ** (-k / 2) * np.exp(-math.sqrt(c + b_prime) * distance / math.sqrt(eps))
    if b_prime < -DERIVATIVE_TOLERANCE:
        return (math.sqrt(eps) + distance) ** (lam - k) + eps * (math.sqrt(eps) + distance) ** (-k - 2)
    raise BoundCaseError(f"No bound case applies for a={a}, b'={b_prime}, c={c}, k={k}")


def _boundary_arguments(record, layer_map, lambdas, mu):
    """Oriented distance sign, a and lambda for a boundary record."""
    at_left = record.location == layer_map.left
    a = record.b if at_left else -record.b
    cap = record.lambda_cap
    lam = lambdas.get(record.location, mu * cap if cap is not None else 0.0)
    return at_left, a, lam


def _check_lambdas(layer_map, lambdas):
    caps = {record.location: record.lambda_cap for record in layer_map.boundary if record.lambda_cap is not None}
    caps.update((layer.location, layer.lambda_cap) for layer in layer_map.interior)
    for location, lam in lambdas.items():
        if location not in caps:
            raise ProblemError(f"No simple turning point at {location:g} to take a grading exponent")
        if not 0.0 < lam < caps[location]:
            raise ProblemError(f"Grading exponent {lam:g} at {location:g} must lie in (0, {caps[location]:g})")


def a_priori_bound(
    x,
    k: int,
    layer_map: LayerMap,
    problem: BoundaryValueProblem,
    lambdas: Mapping[float, float] | None = None,
    mu: float = 0.9,
):
    """
    Pointwise bound 1 + phi_left + phi_right + sum over interior layers of
    (sqrt(eps) + |x - x_j|)^(lambda_j - k) for |u^(k)(x)| up to a constant.

    Boundary terms are included for the boundary records present in the layer
    map; an empty layer map gives the constant 1.

    Args:
        x (float or ndarray): Evaluation points.
        k (int): Derivative order.
        layer_map (LayerMap): Output of classify_layers.
        problem (BoundaryValueProblem): Supplies eps.
        lambdas (mapping, optional): Grading exponents per location; defaults to mu times the cap.
        mu (float): Fraction of the lambda cap used when ``lambdas`` has no entry.

    Raises:
        ProblemError: If a given lambda lies outside (0, c/|b'|) at its point.
    """
    lambdas = dict(lambdas or {})
    _check_lambdas(layer_map, lambdas)
    eps = problem.eps
    x = np.asarray(x, dtype=float)
    total = np.ones_like(x)
    for record in layer_map.boundary:
        at_left, a, lam = _boundary_arguments(record, layer_map, lambdas, mu)
        distance = x - layer_map.left if at_left else layer_map.right - x
        total = total + layer_function(distance, k, a, record.b_prime, record.c, eps, lam)
    for layer in layer_map.interior:
        lam = lambdas.get(layer.location, layer.lam)
        total = total + (math.sqrt(eps) + np.abs(x - layer.location)) ** (lam - k)
    return float(total) if total.ndim == 0 else total


def decomposition_bounds(
    x,
    k: int,
    layer_map: LayerMap,
    problem: BoundaryValueProblem,
    lambdas: Mapping[float, float] | None = None,
    mu: float = 0.9,
):
    """
    Bounds for the k-th derivatives of the smooth-plus-power part (S) and the
    exponential part (E) of the solution decomposition.

    Returns:
        tuple: (bound_S, bound_E) evaluated at x.
    """
    lambdas = dict(lambdas or {})
    _check_lambdas(layer_map, lambdas)
    eps = problem.eps
    x = np.asarray(x, dtype=float)
    bound_s = np.ones_like(x)
    bound_e = np.zeros_like(x)
    for record in layer_map.boundary:
        at_left, a, lam = _boundary_arguments(record, layer_map, lambdas, mu)
        distance = x - layer_map.left if at_left else layer_map.right - x
        if a < -ROOT_TOLERANCE:
            bound_e = bound_e + eps ** (-k) * np.exp(a * distance / eps)
        elif abs(a) <= ROOT_TOLERANCE:
            if record.b_prime > DERIVATIVE_TOLERANCE:
                bound_s = bound_s + eps ** (lam / 2) * (math.sqrt(eps) + distance) ** (-lam - k)
            elif record.b_prime < -DERIVATIVE_TOLERANCE:
                bound_s = bound_s + (math.sqrt(eps) + distance) ** (lam - k) + eps * (math.sqrt(eps) + distance) ** (-k - 2)
            elif record.c > 0:
                bound_e = bound_e + eps ** (-k / 2) * np.exp(-math.sqrt(record.c) * distance / math.sqrt(eps))
    for layer in layer_map.interior:
        lam = lambdas.get(layer.location, layer.lam)
        bound_s = bound_s + (math.sqrt(eps) + np.abs(x - layer.location)) ** (lam - k)
    if x.ndim == 0:
        return float(bound_s), float(bound_e)
    return bound_s, bound_e


# ---------------------------------------------------------------------------
# Boundary data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineLift:
    """The affine function with values nu_left at left and nu_right at right."""

    left: float
    right: float
    nu_left: float
    nu_right: float

    @property
    def slope(self) -> float:
        return (self.nu_right - self.nu_left) / (self.right - self.left)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        values = ((self.right - x) * self.nu_left + (x - self.left) * self.nu_right) / (self.right - self.left)
        return float(values) if values.ndim == 0 else values

    def as_expr(self) -> Expr:
        x = Var("x")
        numerator = expr.add(
            expr.mul(expr.sub(Num(self.right), x), Num(self.nu_left)),
            expr.mul(expr.sub(x, Num(self.left)), Num(self.nu_right)),
        )
        return expr.div(numerator, Num(self.right - self.left))

    @property
    def is_zero(self) -> bool:
        return self.nu_left == 0.0 and self.nu_right == 0.0


@dataclass(frozen=True)
class HomogenizedProblem:
    problem: BoundaryValueProblem
    lift: AffineLift


def homogenize(problem: BoundaryValueProblem) -> HomogenizedProblem:
    """
    Shifts the boundary values onto the right-hand side.

    With the affine lift w, the unknown v = u - w has zero boundary values and
    solves the problem with reaction f(x, v + w) + b w'. For linear problems the
    new right-hand side is rhs - b w' - c w.
    """
    lift = AffineLift(problem.left, problem.right, problem.nu_left, problem.nu_right)
    if lift.is_zero:
        return HomogenizedProblem(problem, lift)

    lift_expr = lift.as_expr()
    convection = expr.mul(problem.b, Num(lift.slope))
    if problem.is_linear:
        rhs = expr.sub(expr.sub(problem.rhs, convection), expr.mul(problem.c, lift_expr))
        shifted = _replace(problem, rhs=rhs, nu_left=0.0, nu_right=0.0)
    else:
        f = expr.add(expr.substitute(problem.f, "u", expr.add(Var("u"), lift_expr)), convection)
        shifted = _replace(problem, f=f, nu_left=0.0, nu_right=0.0)
    return HomogenizedProblem(shifted, lift)
