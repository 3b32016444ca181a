"""
Continuous piecewise polynomial finite elements on 1D meshes.

The space V_N of order k has Lagrange nodes at the mesh points and k-1
interior nodes per cell (Gauss-Lobatto or equidistant). Interior nodes are
numbered cell by cell, so the stiffness matrix is banded with half-bandwidth
k. Linear problems are solved by one banded LU; semilinear problems by
Newton's method with Armijo backtracking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import lapack

from layer_fem.errors import (
    AssemblyError,
    ExprDomainError,
    InterpolationError,
    LineSearchError,
    NewtonError,
    SingularSystemError,
)
from layer_fem.mesh import Mesh
from layer_fem.problem import AffineLift, BoundaryValueProblem, homogenize

logger = logging.getLogger(__name__)

# Node rules for the local Lagrange basis.
GAUSS_LOBATTO = "gauss-lobatto"
EQUIDISTANT = "uniform"

# Newton defaults.
NEWTON_TOLERANCE = 1e-10
NEWTON_MAX_ITERATIONS = 50
ARMIJO_SLOPE = 1e-4
MAX_HALVINGS = 30


def reference_nodes(order: int, rule: str = GAUSS_LOBATTO) -> np.ndarray:
    """Local nodes on [-1, 1], endpoints included."""
    if order < 1:
        raise ValueError(f"Polynomial order must be at least 1, got {order}")
    if rule == EQUIDISTANT or order == 1:
        return np.linspace(-1.0, 1.0, order + 1)
    if rule == GAUSS_LOBATTO:
        interior = np.sort(legendre.Legendre.basis(order).deriv().roots().real)
        return np.concatenate([[-1.0], interior, [1.0]])
    raise ValueError(f"Unknown node rule '{rule}'")


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    differences = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(differences, 1.0)
    return 1.0 / np.prod(differences, axis=1)


def lagrange_basis(nodes: np.ndarray, weights: np.ndarray, xi) -> tuple[np.ndarray, np.ndarray]:
    """
    Values and first derivatives of the Lagrange basis at points xi.

    Uses l_j(xi) = w_j prod_{m != j} (xi - x_m) with barycentric weights w_j.
    Points that coincide with a node get the exact unit vector.

    Returns:
        tuple: arrays of shape (len(xi), len(nodes)).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    size = nodes.size
    differences = xi[:, None] - nodes[None, :]
    values = np.empty((xi.size, size))
    derivatives = np.zeros((xi.size, size))
    for j in range(size):
        others = [m for m in range(size) if m != j]
        values[:, j] = weights[j] * np.prod(differences[:, others], axis=1)
        for m in others:
            rest = [n for n in others if n != m]
            derivatives[:, j] += weights[j] * np.prod(differences[:, rest], axis=1)

    hits = differences == 0.0
    rows = np.flatnonzero(hits.any(axis=1))
    values[rows] = hits[rows].astype(float)
    return values, derivatives


@dataclass(frozen=True)
class CellQuadrature:
    """Gauss-Legendre points mapped onto every cell, with basis tables."""

    x: np.ndarray            # (cells, q) physical points
    weights: np.ndarray      # (cells, q) weights times Jacobian
    phi: np.ndarray          # (q, k+1) basis values
    dphi: np.ndarray         # (cells, q, k+1) physical derivatives


class FESpace:
    """
    Lagrange finite element space of order k on a mesh with zero boundary values.

    Global node numbering: node i*k + j is local node j of cell i; dofs are the
    interior nodes 1..N k - 1 shifted down by one.
    """

    def __init__(self, mesh: Mesh, order: int = 1, node_rule: str = GAUSS_LOBATTO):
        self.mesh = mesh
        self.order = order
        self.node_rule = node_rule
        self.local_nodes = reference_nodes(order, node_rule)
        self.local_weights = barycentric_weights(self.local_nodes)

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells * self.order + 1

    @property
    def n_dofs(self) -> int:
        return self.n_nodes - 2

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """Global node indices per cell, shape (cells, k+1)."""
        return self.order * np.arange(self.n_cells)[:, None] + np.arange(self.order + 1)[None, :]

    @cached_property
    def node_coordinates(self) -> np.ndarray:
        points = self.mesh.points
        widths = self.mesh.widths
        local = points[:-1, None] + widths[:, None] * (self.local_nodes[None, :] + 1.0) / 2.0
        local[:, 0] = points[:-1]
        local[:, -1] = points[1:]
        coordinates = np.empty(self.n_nodes)
        coordinates[:-1] = local[:, :-1].ravel()
        coordinates[-1] = points[-1]
        return coordinates

    def quadrature(self, points_per_cell: int | None = None) -> CellQuadrature:
        q = self.order + 2 if points_per_cell is None else points_per_cell
        xi, w = legendre.leggauss(q)
        widths = self.mesh.widths
        x = self.mesh.points[:-1, None] + widths[:, None] * (xi[None, :] + 1.0) / 2.0
        phi, dphi_ref = lagrange_basis(self.local_nodes, self.local_weights, xi)
        dphi = dphi_ref[None, :, :] * (2.0 / widths)[:, None, None]
        return CellQuadrature(x=x, weights=w[None, :] * widths[:, None] / 2.0, phi=phi, dphi=dphi)

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Cell index (left cell at shared nodes) and local coordinate for each point."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        points = self.mesh.points
        if np.any((x < points[0]) | (x > points[-1])):
            raise InterpolationError(f"Evaluation points outside the mesh [{points[0]}, {points[-1]}]")
        cells = np.clip(np.searchsorted(points, x, side="left") - 1, 0, self.n_cells - 1)
        widths = self.mesh.widths[cells]
        xi = 2.0 * (x - points[cells]) / widths - 1.0
        return cells, xi


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """
    A member of the space with given boundary values.

    ``coefficients`` holds the values at the interior nodes; the boundary nodes
    carry ``boundary_values``.
    """

    space: FESpace
    coefficients: np.ndarray
    boundary_values: tuple = (0.0, 0.0)

    @property
    def nodal_values(self) -> np.ndarray:
        return np.concatenate([[self.boundary_values[0]], self.coefficients, [self.boundary_values[1]]])

    def evaluate(self, x, derivative: int = 0):
        """
        Evaluates the function (derivative=0) or its derivative (derivative=1).

        At a shared mesh node the derivative is taken from the left cell.
        """
        if derivative not in (0, 1):
            raise ValueError("Only derivative orders 0 and 1 are supported")
        scalar = np.ndim(x) == 0
        cells, xi = self.space.locate(x)
        values, derivatives = lagrange_basis(self.space.local_nodes, self.space.local_weights, xi)
        local = self.nodal_values[self.space.cell_nodes[cells]]
        if derivative == 0:
            result = np.sum(local * values, axis=1)
        else:
            result = np.sum(local * derivatives, axis=1) * 2.0 / self.space.mesh.widths[cells]
        return float(result[0]) if scalar else result

    def __call__(self, x):
        return self.evaluate(x)

    def with_lift(self, lift: AffineLift) -> "DiscreteFunction":
        """Adds an affine function, which the space represents exactly."""
        interior = self.space.node_coordinates[1:-1]
        return DiscreteFunction(
            self.space,
            self.coefficients + lift(interior),
            (self.boundary_values[0] + lift.nu_left, self.boundary_values[1] + lift.nu_right),
        )


def interpolate(g: Callable, space: FESpace) -> DiscreteFunction:
    """
    Nodal interpolant of g, which must accept numpy arrays. Boundary values are
    taken from g.

    Raises:
        InterpolationError: If g fails or returns a non-finite value at some node.
    """
    nodes = space.node_coordinates
    try:
        values = np.broadcast_to(np.asarray(g(nodes), dtype=float), nodes.shape).copy()
    except Exception as e:
        raise InterpolationError(f"Interpolated function failed on the nodes: {e}") from e
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise InterpolationError(f"Interpolated function is not finite at node x={nodes[bad[0]]!r}")
    return DiscreteFunction(space, values[1:-1], (float(values[0]), float(values[-1])))


def evaluate(u: DiscreteFunction, x, derivative: int = 0):
    return u.evaluate(x, derivative)


# ---------------------------------------------------------------------------
# Banded systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BandedSystem:
    """
    Matrix in LAPACK band storage, ab[upper + i - j, j] = A[i, j], with equal
    lower and upper bandwidths, plus a right-hand side.
    """

    ab: np.ndarray
    bandwidth: int
    rhs: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return self.ab.shape[1]

    def dense(self) -> np.ndarray:
        n, k = self.size, self.bandwidth
        matrix = np.zeros((n, n))
        for offset in range(-k, k + 1):
            columns = np.arange(max(0, -offset), min(n, n - offset))
            matrix[columns + offset, columns] = self.ab[k + offset, columns]
        return matrix

    def matvec(self, vector: np.ndarray) -> np.ndarray:
        n, k = self.size, self.bandwidth
        result = np.zeros(n)
        for offset in range(-k, k + 1):
            columns = np.arange(max(0, -offset), min(n, n - offset))
            result[columns + offset] += self.ab[k + offset, columns] * vector[columns]
        return result


def _scatter_matrix(space: FESpace, local: np.ndarray) -> np.ndarray:
    k = space.order
    n = space.n_dofs
    dofs = space.cell_nodes - 1
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    valid = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
    ab = np.zeros((2 * k + 1, n))
    np.add.at(ab, (k + rows[valid] - cols[valid], cols[valid]), local[valid])
    return ab


def _scatter_vector(space: FESpace, local: np.ndarray) -> np.ndarray:
    n = space.n_dofs
    dofs = space.cell_nodes - 1
    valid = (dofs >= 0) & (dofs < n)
    vector = np.zeros(n)
    np.add.at(vector, dofs[valid], local[valid])
    return vector


def _local_operator(quad: CellQuadrature, eps: float, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Cell matrices of eps (u', v') + (b u', v) + (c u, v); row = test, column = trial."""
    w = quad.weights
    diffusion = eps * np.einsum("cq,cqi,cqj->cij", w, quad.dphi, quad.dphi)
    convection = np.einsum("cq,cqj,qi->cij", w * b, quad.dphi, quad.phi)
    reaction = np.einsum("cq,qj,qi->cij", w * c, quad.phi, quad.phi)
    return diffusion + convection + reaction


def _coefficient_values(problem: BoundaryValueProblem, e, quad: CellQuadrature, u=None):
    try:
        return np.broadcast_to(problem.evaluate(e, quad.x, u), quad.x.shape)
    except ExprDomainError as error:
        cell = error.index // quad.x.shape[1] if error.index is not None else -1
        raise AssemblyError(cell, error) from error


def assemble_linear(space: FESpace, problem: BoundaryValueProblem, quadrature_points: int | None = None) -> BandedSystem:
    """
    Assembles the Galerkin system for a linear problem with zero boundary values.

    a(u, v) = eps (u', v') + (b u', v) + (c u, v) and load (rhs, v), both by
    Gauss-Legendre quadrature with k+2 points per cell unless specified.

    Raises:
        AssemblyError: If a coefficient cannot be evaluated, naming the cell.
    """
    quad = space.quadrature(quadrature_points)
    b = _coefficient_values(problem, problem.b, quad)
    c = _coefficient_values(problem, problem.c, quad)
    f = _coefficient_values(problem, problem.rhs, quad)
    local = _local_operator(quad, problem.eps, b, c)
    load = np.einsum("cq,qi->ci", quad.weights * f, quad.phi)
    return BandedSystem(_scatter_matrix(space, local), space.order, _scatter_vector(space, load))


def solve_banded(system: BandedSystem) -> np.ndarray:
    """
    Solves the banded system by LU factorization with partial pivoting.

    Raises:
        SingularSystemError: If a pivot vanishes, naming the dof.
    """
    k = system.bandwidth
    n = system.size
    ab = np.zeros((3 * k + 1, n))
    ab[k:, :] = system.ab
    lu, pivots, solution, info = lapack.dgbsv(k, k, ab, np.asarray(system.rhs, dtype=float))
    if info > 0:
        raise SingularSystemError(int(info) - 1)
    if info < 0:
        raise ValueError(f"Illegal argument {-info} passed to the banded solver")

    scale = np.max(np.abs(system.ab))
    diagonal = np.abs(lu[2 * k, :])
    tiny = np.flatnonzero(diagonal <= np.finfo(float).eps * scale)
    if tiny.size:
        raise SingularSystemError(int(tiny[0]))
    return solution


def solve_linear(space: FESpace, problem: BoundaryValueProblem, quadrature_points: int | None = None) -> DiscreteFunction:
    """Solves a linear problem, including non-homogeneous boundary values."""
    homogeneous = homogenize(problem)
    system = assemble_linear(space, homogeneous.problem, quadrature_points)
    coefficients = solve_banded(system)
    return DiscreteFunction(space, coefficients).with_lift(homogeneous.lift)


# ---------------------------------------------------------------------------
# Newton's method
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NewtonStep:
    iteration: int
    residual_norm: float
    step_length: float


@dataclass(frozen=True, eq=False)
class NewtonResult:
    solution: DiscreteFunction
    trace: tuple
    converged: bool = True

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1


class _NonlinearOperator:
    """Residual and Jacobian of the Galerkin equations for a homogeneous problem."""

    def __init__(self, space, problem, quadrature_points=None):
        self.space = space
        self.problem = problem
        self.quad = space.quadrature(quadrature_points)
        self.b = _coefficient_values(problem, problem.b, self.quad)

    def _state(self, coefficients):
        nodal = np.concatenate([[0.0], coefficients, [0.0]])[self.space.cell_nodes]
        u = np.einsum("ci,qi->cq", nodal, self.quad.phi)
        du = np.einsum("ci,cqi->cq", nodal, self.quad.dphi)
        return u, du

    def residual(self, coefficients):
        u, du = self._state(coefficients)
        f = _coefficient_values(self.problem, self.problem.reaction, self.quad, u)
        w = self.quad.weights
        local = (
            self.problem.eps * np.einsum("cq,cqi->ci", w * du, self.quad.dphi)
            + np.einsum("cq,qi->ci", w * (self.b * du + f), self.quad.phi)
        )
        return _scatter_vector(self.space, local)

    def jacobian(self, coefficients):
        u, _ = self._state(coefficients)
        f_u = _coefficient_values(self.problem, self.problem.reaction_du, self.quad, u)
        local = _local_operator(self.quad, self.problem.eps, self.b, f_u)
        return BandedSystem(_scatter_matrix(self.space, local), self.space.order)


def solve_semilinear(
    space: FESpace,
    problem: BoundaryValueProblem,
    initial: DiscreteFunction | None = None,
    tol: float = NEWTON_TOLERANCE,
    max_iter: int = NEWTON_MAX_ITERATIONS,
    damping: str = "armijo",
    quadrature_points: int | None = None,
) -> NewtonResult:
    """
    Newton's method for -eps u'' + b u' + f(x, u) = 0.

    Stops when ||R(U)||_2 <= tol (1 + ||R(U_0)||_2). With damping='armijo' the
    step length is halved (at most 30 times) until
    ||R(U + t dU)|| <= (1 - 1e-4 t) ||R(U)||; damping='none' always takes the
    full step. Linear problems converge in one step.

    Args:
        space (FESpace): Discrete space.
        problem (BoundaryValueProblem): Linear or semilinear problem; boundary
            values are handled by homogenization.
        initial (DiscreteFunction, optional): Starting guess, zero by default.
        tol (float): Relative residual tolerance.
        max_iter (int): Maximum number of Newton steps.
        damping (str): 'armijo' or 'none'.

    Returns:
        NewtonResult: solution and iteration trace.

    Raises:
        NewtonError: If max_iter is reached; the discrete problem is uniquely
            solvable under the standing assumptions, so this indicates a
            violated assumption or a too loose tolerance.
        LineSearchError: If the line search exhausts its halvings.
    """
    if damping not in ("armijo", "none"):
        raise ValueError(f"Unknown damping policy '{damping}'")
    homogeneous = homogenize(problem)
    lift = homogeneous.lift
    operator = _NonlinearOperator(space, homogeneous.problem, quadrature_points)

    if initial is None:
        coefficients = np.zeros(space.n_dofs)
    else:
        coefficients = initial.coefficients - lift(space.node_coordinates[1:-1])

    residual = operator.residual(coefficients)
    norm = float(np.linalg.norm(residual))
    threshold = tol * (1.0 + norm)
    trace = [NewtonStep(0, norm, 0.0)]
    logger.info(f"Newton start: |R| = {norm:.3e}")

    iteration = 0
    while norm > threshold:
        if iteration >= max_iter:
            raise NewtonError(
                f"Newton did not converge in {max_iter} iterations (|R| = {norm:.3e}); "
                f"check the coercivity assumptions, which guarantee a unique discrete solution",
                trace,
            )
        iteration += 1
        jacobian = operator.jacobian(coefficients)
        step = solve_banded(BandedSystem(jacobian.ab, jacobian.bandwidth, -residual))

        length = 1.0
        trial = coefficients + step
        trial_residual = operator.residual(trial)
        trial_norm = float(np.linalg.norm(trial_residual))
        if damping == "armijo":
            halvings = 0
            while trial_norm > (1.0 - ARMIJO_SLOPE * length) * norm:
                if halvings == MAX_HALVINGS:
                    trace.append(NewtonStep(iteration, trial_norm, length))
                    raise LineSearchError(f"Line search failed after {MAX_HALVINGS} halvings at iteration {iteration}", trace)
                length /= 2.0
                halvings += 1
                trial = coefficients + length * step
                trial_residual = operator.residual(trial)
                trial_norm = float(np.linalg.norm(trial_residual))

        coefficients, residual, norm = trial, trial_residual, trial_norm
        trace.append(NewtonStep(iteration, norm, length))
        logger.info(f"Newton iteration {iteration}: |R| = {norm:.3e}, step = {length:g}")

    solution = DiscreteFunction(space, coefficients).with_lift(lift)
    return NewtonResult(solution, tuple(trace))


def solve(space: FESpace, problem: BoundaryValueProblem, **options) -> DiscreteFunction:
    """Solves a linear problem directly and a semilinear one by Newton's method."""
    if problem.is_linear:
        return solve_linear(space, problem, options.get("quadrature_points"))
    return solve_semilinear(space, problem, **options).solution
