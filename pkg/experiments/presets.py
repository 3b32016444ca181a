"""
Named test problems and the meshes tailored to them.

All presets have a = 1 and homogeneous boundary values. The manufactured
presets have exact solution sin(pi x); their right-hand sides are generated
symbolically from it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

from layer_fem import expr
from layer_fem.errors import ConfigError
from layer_fem.expr import Var
from layer_fem.mesh import (
    LEFT,
    RIGHT,
    SHISHKIN,
    Mesh,
    compose_mesh,
    exponential_region,
    general_layer_mesh,
    sun_stynes_mesh,
    transition_point,
    uniform_mesh,
)
from layer_fem.problem import BoundaryValueProblem, classify_layers

logger = logging.getLogger(__name__)

MANUFACTURED_SOLUTION = "sin(pi*x)"


@dataclass(frozen=True)
class MeshOptions:
    N: int
    k: int
    rho: float
    generator: str = SHISHKIN
    mu: float = 0.9


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    left: float
    right: float
    b: str
    c: str | None = None
    rhs: str | None = None
    f: str | None = None
    gamma: float | None = None
    gamma_tilde: float | None = None
    exact: str | None = None
    mesh_builder: Callable | None = None

    def build_problem(self, eps: float) -> BoundaryValueProblem:
        return BoundaryValueProblem.from_strings(
            self.left,
            self.right,
            eps,
            self.b,
            c=self.c,
            rhs=self.rhs,
            f=self.f,
            gamma=self.gamma,
            gamma_tilde=self.gamma_tilde,
            name=self.name,
        )


def _require_divisible(N, divisor, name):
    if N % divisor:
        raise ConfigError(f"Preset mesh for {name} needs N divisible by {divisor}, got {N}")


def _uniform_fallback(problem, N, reason):
    mesh = uniform_mesh(N, (problem.left, problem.right))
    return Mesh(mesh.points, mesh.segments, dict(mesh.provenance, fallback=reason, preset=problem.name))


def _power_then_exponential(problem, options, eps_tilde, beta):
    """
    Sun-Stynes on [left, right - tau] toward left, S-type fine region at right.
    Uniform when tau exceeds half the interval.
    """
    N = options.N
    _require_divisible(N, 2, problem.name)
    tau = transition_point(eps_tilde, beta, options.rho, N)
    left, right = problem.left, problem.right
    if tau > 0.5 * (right - left):
        logger.warning(f"Transition point {tau:.6g} exceeds half the interval; using a uniform mesh")
        return _uniform_fallback(problem, N, "transition-overlap")
    graded = sun_stynes_mesh(problem.eps, 0.0, options.k, N // 2, LEFT, (left, right - tau))
    fine = exponential_region(eps_tilde, beta, options.rho, N, N // 2, options.generator, RIGHT, right)
    return compose_mesh([graded, fine], {"preset": problem.name, "N": N, "k": options.k, "rho": options.rho})


def repulsive_boundary_mesh(problem, options):
    beta = problem.evaluate(problem.b, problem.right)
    return _power_then_exponential(problem, options, problem.eps, beta)


def attractive_multiple_mesh(problem, options):
    beta = math.sqrt(problem.evaluate(problem.c, problem.right))
    return _power_then_exponential(problem, options, math.sqrt(problem.eps), beta)


def interior_layer_mesh(problem, options):
    """Graded toward -1 on [-1, -1/2], toward 0 on [-1/2, 0] and on [0, 1]."""
    N, k = options.N, options.k
    _require_divisible(N, 4, problem.name)
    slope = abs(problem.evaluate(problem.b_prime, 0.0))
    lam = options.mu * problem.evaluate(problem.c, 0.0) / slope
    if lam >= k + 1:
        # No grading needed at this order; use the strongest one.
        lam = 0.0
    eps = problem.eps
    pieces = [
        sun_stynes_mesh(eps, 0.0, k, N // 4, LEFT, (-1.0, -0.5)),
        sun_stynes_mesh(eps, lam, k, N // 4, RIGHT, (-0.5, 0.0)),
        sun_stynes_mesh(eps, lam, k, N // 2, LEFT, (0.0, 1.0)),
    ]
    return compose_mesh(pieces, {"preset": problem.name, "N": N, "k": k, "lambda": lam})


def two_layer_mesh(problem, options):
    """S-type regions at both ends with N/4 cells each, uniform in between."""
    N, rho = options.N, options.rho
    _require_divisible(N, 4, problem.name)
    eps = problem.eps
    beta_left = math.sqrt(problem.evaluate(problem.c, problem.left))
    beta_right = problem.evaluate(problem.b, problem.right)
    tau_left = transition_point(math.sqrt(eps), beta_left, rho, N)
    tau_right = transition_point(eps, beta_right, rho, N)
    if max(tau_left, tau_right) > 0.25 * (problem.right - problem.left):
        logger.warning(
            f"Transition points {tau_left:.6g}, {tau_right:.6g} exceed a quarter of the interval; "
            f"using a uniform mesh"
        )
        return _uniform_fallback(problem, N, "transition-overlap")
    pieces = [
        exponential_region(math.sqrt(eps), beta_left, rho, N, N // 4, options.generator, LEFT, problem.left),
        uniform_mesh(N // 2, (problem.left + tau_left, problem.right - tau_right)),
        exponential_region(eps, beta_right, rho, N, N // 4, options.generator, RIGHT, problem.right),
    ]
    return compose_mesh(pieces, {"preset": problem.name, "N": N, "rho": rho})


def _manufactured_terms(b):
    """Derivatives of the manufactured solution and -eps u'' + b u' as expressions."""
    solution = expr.parse(MANUFACTURED_SOLUTION)
    first = expr.differentiate(solution, "x")
    second = expr.differentiate(first, "x")
    operator = expr.add(expr.mul(expr.neg(Var("eps")), second), expr.mul(expr.parse(b), first))
    return solution, operator


def _manufactured_linear():
    b, c = "1 + x", "1"
    solution, operator = _manufactured_terms(b)
    rhs = expr.add(operator, expr.mul(expr.parse(c), solution))
    return Preset(
        name="manufactured-linear",
        description="b = 1 + x, c = 1, exact solution sin(pi x)",
        left=0.0,
        right=1.0,
        b=b,
        c=c,
        rhs=str(rhs),
        gamma=1.0,
        gamma_tilde=0.5,
        exact=MANUFACTURED_SOLUTION,
    )


def _manufactured_semilinear():
    b = "1 + x"
    solution, operator = _manufactured_terms(b)
    source = expr.add(expr.add(operator, solution), expr.power(solution, expr.Num(3.0)))
    f = expr.sub(expr.parse("u + u^3"), source)
    return Preset(
        name="manufactured-semilinear",
        description="b = 1 + x, f(x, u) = u + u^3 - g(x), exact solution sin(pi x)",
        left=0.0,
        right=1.0,
        b=b,
        f=str(f),
        gamma=1.0,
        gamma_tilde=0.5,
        exact=MANUFACTURED_SOLUTION,
    )


PRESETS = {
    preset.name: preset
    for preset in (
        Preset(
            name="rep-bou-tpp",
            description="repulsive boundary turning point at 0, outflow layer at 1",
            left=0.0,
            right=1.0,
            b="x",
            c="2",
            rhs="1",
            gamma=2.0,
            gamma_tilde=1.5,
            mesh_builder=repulsive_boundary_mesh,
        ),
        Preset(
            name="att-mult-bou-tpp",
            description="attractive boundary turning point at 0, multiple turning point at 1",
            left=0.0,
            right=1.0,
            b="-x*(1-x)^2",
            c="2+x",
            rhs="1",
            gamma=2.0,
            gamma_tilde=2.0,
            mesh_builder=attractive_multiple_mesh,
        ),
        Preset(
            name="int-bou-tpp",
            description="repulsive boundary turning point at -1, attractive interior turning point at 0",
            left=-1.0,
            right=1.0,
            b="-(x+1)*x*(x-1/2)*(x-27/30)^3",
            c="8",
            rhs="1",
            gamma=8.0,
            gamma_tilde=2.5,
            mesh_builder=interior_layer_mesh,
        ),
        Preset(
            name="two-exp-layer-tpp",
            description="multiple turning point at 0, outflow layer at 1",
            left=0.0,
            right=1.0,
            b="x^2",
            c="2",
            rhs="1",
            gamma=2.0,
            gamma_tilde=1.0,
            mesh_builder=two_layer_mesh,
        ),
        _manufactured_linear(),
        _manufactured_semilinear(),
    )
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"Unknown preset '{name}'; available presets: {', '.join(sorted(PRESETS))}") from None


def build_mesh(problem: BoundaryValueProblem, options: MeshOptions, kind: str = "preset", preset: Preset | None = None) -> Mesh:
    """
    Builds a mesh of the requested kind: 'preset' (the preset's tailored mesh,
    falling back to the layer-adapted one), 'layer-adapted' or 'uniform'.
    """
    if kind == "uniform":
        return uniform_mesh(options.N, (problem.left, problem.right))
    if kind == "preset" and preset is not None and preset.mesh_builder is not None:
        return preset.mesh_builder(problem, options)
    if kind not in ("preset", "layer-adapted"):
        raise ConfigError(f"Unknown mesh kind '{kind}'")
    layer_map = classify_layers(problem, options.k, mu=options.mu)
    return general_layer_mesh(layer_map, options.N, options.rho, options.generator)
