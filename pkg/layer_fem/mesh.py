"""
Layer-adapted meshes.

Three building blocks are combined into meshes for arbitrary layer maps:

- S-type meshes (Shishkin or Bakhvalov-S generating functions) for exponential
  layers of width eps or sqrt(eps),
- Sun-Stynes meshes, piecewise uniform on decades (10^-(j+1), 10^-j], for power
  layers at turning points,
- uniform meshes between layers.

Points are computed as offsets from the layer point and mapped onto the
physical interval once. Shared endpoints of composed pieces are identical
floats.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from layer_fem.errors import MeshError
from layer_fem.problem import BoundaryValueProblem, LayerMap

logger = logging.getLogger(__name__)

# Generating functions.
SHISHKIN = "shishkin"
BAKHVALOV_S = "bakhvalov-s"
GENERATORS = (SHISHKIN, BAKHVALOV_S)

# Layer position relative to the interval a mesh is built on.
LEFT = "left"
RIGHT = "right"

# Segment tags.
FINE = "fine"
COARSE = "coarse"
GRADED = "graded"
UNIFORM = "uniform"

# Smallest number of cells any region of a composed mesh may receive.
MIN_REGION_CELLS = 8


@dataclass(frozen=True)
class MeshSegment:
    """Cells first..last-1 (point indices first..last) belong to one region."""

    tag: str
    first: int
    last: int


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    A strictly increasing, read-only array of mesh points with region tags and a
    JSON-serializable record of how it was built.
    """

    points: np.ndarray
    segments: tuple = ()
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise MeshError("A mesh needs at least two points")
        if not np.all(np.diff(points) > 0):
            bad = int(np.flatnonzero(np.diff(points) <= 0)[0])
            raise MeshError(f"Mesh points are not strictly increasing at index {bad}")
        points.flags.writeable = False
        object.__setattr__(self, "points", points)
        if not self.segments:
            object.__setattr__(self, "segments", (MeshSegment(UNIFORM, 0, points.size - 1),))

    @property
    def n_cells(self) -> int:
        return self.points.size - 1

    @property
    def left(self) -> float:
        return float(self.points[0])

    @property
    def right(self) -> float:
        return float(self.points[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.points)

    def cell_tags(self) -> np.ndarray:
        tags = np.empty(self.n_cells, dtype=object)
        for segment in self.segments:
            tags[segment.first:segment.last] = segment.tag
        return tags


@dataclass(frozen=True)
class MeshGeneratingFunction:
    """
    Generating function phi on [0, 1/2] with phi(0) = 0 and phi(1/2) = ln N, and
    its mesh characterizing function psi = exp(-phi).
    """

    kind: str
    N: int

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise MeshError(f"Unknown mesh generating function '{self.kind}', expected one of {GENERATORS}")
        if self.N < 2:
            raise MeshError(f"N must be at least 2, got {self.N}")

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == SHISHKIN:
            return 2.0 * t * math.log(self.N)
        return -np.log(1.0 - 2.0 * (1.0 - 1.0 / self.N) * t)

    def phi_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == SHISHKIN:
            return np.full_like(t, 2.0 * math.log(self.N))
        slope = 2.0 * (1.0 - 1.0 / self.N)
        return slope / (1.0 - slope * t)

    def psi(self, t):
        return np.exp(-self.phi(t))

    @property
    def max_phi_prime(self) -> float:
        if self.kind == SHISHKIN:
            return 2.0 * math.log(self.N)
        return 2.0 * (self.N - 1.0)

    @property
    def max_abs_psi_prime(self) -> float:
        if self.kind == SHISHKIN:
            return 2.0 * math.log(self.N)
        return 2.0 * (1.0 - 1.0 / self.N)


def transition_point(eps_tilde: float, beta: float, rho: float, N: int) -> float:
    """tau = rho * eps_tilde / beta * ln N."""
    return rho * eps_tilde / beta * math.log(N)


def _orient(offsets, orientation, interval):
    """Maps offsets from the layer point onto the interval, endpoints exact."""
    left, right = interval
    if orientation == LEFT:
        points = left + offsets
        points[0] = left
        if offsets[-1] == right - left:
            points[-1] = right
        return points
    if orientation == RIGHT:
        points = (right - offsets)[::-1].copy()
        points[-1] = right
        if offsets[-1] == right - left:
            points[0] = left
        return points
    raise MeshError(f"orientation must be '{LEFT}' or '{RIGHT}', got {orientation!r}")


def _check_interval(interval):
    left, right = float(interval[0]), float(interval[1])
    if not left < right:
        raise MeshError(f"Mesh interval must satisfy left < right, got {interval}")
    return left, right


def uniform_mesh(N: int, interval=(0.0, 1.0), tag: str = UNIFORM) -> Mesh:
    left, right = _check_interval(interval)
    if N < 1:
        raise MeshError(f"N must be positive, got {N}")
    points = left + (right - left) * (np.arange(N + 1) / N)
    points[-1] = right
    return Mesh(points, (MeshSegment(tag, 0, N),), {"generator": "uniform", "N": N, "interval": [left, right]})


def exponential_region(
    eps_tilde: float,
    beta: float,
    rho: float,
    N: int,
    cells: int,
    generator: str = SHISHKIN,
    orientation: str = LEFT,
    layer_point: float = 0.0,
) -> Mesh:
    """
    Fine part of an S-type mesh: the region of width tau next to ``layer_point``
    with points at rho*eps_tilde/beta*phi(j/(2*cells)), j = 0..cells.

    ``N`` is the global cell count entering phi and tau.
    """
    if cells < 1:
        raise MeshError(f"An exponential region needs at least one cell, got {cells}")
    function = MeshGeneratingFunction(generator, N)
    scale = rho * eps_tilde / beta
    tau = transition_point(eps_tilde, beta, rho, N)
    offsets = scale * function.phi(np.arange(cells + 1) / (2.0 * cells))
    offsets[0] = 0.0
    offsets[-1] = tau
    interval = (layer_point, layer_point + tau) if orientation == LEFT else (layer_point - tau, layer_point)
    points = _orient(offsets, orientation, interval)
    provenance = {
        "generator": "exponential-region",
        "function": generator,
        "eps_tilde": eps_tilde,
        "beta": beta,
        "rho": rho,
        "N": N,
        "cells": cells,
        "tau": tau,
        "orientation": orientation,
    }
    return Mesh(points, (MeshSegment(FINE, 0, cells),), provenance)


def s_type_mesh(
    eps_tilde: float,
    beta: float,
    rho: float,
    N: int,
    generator: str = SHISHKIN,
    orientation: str = LEFT,
    interval=(0.0, 1.0),
) -> Mesh:
    """
    S-type mesh with N cells for a layer at one end of ``interval``.

    Half of the cells resolve [0, tau] with tau = rho*eps_tilde/beta*ln N; the
    other half are uniform on the rest of the interval.

    Args:
        eps_tilde (float): Layer scale, eps or sqrt(eps).
        beta (float): Decay rate of the layer.
        rho (float): Multiplier of the transition point, usually the order k+1.
        N (int): Number of cells, even.
        generator (str): 'shishkin' or 'bakhvalov-s'.
        orientation (str): 'left' or 'right', the end holding the layer.
        interval (tuple): Physical interval.

    Raises:
        MeshError: If N is odd or tau exceeds half the interval.
    """
    left, right = _check_interval(interval)
    if N < 2 or N % 2:
        raise MeshError(f"S-type meshes need an even N >= 2, got {N}")
    length = right - left
    tau = transition_point(eps_tilde, beta, rho, N)
    if tau > length / 2:
        raise MeshError(f"Transition point tau={tau:.6g} exceeds half the interval length {length / 2:.6g}")

    half = N // 2
    function = MeshGeneratingFunction(generator, N)
    fine = rho * eps_tilde / beta * function.phi(np.arange(half + 1) / N)
    fine[0] = 0.0
    fine[-1] = tau
    coarse = length - (length - tau) * (2.0 * (N - np.arange(half, N + 1)) / N)
    coarse[0] = tau
    coarse[-1] = length
    offsets = np.concatenate([fine, coarse[1:]])
    points = _orient(offsets, orientation, (left, right))

    if orientation == LEFT:
        segments = (MeshSegment(FINE, 0, half), MeshSegment(COARSE, half, N))
    else:
        segments = (MeshSegment(COARSE, 0, half), MeshSegment(FINE, half, N))
    provenance = {
        "generator": "s-type",
        "function": generator,
        "eps_tilde": eps_tilde,
        "beta": beta,
        "rho": rho,
        "N": N,
        "tau": tau,
        "orientation": orientation,
        "interval": [left, right],
    }
    logger.info(f"Built {generator} S-type mesh: N={N}, tau={tau:.6g}, layer at the {orientation} end")
    return Mesh(points, segments, provenance)


def sun_stynes_parameters(eps: float, lam: float, k: int, N: int) -> tuple[float, int]:
    """
    Returns (sigma, K) with sigma = max{eps^((1 - lam/(k+1))/2), N^-(2k+1)} and
    K = floor(1 - log10 sigma), so that sigma/10 <= 10^-K < sigma.
    """
    if not 0.0 <= lam < k + 1:
        raise MeshError(f"Grading exponent must lie in [0, k+1) = [0, {k + 1}), got {lam}")
    if not eps > 0.0:
        raise MeshError(f"eps must be positive, got {eps}")
    eps_part = math.sqrt(eps) if lam == 0 else eps ** ((1.0 - lam / (k + 1)) / 2.0)
    sigma = max(eps_part, float(N) ** -(2 * k + 1))
    K = math.floor(1.0 - math.log10(sigma))
    # Correct a rounding slip in log10.
    if 10.0 ** -K >= sigma:
        K += 1
    elif sigma / 10.0 > 10.0 ** -K:
        K -= 1
    return sigma, max(K, 1)


def sun_stynes_mesh(
    eps: float,
    lam: float,
    k: int,
    N: int,
    orientation: str = LEFT,
    interval=(0.0, 1.0),
) -> Mesh:
    """
    Sun-Stynes mesh with N cells graded toward one end of ``interval``.

    In unit coordinates the subintervals (0, 10^-K], (10^-K, 10^-(K-1)], ...,
    (10^-1, 1] each get N // (K+1) uniform cells; the N mod (K+1) remaining
    cells go one each to the outermost subintervals, which keeps
    h_i <= (K+1)/N for every N.

    Raises:
        MeshError: If lam is outside [0, k+1) or N < 2(K+1).
    """
    left, right = _check_interval(interval)
    sigma, K = sun_stynes_parameters(eps, lam, k, N)
    if N < 2 * (K + 1):
        raise MeshError(f"Sun-Stynes mesh with K={K} needs N >= {2 * (K + 1)}, got {N}")

    breakpoints = [0.0] + [10.0 ** -j for j in range(K, 0, -1)] + [1.0]
    base, remainder = divmod(N, K + 1)
    counts = [base + (1 if j >= K + 1 - remainder else 0) for j in range(K + 1)]

    pieces = [np.zeros(1)]
    segments = []
    first = 0
    for j, cells in enumerate(counts):
        start, stop = breakpoints[j], breakpoints[j + 1]
        piece = start + (stop - start) * (np.arange(1, cells + 1) / cells)
        piece[-1] = stop
        pieces.append(piece)
        segments.append((first, first + cells))
        first += cells
    unit = np.concatenate(pieces)

    length = right - left
    offsets = length * unit
    offsets[-1] = length
    points = _orient(offsets, orientation, (left, right))
    if orientation == LEFT:
        tagged = tuple(MeshSegment(GRADED, a, b) for a, b in segments)
    else:
        tagged = tuple(MeshSegment(GRADED, N - b, N - a) for a, b in reversed(segments))

    provenance = {
        "generator": "sun-stynes",
        "eps": eps,
        "lambda": lam,
        "k": k,
        "N": N,
        "sigma": sigma,
        "K": K,
        "orientation": orientation,
        "interval": [left, right],
    }
    logger.info(f"Built Sun-Stynes mesh: N={N}, sigma={sigma:.6g}, K={K}, graded toward the {orientation} end")
    return Mesh(points, tagged, provenance)


def compose_mesh(pieces: Sequence[Mesh], provenance: Mapping | None = None) -> Mesh:
    """Concatenates meshes whose shared endpoints coincide exactly."""
    if not pieces:
        raise MeshError("Nothing to compose")
    arrays = [pieces[0].points]
    segments = list(pieces[0].segments)
    offset = pieces[0].n_cells
    for previous, piece in zip(pieces, pieces[1:]):
        if previous.points[-1] != piece.points[0]:
            raise MeshError(f"Mesh pieces do not join: {previous.points[-1]!r} != {piece.points[0]!r}")
        arrays.append(piece.points[1:])
        segments.extend(MeshSegment(s.tag, s.first + offset, s.last + offset) for s in piece.segments)
        offset += piece.n_cells
    record = {"generator": "composite", "pieces": [dict(piece.provenance) for piece in pieces]}
    record.update(provenance or {})
    return Mesh(np.concatenate(arrays), tuple(segments), record)


def _split_evenly(total, parts):
    base, remainder = divmod(total, parts)
    return [base + (1 if i < remainder else 0) for i in range(parts)]


def general_layer_mesh(
    layer_map: LayerMap,
    N: int,
    rho: float | None = None,
    generator: str = SHISHKIN,
) -> Mesh:
    """
    Composes a mesh for an arbitrary layer map.

    Each exponential boundary layer gets an S-type fine region of width tau
    (N/2 cells for a single layer, N/4 each for two). The remaining cells are
    shared equally by Sun-Stynes pieces graded toward every power layer
    (boundary turning points with lambda = 0, graded interior points with their
    lambda); a stretch between two power layers is split at its midpoint. With
    no power layers the rest is uniform. When 2 tau exceeds the distance to the
    nearest other layer, a uniform mesh is returned instead.

    Args:
        layer_map (LayerMap): Output of classify_layers; its k selects the grading.
        N (int): Total number of cells.
        rho (float, optional): Transition multiplier, defaults to k+1.
        generator (str): Generating function for the exponential regions.

    Raises:
        MeshError: If some region would get fewer than MIN_REGION_CELLS cells.
    """
    k = layer_map.k
    rho = float(k + 1) if rho is None else rho
    left, right = layer_map.left, layer_map.right
    eps = layer_map.eps

    taus = {}
    for layer in layer_map.exp_layers:
        tau = transition_point(layer.eps_tilde(eps), layer.beta, rho, N)
        if 2.0 * tau > layer_map.delta_k[layer.location]:
            logger.warning(
                f"Transition point tau={tau:.6g} at x={layer.location:g} overlaps the next layer; "
                f"the layer is not resolved on this N, using a uniform mesh"
            )
            mesh = uniform_mesh(N, (left, right))
            return Mesh(mesh.points, mesh.segments, dict(mesh.provenance, fallback="transition-overlap"))
        taus[layer.location] = (tau, layer)

    exp_cells = N // 2 if len(taus) == 1 else N // 4
    middle_left = left + taus[left][0] if left in taus else left
    middle_right = right - taus[right][0] if right in taus else right
    remaining = N - exp_cells * len(taus)

    # Sun-Stynes pieces toward each power layer.
    grading = {layer.location: layer.lam for layer in layer_map.power_points()}
    stops = [middle_left] + [x for x in sorted(grading) if middle_left < x < middle_right] + [middle_right]
    plans = []
    for start, stop in zip(stops, stops[1:]):
        at_start, at_stop = start in grading, stop in grading
        if at_start and at_stop:
            middle = 0.5 * (start + stop)
            plans.append(((start, middle), LEFT, grading[start]))
            plans.append(((middle, stop), RIGHT, grading[stop]))
        elif at_start:
            plans.append(((start, stop), LEFT, grading[start]))
        elif at_stop:
            plans.append(((start, stop), RIGHT, grading[stop]))
        else:
            plans.append(((start, stop), None, None))

    counts = _split_evenly(remaining, len(plans))
    if min(counts + ([exp_cells] if taus else [])) < MIN_REGION_CELLS:
        raise MeshError(f"N={N} leaves fewer than {MIN_REGION_CELLS} cells in some mesh region")

    pieces = []
    if left in taus:
        tau, layer = taus[left]
        pieces.append(exponential_region(layer.eps_tilde(eps), layer.beta, rho, N, exp_cells, generator, LEFT, left))
    for (interval, orientation, lam), cells in zip(plans, counts):
        if orientation is None:
            pieces.append(uniform_mesh(cells, interval))
        else:
            pieces.append(sun_stynes_mesh(eps, lam, k, cells, orientation, interval))
    if right in taus:
        tau, layer = taus[right]
        pieces.append(exponential_region(layer.eps_tilde(eps), layer.beta, rho, N, exp_cells, generator, RIGHT, right))

    mesh = compose_mesh(pieces, {"N": N, "k": k, "rho": rho, "function": generator})
    logger.info(f"Composed layer-adapted mesh from {len(pieces)} pieces with N={N}")
    return mesh


@dataclass(frozen=True)
class MeshQualityReport:
    """
    Attributes:
        max_h_times_n: max_i h_i N.
        max_b_over_hn: max over non-fine cells of max|b| on the cell / (h_i N).
        max_x_over_h: max_i of the distance from origin to the near end of cell i, over h_i.
        violations: indices of cells exceeding either limit.
    """

    max_h_times_n: float
    max_b_over_hn: float
    max_x_over_h: float
    violations: tuple
    h_times_n: np.ndarray = field(repr=False)
    b_over_hn: np.ndarray = field(repr=False)


def mesh_quality_report(
    mesh: Mesh,
    problem: BoundaryValueProblem,
    N: int | None = None,
    h_limit: float | None = None,
    b_limit: float | None = None,
    samples: int = 8,
    origin: float | None = None,
) -> MeshQualityReport:
    """
    Measures h_i N and the convection-weighted inverse condition
    max|b| / (h_i N) cellwise; cells in exponential fine regions are exempt
    from the latter.

    Limits default to 10 (right-left) and 10 max(|b|, 1) / (right-left).
    The grading ratio x_i / h_i is measured from ``origin``, the left end by
    default; it is reported only, never a violation.
    """
    N = mesh.n_cells if N is None else N
    widths = mesh.widths
    length = mesh.right - mesh.left
    t = np.linspace(0.0, 1.0, samples)
    x = mesh.points[:-1, None] + widths[:, None] * t[None, :]
    b_sup = np.max(np.abs(problem.evaluate(problem.b, x)), axis=1)

    h_times_n = widths * N
    b_over_hn = np.where(mesh.cell_tags() == FINE, 0.0, b_sup / h_times_n)
    h_limit = 10.0 * length if h_limit is None else h_limit
    b_limit = 10.0 * max(float(np.max(b_sup)), 1.0) / length if b_limit is None else b_limit
    origin = mesh.left if origin is None else origin
    near = np.minimum(np.abs(mesh.points[:-1] - origin), np.abs(mesh.points[1:] - origin))
    inside = (mesh.points[:-1] < origin) & (mesh.points[1:] > origin)
    x_over_h = np.where(inside, 0.0, near / widths)
    violations = tuple(int(i) for i in np.flatnonzero((h_times_n > h_limit) | (b_over_hn > b_limit)))
    if violations:
        logger.warning(f"{len(violations)} mesh cells exceed the quality limits")
    return MeshQualityReport(
        max_h_times_n=float(np.max(h_times_n)),
        max_b_over_hn=float(np.max(b_over_hn)),
        max_x_over_h=float(np.max(x_over_h)),
        violations=violations,
        h_times_n=h_times_n,
        b_over_hn=b_over_hn,
    )
