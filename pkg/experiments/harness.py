"""
The four harness commands: classify, solve, convergence and mesh.

Each command takes an ExperimentConfig and the process Settings, logs what it
does and returns its result; the command-line front end only parses flags and
prints.
"""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from experiments.presets import MeshOptions, build_mesh, get_preset
from layer_fem.errors import LayerFemError, ProblemError
from layer_fem.fem import FESpace, solve
from layer_fem.norms import error_norms, fit_order, log_scale, make_reference, pairwise_rates, plain_scale
from layer_fem.problem import check_assumptions, classify_layers, describe_layers
from utils.helpers import write_mesh_dump, write_metadata, write_samples, write_table

logger = logging.getLogger(__name__)

# Header of the convergence table.
CONVERGENCE_COLUMNS = ['N', 'eps', 'energy', 'l2', 'h1', 'max', 'rate_plain', 'rate_lnadj', 'seconds']
NORMS = ('energy', 'l2', 'h1', 'max')
FIT_ROW = 'fit'
MAX_ROW = 'max'


@dataclass(frozen=True)
class SolveOutcome:
    solution: object
    mesh: object
    report: object
    path: str


def _preset(config):
    return get_preset(config.preset) if config.preset else None


def _mesh_options(config, N):
    return MeshOptions(N=N, k=config.k, rho=config.effective_rho, generator=config.generator, mu=config.mu)


def _mesh(config, problem, N):
    return build_mesh(problem, _mesh_options(config, N), kind=config.mesh, preset=_preset(config))


def _solve_options(config):
    return {'tol': config.newton_tol, 'max_iter': config.newton_max_iter, 'damping': config.damping}


def _default_path(config, settings, suffix):
    if config.output:
        return config.output
    name = config.preset or config.problem.get('name', 'problem')
    return os.path.join(settings.output_dir, f"{name}_{suffix}")


def energy_weight(problem):
    """
    The weight gamma_tilde of the energy norm: the declared value, otherwise the
    sampled minimum of c - b'/2.

    Raises:
        ProblemError: If the sampled minimum is not positive.
    """
    if problem.gamma_tilde is not None:
        return problem.gamma_tilde
    margin = check_assumptions(problem).min_c_minus_half_bprime
    if margin <= 0:
        raise ProblemError(f"min (c - b'/2) = {margin:.6g} is not positive; the energy norm is undefined")
    logger.info(f"Using sampled gamma_tilde = {margin:.6g} for the energy norm")
    return margin


def _check(problem):
    report = check_assumptions(problem)
    if report.ok:
        logger.info(
            f"Assumptions hold for {problem.name}: min c = {report.min_c:.6g}, "
            f"min c - b'/2 = {report.min_c_minus_half_bprime:.6g}"
        )
    return report


def cmd_classify(config, settings=None, eps=None):
    """
    Classifies the layers of the configured problem.

    Args:
        config (ExperimentConfig): The experiment.
        settings (Settings, optional): Unused; accepted for a uniform command signature.
        eps (float, optional): Perturbation parameter, the first configured value by default.

    Returns:
        str: A one-line description such as "power layer at 0; exponential (ε-width, β=1) at 1".
    """
    eps = config.eps_values[0] if eps is None else eps
    problem = config.build_problem(eps)
    layer_map = classify_layers(problem, config.k, mu=config.mu)
    description = describe_layers(layer_map)
    logger.info(f"Layers of {problem.name} at eps={eps:g}: {description}")
    return description


def sample_points(space, per_cell):
    """Mesh nodes together with per_cell uniform points inside every cell."""
    mesh = space.mesh
    t = np.arange(1, per_cell + 1) / (per_cell + 1.0)
    inner = mesh.points[:-1, None] + mesh.widths[:, None] * t[None, :]
    return np.unique(np.concatenate([space.node_coordinates, inner.ravel()]))


def cmd_solve(config, settings, N=None, eps=None):
    """
    Solves the configured problem once and writes the solution samples.

    Args:
        config (ExperimentConfig): The experiment.
        settings (Settings): Process settings (output directory).
        N (int, optional): Number of cells, the first configured value by default.
        eps (float, optional): Perturbation parameter, the first configured value by default.

    Returns:
        SolveOutcome: The discrete solution, its mesh, the error report (None
        without an exact solution) and the path of the samples file.
    """
    N = config.Ns[0] if N is None else N
    eps = config.eps_values[0] if eps is None else eps
    problem = config.build_problem(eps)
    _check(problem)

    mesh = _mesh(config, problem, N)
    space = FESpace(mesh, config.k, config.node_rule)
    start = time.perf_counter()
    solution = solve(space, problem, **_solve_options(config))
    logger.info(f"Solved {problem.name} with N={N}, k={config.k}, eps={eps:g} in {time.perf_counter() - start:.3f}s")

    report = None
    if config.exact_solution:
        reference = make_reference(
            problem, 'exact', config.k, exact=config.exact_solution, exact_derivative=config.exact_derivative
        )
        report = error_norms(solution, reference, eps, energy_weight(problem))
        logger.info(
            f"Errors: energy={report.energy:.3e}, l2={report.l2:.3e}, h1={report.h1:.3e}, max={report.max:.3e}"
        )

    x = sample_points(space, config.samples_per_cell)
    path = write_samples(_default_path(config, settings, f"solution_N{N}_eps{eps:g}.csv"), x, solution.evaluate(x))
    return SolveOutcome(solution, mesh, report, path)


def _failed_row(N, eps):
    return {'N': N, 'eps': eps, **{norm: math.nan for norm in NORMS}, 'seconds': None}


def _sweep_row(config, problem, reference, gamma_tilde, N):
    """Solves on one mesh and measures the errors; failures give a NaN row and no report."""
    eps = problem.eps
    try:
        start = time.perf_counter()
        mesh = _mesh(config, problem, N)
        solution = solve(FESpace(mesh, config.k, config.node_rule), problem, **_solve_options(config))
        report = error_norms(solution, reference, eps, gamma_tilde)
        seconds = time.perf_counter() - start
    except LayerFemError as e:
        logger.error(f"Row N={N}, eps={eps:g} failed: {e}")
        return _failed_row(N, eps), None
    logger.info(f"N={N}, eps={eps:g}: energy error {report.energy:.3e}")
    return {'N': N, 'eps': eps, **report.as_dict(), 'seconds': seconds if config.timing else None}, report


def _reference(config, problem, Ns):
    return make_reference(
        problem,
        config.reference_strategy,
        config.k,
        mesh_factory=lambda N: _mesh(config, problem, N),
        max_study_N=max(Ns),
        multiplier=config.reference_multiplier,
        exact=config.exact_solution,
        exact_derivative=config.exact_derivative,
        **_solve_options(config),
    )


def _run_metadata(eps, gamma_tilde, reference, results):
    reports = [report for _, report in results if report is not None]
    if reports:
        entry = reports[0].metadata()
    else:
        entry = {'eps': eps, 'gamma_tilde': gamma_tilde, 'quadrature_points': None, 'reference': dict(reference.provenance)}
    entry['failed_N'] = [row['N'] for row, report in results if report is None]
    return entry


def metadata_path(path):
    """Path of the metadata file written next to a convergence table."""
    return f"{os.path.splitext(path)[0]}.meta.json"


def _with_rates(rows, Ns):
    energies = [row['energy'] for row in rows]
    plain = pairwise_rates(energies, plain_scale(Ns))
    adjusted = pairwise_rates(energies, log_scale(Ns))
    for row, rate_plain, rate_lnadj in zip(rows, plain, adjusted):
        row['rate_plain'] = rate_plain
        row['rate_lnadj'] = rate_lnadj
    return rows


def _fit_row(rows, Ns, eps):
    """Least-squares orders: ln-adjusted per norm, plain and ln-adjusted for the energy norm."""
    row = {'N': FIT_ROW, 'eps': eps, 'seconds': None}
    for norm in NORMS:
        row[norm] = fit_order([r[norm] for r in rows], log_scale(Ns))
    energies = [r['energy'] for r in rows]
    row['rate_plain'] = fit_order(energies, plain_scale(Ns))
    row['rate_lnadj'] = fit_order(energies, log_scale(Ns))
    return row


def _uniformity_rows(per_eps, Ns):
    """Maximum error over eps for every N, with rates of that maximum."""
    rows = []
    for i, N in enumerate(Ns):
        row = {'N': N, 'eps': MAX_ROW, 'seconds': None}
        for norm in NORMS:
            values = np.array([rows_for_eps[i][norm] for rows_for_eps in per_eps], dtype=float)
            row[norm] = float(np.max(values)) if np.all(np.isfinite(values)) else math.nan
        rows.append(row)
    return _with_rates(rows, Ns)


def convergence_table(config, settings):
    """
    Runs the (N, eps) sweep and returns the convergence table with its metadata.

    For every eps the reference is computed once, the rows for all N are solved
    on a thread pool of settings.workers threads and collected in N order,
    followed by a fit row. The table ends with one eps-uniformity row per N.
    The metadata holds, per eps, the norm parameters, quadrature and reference
    provenance of the error reports, and the N values whose rows failed.
    """
    Ns = sorted(config.Ns)
    if len(Ns) < 3:
        logger.warning(f"Only {len(Ns)} values of N; rates will be unreliable")
    per_eps = []
    table = []
    runs = []
    for eps in config.eps_values:
        problem = config.build_problem(eps)
        _check(problem)
        try:
            gamma_tilde = energy_weight(problem)
            reference = _reference(config, problem, Ns)
        except LayerFemError as e:
            logger.error(f"Reference for eps={eps:g} failed: {e}")
            rows = [_failed_row(N, eps) for N in Ns]
            runs.append({'eps': eps, 'error': str(e), 'failed_N': list(Ns)})
        else:
            with ThreadPoolExecutor(max_workers=settings.workers) as pool:
                results = list(pool.map(lambda N: _sweep_row(config, problem, reference, gamma_tilde, N), Ns))
            rows = [row for row, _ in results]
            runs.append(_run_metadata(eps, gamma_tilde, reference, results))
        rows = _with_rates(rows, Ns)
        per_eps.append(rows)
        table.extend(rows)
        table.append(_fit_row(rows, Ns, eps))
        logger.info(f"eps={eps:g}: fitted ln-adjusted energy order {table[-1]['rate_lnadj']:.3f}")
    table.extend(_uniformity_rows(per_eps, Ns))
    metadata = {
        'problem': config.preset or config.problem.get('name', 'problem'),
        'k': config.k,
        'N': Ns,
        'seed': config.seed,
        'runs': runs,
    }
    return pd.DataFrame(table, columns=CONVERGENCE_COLUMNS), metadata


def cmd_convergence(config, settings):
    """
    Runs the convergence sweep and writes it as CSV, with the error report
    metadata in a JSON file next to it (see metadata_path).

    Returns:
        tuple: (pandas.DataFrame, path written).
    """
    logger.info(f"Convergence sweep: N={list(config.Ns)}, eps={list(config.eps_values)}, k={config.k}, seed={config.seed}")
    table, metadata = convergence_table(config, settings)
    path = write_table(table, _default_path(config, settings, f"convergence_k{config.k}.csv"))
    write_metadata(metadata_path(path), metadata)
    return table, path


def mesh_record(config, mesh, eps):
    """JSON-serializable description of a mesh for its dump header."""
    return {
        'problem': config.preset or config.problem.get('name', 'problem'),
        'eps': eps,
        'k': config.k,
        'mesh': dict(mesh.provenance),
        'segments': [[segment.tag, segment.first, segment.last] for segment in mesh.segments],
    }


def cmd_mesh_dump(config, settings, N=None, eps=None):
    """
    Builds the configured mesh and writes it in the dump format.

    Returns:
        tuple: (Mesh, path written).
    """
    N = config.Ns[0] if N is None else N
    eps = config.eps_values[0] if eps is None else eps
    problem = config.build_problem(eps)
    mesh = _mesh(config, problem, N)
    path = write_mesh_dump(_default_path(config, settings, f"mesh_N{N}_eps{eps:g}.txt"), mesh.points, mesh_record(config, mesh, eps))
    return mesh, path
