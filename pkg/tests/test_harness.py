import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from experiments.cli import main
from experiments.config import ExperimentConfig, load_experiment_config
from experiments.harness import (
    CONVERGENCE_COLUMNS,
    FIT_ROW,
    MAX_ROW,
    cmd_classify,
    cmd_convergence,
    cmd_mesh_dump,
    cmd_solve,
    energy_weight,
    metadata_path,
)
from experiments.presets import MeshOptions, build_mesh, get_preset
from layer_fem.errors import ConfigError, ProblemError
from layer_fem.norms import fit_order, log_scale, sun_stynes_scale
from layer_fem.problem import BoundaryValueProblem
from utils.config import Settings, load_settings
from utils.helpers import read_mesh_dump


CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'experiments', 'configs')


@pytest.fixture
def settings(tmp_path):
    return Settings(log_level='INFO', output_dir=str(tmp_path), workers=2)


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------

def test_classify_repulsive_boundary_preset(settings):
    config = ExperimentConfig(preset='rep-bou-tpp', eps_values=(1e-6,))
    assert cmd_classify(config, settings) == "power layer at 0; exponential (ε-width, β=1) at 1"


def test_classify_custom_problem(settings):
    config = ExperimentConfig(problem={'left': 0.0, 'right': 1.0, 'b': '1', 'c': '1', 'rhs': '1'})
    assert "exponential" in cmd_classify(config, settings)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def test_solve_manufactured_problem(settings, tmp_path):
    config = ExperimentConfig(preset='manufactured-linear', k=2, Ns=(128,), eps_values=(1.0,), mesh='uniform')
    outcome = cmd_solve(config, settings)
    assert outcome.report.energy < 1e-4
    assert outcome.mesh.n_cells == 128

    samples = pd.read_csv(outcome.path)
    assert list(samples.columns) == ['x', 'u']
    assert samples['x'].iloc[0] == 0.0
    assert samples['x'].iloc[-1] == 1.0
    assert len(samples) == 2 * 128 + 1 + 128 * config.samples_per_cell
    np.testing.assert_allclose(samples['u'], np.sin(np.pi * samples['x']), atol=1e-5)


def test_solve_without_exact_solution_has_no_report(settings, tmp_path):
    out = tmp_path / 'rep.csv'
    config = ExperimentConfig(preset='rep-bou-tpp', Ns=(32,), eps_values=(1e-4,), output=str(out))
    outcome = cmd_solve(config, settings)
    assert outcome.report is None
    assert outcome.path == str(out)
    assert out.exists()


def test_energy_weight_falls_back_to_the_sampled_margin():
    problem = BoundaryValueProblem.from_strings(0.0, 1.0, 0.1, "x", c="1", rhs="1")
    assert energy_weight(problem) == pytest.approx(0.5)
    declared = BoundaryValueProblem.from_strings(0.0, 1.0, 0.1, "x", c="1", rhs="1", gamma_tilde=0.25)
    assert energy_weight(declared) == 0.25
    with pytest.raises(ProblemError):
        energy_weight(BoundaryValueProblem.from_strings(0.0, 1.0, 0.1, "x", c="0.25", rhs="1"))


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

def manufactured_sweep(path, **changes):
    config = ExperimentConfig(
        preset='manufactured-linear',
        Ns=(8, 16, 32),
        eps_values=(1.0, 0.5),
        mesh='uniform',
        timing=False,
        output=str(path),
    )
    return config.override(**changes)


def test_convergence_table_layout(settings, tmp_path):
    table, path = cmd_convergence(manufactured_sweep(tmp_path / 'sweep.csv'), settings)

    assert list(table.columns) == CONVERGENCE_COLUMNS
    assert len(table) == 2 * (3 + 1) + 3
    fits = table[table['N'] == FIT_ROW]
    assert list(fits['eps']) == [1.0, 0.5]
    for _, row in fits.iterrows():
        assert row['rate_plain'] == pytest.approx(1.0, abs=0.15)
        assert row['l2'] > row['energy']

    uniform = table[table['eps'] == MAX_ROW]
    assert list(uniform['N']) == [8, 16, 32]
    solved = table[(table['eps'] == 1.0) & (table['N'] != FIT_ROW)]
    assert math.isnan(solved['rate_plain'].iloc[0])
    assert table['seconds'].isna().all()

    written = pd.read_csv(path, dtype=str, keep_default_na=False)
    assert list(written.columns) == CONVERGENCE_COLUMNS
    assert (written['seconds'] == '').all()


def test_convergence_metadata_is_written_next_to_the_table(settings, tmp_path):
    config = manufactured_sweep(tmp_path / 'sweep.csv', k=2)
    _, path = cmd_convergence(config, settings)
    assert metadata_path(path) == str(tmp_path / 'sweep.meta.json')
    with open(metadata_path(path)) as file:
        metadata = json.load(file)

    assert metadata['k'] == 2
    assert metadata['N'] == [8, 16, 32]
    assert [run['eps'] for run in metadata['runs']] == [1.0, 0.5]
    for run in metadata['runs']:
        assert run['quadrature_points'] == 6
        assert run['reference']['strategy'] == 'exact'
        assert run['failed_N'] == []
        assert run['gamma_tilde'] == pytest.approx(energy_weight(config.build_problem(run['eps'])))


def test_uniformity_rows_take_the_maximum_over_eps(settings, tmp_path):
    table, _ = cmd_convergence(manufactured_sweep(tmp_path / 'sweep.csv'), settings)
    rows = table[table['eps'].isin([1.0, 0.5]) & (table['N'] == 16)]
    uniform = table[(table['eps'] == MAX_ROW) & (table['N'] == 16)].iloc[0]
    assert uniform['energy'] == pytest.approx(rows['energy'].max())


def test_convergence_is_deterministic(settings, tmp_path):
    _, first = cmd_convergence(manufactured_sweep(tmp_path / 'first.csv'), settings)
    _, second = cmd_convergence(manufactured_sweep(tmp_path / 'second.csv'), settings)
    with open(first, 'rb') as a, open(second, 'rb') as b:
        assert a.read() == b.read()


def test_failed_rows_are_recorded_as_empty_fields(settings, tmp_path):
    config = ExperimentConfig(
        preset='two-exp-layer-tpp',
        Ns=(8, 10, 16),
        eps_values=(0.5,),
        timing=False,
        output=str(tmp_path / 'two.csv'),
    )
    table, path = cmd_convergence(config, settings)
    failed = table[(table['N'] == 10) & (table['eps'] == 0.5)].iloc[0]
    assert math.isnan(failed['energy'])
    assert not math.isnan(table[(table['N'] == 8) & (table['eps'] == 0.5)].iloc[0]['energy'])
    assert math.isnan(table[(table['N'] == 10) & (table['eps'] == MAX_ROW)].iloc[0]['energy'])

    written = pd.read_csv(path, dtype=str, keep_default_na=False)
    assert written[written['N'] == '10']['energy'].iloc[0] == ''

    with open(metadata_path(path)) as file:
        run = json.load(file)['runs'][0]
    assert run['failed_N'] == [10]
    assert run['reference']['strategy'] == 'fine-mesh'
    assert run['reference']['N'] == 64


def shipped_sweep(name, tmp_path, k, **changes):
    config = load_experiment_config(os.path.join(CONFIG_DIR, name))
    return config.override(k=k, timing=False, output=str(tmp_path / f'{name}.csv'), **changes)


@pytest.mark.slow
@pytest.mark.parametrize('k', [1, 2])
def test_repulsive_boundary_preset_converges_uniformly(settings, tmp_path, k):
    table, _ = cmd_convergence(shipped_sweep('rep_bou_tpp.ini', tmp_path, k), settings)

    fits = table[table['N'] == FIT_ROW]
    assert list(fits['eps']) == [1e-4, 1e-6, 1e-8, 1e-10]
    assert all(rate >= k - 0.15 for rate in fits['rate_lnadj'])
    uniform = table[table['eps'] == MAX_ROW]
    assert list(uniform['N']) == [64, 128, 256, 512, 1024]
    assert fit_order(uniform['energy'], log_scale(uniform['N'])) >= k - 0.2


@pytest.mark.slow
@pytest.mark.parametrize('k', [1, 2])
def test_two_layer_preset_converges_uniformly(settings, tmp_path, k):
    table, _ = cmd_convergence(shipped_sweep('two_exp_layer_tpp.ini', tmp_path, k), settings)

    fits = table[table['N'] == FIT_ROW]
    assert len(fits) == 4
    assert all(rate >= k - 0.15 for rate in fits['rate_lnadj'])


@pytest.mark.slow
@pytest.mark.parametrize('k', [1, 2])
def test_interior_turning_point_preset_converges_uniformly(settings, tmp_path, k):
    Ns = (128, 256, 512, 1024)
    eps_values = (1e-6, 1e-8)
    config = shipped_sweep('int_bou_tpp.ini', tmp_path, k, Ns=Ns, eps_values=eps_values)
    table, _ = cmd_convergence(config, settings)

    for eps in eps_values:
        rows = table[(table['eps'] == eps) & (table['N'] != FIT_ROW)]
        assert list(rows['N']) == list(Ns)
        assert fit_order(rows['energy'], sun_stynes_scale(Ns, eps, 0.0, k)) >= k - 0.2


# ---------------------------------------------------------------------------
# mesh dumps
# ---------------------------------------------------------------------------

def test_mesh_dump_round_trip_and_determinism(settings, tmp_path):
    config = ExperimentConfig(preset='rep-bou-tpp', Ns=(64,), eps_values=(1e-8,))
    mesh, first = cmd_mesh_dump(config, settings)
    _, second = cmd_mesh_dump(config.override(output=str(tmp_path / 'again.txt')), settings)
    with open(first, 'rb') as a, open(second, 'rb') as b:
        assert a.read() == b.read()

    points, record = read_mesh_dump(first)
    np.testing.assert_array_equal(points, mesh.points)
    assert record['problem'] == 'rep-bou-tpp'
    assert record['eps'] == 1e-8
    tags = [segment[0] for segment in record['segments']]
    assert tags.count('graded') == 6
    assert tags.count('fine') == 1


def test_two_layer_dump_matches_the_preset_mesh(settings, tmp_path):
    config = ExperimentConfig(preset='two-exp-layer-tpp', Ns=(16,), eps_values=(1e-6,), output=str(tmp_path / 'm.txt'))
    _, path = cmd_mesh_dump(config, settings)
    points, _ = read_mesh_dump(path)
    preset = get_preset('two-exp-layer-tpp')
    expected = build_mesh(preset.build_problem(1e-6), MeshOptions(N=16, k=1, rho=2.0), preset=preset)
    np.testing.assert_array_equal(points, expected.points)


def test_fallback_dump_is_uniform(settings, tmp_path):
    config = ExperimentConfig(preset='two-exp-layer-tpp', Ns=(16,), eps_values=(0.5,), output=str(tmp_path / 'm.txt'))
    _, path = cmd_mesh_dump(config, settings)
    points, record = read_mesh_dump(path)
    assert len(points) == 17
    np.testing.assert_allclose(points, np.linspace(0.0, 1.0, 17), atol=1e-15)
    assert record['mesh']['fallback'] == 'transition-overlap'


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def write_config(tmp_path, text):
    path = tmp_path / 'experiment.ini'
    path.write_text(text)
    return str(path)


def test_load_custom_problem_configuration(tmp_path):
    path = write_config(
        tmp_path,
        '[problem]\n'
        'left = 0\n'
        'right = 1\n'
        'b = "beta*(1 + x)"\n'
        'c = "1"\n'
        'rhs = "1"\n'
        'name = custom\n'
        '[parameters]\n'
        'beta = 2\n'
        '[discretization]\n'
        'k = 2\n'
        'N = 16, 32 64\n'
        'eps = 1e-2, 1e-4\n'
        'mesh = uniform\n'
        '[output]\n'
        'timing = no\n'
        '[run]\n'
        'seed = 7\n',
    )
    config = load_experiment_config(path)
    assert config.k == 2
    assert config.Ns == (16, 32, 64)
    assert config.eps_values == (1e-2, 1e-4)
    assert config.timing is False
    assert config.seed == 7
    assert config.effective_rho == 3.0
    assert config.reference_strategy == 'fine-mesh'
    problem = config.build_problem(1e-2)
    assert problem.name == 'custom'
    assert problem.evaluate(problem.b, 1.0) == pytest.approx(4.0)


def test_shipped_configurations_load():
    config = load_experiment_config(os.path.join(CONFIG_DIR, 'manufactured.ini'))
    assert config.reference_strategy == 'exact'
    assert config.timing is False
    assert load_experiment_config(os.path.join(CONFIG_DIR, 'rep_bou_tpp.ini')).preset == 'rep-bou-tpp'


@pytest.mark.parametrize(
    'text',
    [
        '[problem]\npreset = rep-bou-tpp\ncolour = blue\n',
        '[problem]\npreset = rep-bou-tpp\n[discretization]\nk = two\n',
        '[problem]\npreset = rep-bou-tpp\n[discretization]\nk = 0\n',
        '[problem]\npreset = rep-bou-tpp\n[discretization]\neps = -1e-4\n',
        '[problem]\npreset = no-such-preset\n',
        '[discretization]\nk = 1\n',
        '[problem]\npreset = rep-bou-tpp\n[reference]\nstrategy = exact\n',
        'not an ini file\n',
    ],
)
def test_invalid_configurations_are_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, text))


def test_eps_above_one_is_a_valid_configuration(tmp_path):
    config = load_experiment_config(
        write_config(tmp_path, '[problem]\npreset = rep-bou-tpp\n[discretization]\neps = 2, 1e-2\n')
    )
    assert config.eps_values == (2.0, 1e-2)
    assert config.build_problem(2.0).eps == 2.0


def test_missing_configuration_file(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(str(tmp_path / 'absent.ini'))


def test_custom_problem_needs_its_coefficients():
    config = ExperimentConfig(problem={'left': 0.0, 'right': 1.0, 'c': '1', 'rhs': '1'})
    with pytest.raises(ConfigError):
        config.build_problem(0.1)


def test_settings_from_environment(tmp_path, monkeypatch):
    for key in ('LAYER_FEM_LOG_LEVEL', 'LAYER_FEM_OUTPUT_DIR', 'LAYER_FEM_WORKERS'):
        monkeypatch.setenv(key, 'unset')
        monkeypatch.delenv(key)
    env_file = tmp_path / '.env'
    env_file.write_text('LAYER_FEM_LOG_LEVEL=debug\nLAYER_FEM_WORKERS=3\n')
    settings = load_settings(str(env_file))
    assert settings == Settings(log_level='DEBUG', output_dir='results', workers=3)

    monkeypatch.setenv('LAYER_FEM_WORKERS', 'many')
    with pytest.raises(ConfigError):
        load_settings(str(env_file))


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

@pytest.fixture
def environment(tmp_path, monkeypatch):
    monkeypatch.setenv('LAYER_FEM_LOG_LEVEL', 'WARNING')
    monkeypatch.setenv('LAYER_FEM_OUTPUT_DIR', str(tmp_path))
    monkeypatch.setenv('LAYER_FEM_WORKERS', '1')
    return str(tmp_path / 'none.env')


def test_cli_classify(capsys, environment):
    assert main(['classify', '--preset', 'two-exp-layer-tpp', '--eps', '1e-6', '--env-file', environment]) == 0
    assert 'exponential' in capsys.readouterr().out


def test_cli_mesh_writes_the_requested_file(capsys, environment, tmp_path):
    out = tmp_path / 'mesh.txt'
    argv = ['mesh', '--preset', 'two-exp-layer-tpp', '-N', '16', '--eps', '1e-6', '--out', str(out)]
    assert main(argv + ['--env-file', environment]) == 0
    assert capsys.readouterr().out.strip() == str(out)
    assert len(read_mesh_dump(str(out))[0]) == 17


def test_cli_reports_errors_with_exit_status(environment):
    assert main(['classify', '--preset', 'no-such-preset', '--env-file', environment]) == 1
    assert main(['solve', '--preset', 'int-bou-tpp', '-N', '10', '--eps', '1e-4', '--env-file', environment]) == 1
