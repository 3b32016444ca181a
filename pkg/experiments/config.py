"""
Experiment configuration files.

Configurations are INI files with sections [problem], [parameters],
[discretization], [reference], [newton], [output] and [run]. Expressions are
quoted strings. Example::

    [problem]
    preset = rep-bou-tpp

    [discretization]
    k = 1
    N = 64, 128, 256
    eps = 1e-2, 1e-4
"""

import configparser
import dataclasses
import logging
from dataclasses import dataclass, field

from experiments.presets import PRESETS, get_preset
from layer_fem.errors import ConfigError, LayerFemError
from layer_fem.mesh import GENERATORS, SHISHKIN
from layer_fem.problem import BoundaryValueProblem

logger = logging.getLogger(__name__)

# Keys understood in the [problem] section besides the preset name.
PROBLEM_KEYS = ('left', 'right', 'b', 'c', 'rhs', 'f', 'nu_left', 'nu_right', 'gamma', 'gamma_tilde', 'name')
MESH_KINDS = ('preset', 'layer-adapted', 'uniform')


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A complete description of one experiment.

    Either ``preset`` names a built-in problem or ``problem`` holds the custom
    problem fields (expression strings and numbers).
    """
    preset: str = None
    problem: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    k: int = 1
    Ns: tuple = (64, 128, 256, 512, 1024)
    eps_values: tuple = (1e-2,)
    rho: float = None
    mu: float = 0.9
    generator: str = SHISHKIN
    mesh: str = 'preset'
    node_rule: str = 'gauss-lobatto'
    reference: str = None
    reference_multiplier: int = 4
    exact: str = None
    exact_derivative: str = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    damping: str = 'armijo'
    output: str = None
    timing: bool = True
    samples_per_cell: int = 4
    seed: int = 0

    @property
    def effective_rho(self):
        return float(self.k + 1) if self.rho is None else self.rho

    @property
    def exact_solution(self):
        if self.exact is not None:
            return self.exact
        return get_preset(self.preset).exact if self.preset else None

    @property
    def reference_strategy(self):
        if self.reference is not None:
            return self.reference
        return 'exact' if self.exact_solution else 'fine-mesh'

    def build_problem(self, eps):
        """Creates the problem for one value of eps."""
        try:
            if self.preset:
                return get_preset(self.preset).build_problem(eps)
            fields = dict(self.problem)
            missing = [key for key in ('left', 'right', 'b') if key not in fields]
            if missing:
                raise ConfigError(f"Missing problem keys: {', '.join(missing)}")
            return BoundaryValueProblem.from_strings(
                fields.pop('left'), fields.pop('right'), eps, fields.pop('b'),
                c=fields.pop('c', None), rhs=fields.pop('rhs', None), f=fields.pop('f', None),
                parameters=self.parameters, **fields,
            )
        except ConfigError:
            raise
        except LayerFemError as e:
            raise ConfigError(f"Invalid problem definition: {e}") from e

    def override(self, **changes):
        """Returns a copy with every non-None change applied."""
        return dataclasses.replace(self, **{key: value for key, value in changes.items() if value is not None})

    def validate(self):
        if self.preset and self.preset not in PRESETS:
            get_preset(self.preset)
        if not self.preset and not self.problem:
            raise ConfigError("Configuration needs a preset or a [problem] section")
        if self.k < 1:
            raise ConfigError(f"Polynomial order k must be at least 1, got {self.k}")
        if not self.Ns or min(self.Ns) < 2:
            raise ConfigError(f"N values must be at least 2, got {self.Ns}")
        if not self.eps_values or not all(eps > 0 for eps in self.eps_values):
            raise ConfigError(f"eps values must be positive, got {self.eps_values}")
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}, got '{self.generator}'")
        if self.mesh not in MESH_KINDS:
            raise ConfigError(f"mesh must be one of {MESH_KINDS}, got '{self.mesh}'")
        if self.reference_strategy == 'exact' and not self.exact_solution:
            raise ConfigError("The exact reference strategy needs [reference] exact")
        return self


def _unquote(value):
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in '"\'':
        return value[1:-1]
    return value


def _number_list(text, convert):
    return tuple(convert(item) for item in text.replace(',', ' ').split())


def load_experiment_config(path):
    """
    Reads an experiment configuration file.

    Args:
        path (str): Path of the INI file.

    Returns:
        ExperimentConfig: The validated configuration.

    Raises:
        ConfigError: If the file is missing, malformed or inconsistent.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if not parser.read(path):
            raise ConfigError(f"Configuration file not found: {path}")
    except configparser.Error as e:
        raise ConfigError(f"Malformed configuration file {path}: {e}") from e

    def get(section, key, convert=str, default=None):
        if not parser.has_option(section, key):
            return default
        raw = _unquote(parser.get(section, key))
        if raw == '':
            return default
        try:
            return convert(raw)
        except ValueError as e:
            raise ConfigError(f"Invalid value for [{section}] {key}: {raw!r}") from e

    problem = {}
    if parser.has_section('problem'):
        unknown = set(parser.options('problem')) - set(PROBLEM_KEYS) - {'preset'}
        if unknown:
            raise ConfigError(f"Unknown keys in [problem]: {', '.join(sorted(unknown))}")
        for key in PROBLEM_KEYS:
            value = get('problem', key)
            if value is not None:
                problem[key] = value if key in ('b', 'c', 'rhs', 'f', 'name') else float(value)

    parameters = {}
    if parser.has_section('parameters'):
        for key in parser.options('parameters'):
            parameters[key] = get('parameters', key, float)

    config = ExperimentConfig(
        preset=get('problem', 'preset'),
        problem=problem,
        parameters=parameters,
        k=get('discretization', 'k', int, 1),
        Ns=get('discretization', 'N', lambda text: _number_list(text, int), ExperimentConfig.Ns),
        eps_values=get('discretization', 'eps', lambda text: _number_list(text, float), ExperimentConfig.eps_values),
        rho=get('discretization', 'rho', float),
        mu=get('discretization', 'mu', float, 0.9),
        generator=get('discretization', 'generator', str, SHISHKIN),
        mesh=get('discretization', 'mesh', str, 'preset'),
        node_rule=get('discretization', 'node_rule', str, 'gauss-lobatto'),
        reference=get('reference', 'strategy'),
        reference_multiplier=get('reference', 'multiplier', int, 4),
        exact=get('reference', 'exact'),
        exact_derivative=get('reference', 'exact_derivative'),
        newton_tol=get('newton', 'tol', float, 1e-10),
        newton_max_iter=get('newton', 'max_iter', int, 50),
        damping=get('newton', 'damping', str, 'armijo'),
        output=get('output', 'path'),
        timing=get('output', 'timing', _boolean, True),
        samples_per_cell=get('output', 'samples_per_cell', int, 4),
        seed=get('run', 'seed', int, 0),
    )
    logger.info(f"Loaded experiment configuration from {path}")
    return config.validate()


def _boolean(text):
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(text)
