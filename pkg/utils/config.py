import os
import logging
from dataclasses import dataclass
from dotenv import load_dotenv

from layer_fem.errors import ConfigError

logger = logging.getLogger(__name__)

# Environment variables read by the experiment harness, with their defaults.
SETTINGS_DEFAULTS = {
    'LAYER_FEM_LOG_LEVEL': 'INFO',
    'LAYER_FEM_OUTPUT_DIR': 'results',
    'LAYER_FEM_WORKERS': '1',
}

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


@dataclass(frozen=True)
class Settings:
    """
    Process-level settings shared by every harness command.

    Attributes:
        log_level (str): Name of the logging level.
        output_dir (str): Directory for CSV tables, meshes and solution dumps.
        workers (int): Number of threads used for the rows of a sweep.
    """
    log_level: str
    output_dir: str
    workers: int


def load_settings(env_file=None):
    """
    Loads harness settings from environment variables using dotenv.

    Args:
        env_file (str, optional): Path of a .env file; the nearest .env is used if omitted.

    Returns:
        Settings: The validated settings.

    Raises:
        ConfigError: If any variable holds a malformed value.
    """
    load_dotenv(dotenv_path=env_file)
    values = {key: os.getenv(key, default) for key, default in SETTINGS_DEFAULTS.items()}

    # Check for malformed environment variables.
    invalid = []
    log_level = values['LAYER_FEM_LOG_LEVEL'].strip().upper()
    if log_level not in LOG_LEVELS:
        invalid.append('LAYER_FEM_LOG_LEVEL')
    try:
        workers = int(values['LAYER_FEM_WORKERS'])
        if workers < 1:
            raise ValueError(workers)
    except ValueError:
        invalid.append('LAYER_FEM_WORKERS')
        workers = 1
    if invalid:
        raise ConfigError(f"Invalid environment variables: {', '.join(invalid)}")

    return Settings(log_level=log_level, output_dir=values['LAYER_FEM_OUTPUT_DIR'], workers=workers)
