import os
import json
import logging
import numpy as np
import pandas as pd

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def setup_logging(level='INFO'):
    """
    Configures logging to display messages with timestamps at the given level.

    Parameters:
    level (str): Logging level name, e.g. 'INFO' or 'DEBUG'.

    Returns:
    None
    """
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def ensure_parent_directory(path):
    """
    Creates the directory that will hold the given file, if needed.

    Parameters:
    path (str): Path of a file about to be written.

    Returns:
    str: The same path.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    return path


def write_table(df, path):
    """
    Writes a DataFrame to CSV without the index; missing values become empty fields.

    Parameters:
    df (pandas.DataFrame): Table to write.
    path (str): Destination CSV path.

    Returns:
    str: The path written.
    """
    ensure_parent_directory(path)
    df.to_csv(path, index=False, na_rep='')
    logger.info(f"Table with {len(df)} rows saved to {path}")
    return path


def write_samples(path, x, values, columns=('x', 'u')):
    """
    Writes sampled function values as a two-column CSV file.

    Parameters:
    path (str): Destination path.
    x (array-like): Sample locations.
    values (array-like): Function values at x.
    columns (tuple): Column names.

    Returns:
    str: The path written.
    """
    df = pd.DataFrame({columns[0]: np.asarray(x, dtype=float), columns[1]: np.asarray(values, dtype=float)})
    ensure_parent_directory(path)
    df.to_csv(path, index=False, float_format='%.17g')
    logger.info(f"Saved {len(df)} samples to {path}")
    return path


def write_metadata(path, data):
    """
    Writes a JSON document with sorted keys, so equal data gives equal bytes.

    Parameters:
    path (str): Destination path.
    data (dict): JSON-serializable data; numpy scalars are written as floats.

    Returns:
    str: The path written.
    """
    ensure_parent_directory(path)
    with open(path, 'w') as file:
        json.dump(data, file, sort_keys=True, indent=2, default=float)
        file.write('\n')
    logger.info(f"Metadata saved to {path}")
    return path


def write_mesh_dump(path, points, provenance):
    """
    Writes mesh points as hexadecimal floats, one per line, after a JSON header line
    starting with '# '. The same mesh always produces the same bytes.

    Parameters:
    path (str): Destination path.
    points (array-like): Mesh points.
    provenance (dict): JSON-serializable description of the mesh.

    Returns:
    str: The path written.
    """
    ensure_parent_directory(path)
    header = json.dumps(provenance, sort_keys=True, default=float)
    with open(path, 'w') as file:
        file.write(f"# {header}\n")
        for point in points:
            file.write(f"{float(point).hex()}\n")
    logger.info(f"Mesh with {len(points)} points dumped to {path}")
    return path


def read_mesh_dump(path):
    """
    Reads a file written by write_mesh_dump.

    Parameters:
    path (str): Path of the dump.

    Returns:
    tuple: (numpy array of points, provenance dict).
    """
    with open(path, 'r') as file:
        header = file.readline()
        if not header.startswith('# '):
            raise ValueError(f"Mesh dump {path} has no header line")
        provenance = json.loads(header[2:])
        points = [float.fromhex(line.strip()) for line in file if line.strip()]
    return np.array(points), provenance
