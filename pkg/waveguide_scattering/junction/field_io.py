"""
Plain-text snapshots of junction fields.

The first line is a header `# ny nx h k x0 y0`; each following line holds one
mesh row as space-separated `re im` pairs, with `nan nan` outside the domain.
Files ending in .gz or .bz2 are compressed transparently.
"""

import logging

import numpy as np

from ..utilities.file_utils import open_file_based_on_extension

logger = logging.getLogger(__name__)


def write_field(field, filename):
    grid = field.grid()
    ny, nx = grid.shape
    x0, y0 = field.mesh.origin
    pairs = np.stack([grid.real, grid.imag], axis=-1).reshape(ny, 2 * nx)
    with open_file_based_on_extension(str(filename), "wt") as f:
        header = (float(v) for v in (field.mesh.h, field.k, x0, y0))
        f.write(f"# {ny} {nx} " + " ".join(repr(v) for v in header) + "\n")
        for row in pairs:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    logger.debug(f"Wrote {ny}x{nx} field snapshot to {filename}")


def read_field(filename):
    """
    Returns (grid, h, k, origin) from a snapshot written by write_field.
    """
    with open_file_based_on_extension(str(filename), "rt") as f:
        header = f.readline().split()
        if not header or header[0] != "#" or len(header) != 7:
            raise ValueError(f"{filename} is not a field snapshot")
        ny, nx = int(header[1]), int(header[2])
        h, k, x0, y0 = (float(v) for v in header[3:])
        values = np.loadtxt(f, ndmin=2)
    if values.shape != (ny, 2 * nx):
        raise ValueError(f"{filename}: expected {ny} rows of {2 * nx} numbers, got {values.shape}")
    grid = values[:, 0::2] + 1j * values[:, 1::2]
    return grid, h, k, (x0, y0)
