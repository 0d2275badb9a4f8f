"""
Plot-ready text outputs: scattering matrices as JSON, sweep curves and trapped-mode
brackets as CSV. Output is byte-stable for identical inputs.
"""

import csv
import json
import logging

import numpy as np

from ..utilities.file_utils import open_file_based_on_extension

logger = logging.getLogger(__name__)


def _clean(value):
    # json has no numpy scalars, nan or inf
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def _number(value):
    # repr of a python float round-trips; numpy scalars repr with their type
    return "" if value is None else repr(float(value))


def matrix_document(smatrix):
    return {
        "metadata": {key: _clean(value) for key, value in smatrix.metadata().items()},
        "labels": list(smatrix.labels),
        "entries": [[[float(z.real), float(z.imag)] for z in row] for row in smatrix.entries],
    }


def write_matrix_json(smatrix, filename):
    """
    Row-major complex entries as [re, im] pairs with a metadata block.
    """
    with open_file_based_on_extension(filename, "wt") as f:
        json.dump(matrix_document(smatrix), f, indent=1)
        f.write("\n")
    logger.debug(f"Wrote {smatrix.kind.value} ({smatrix.M_prime}x{smatrix.M_prime}) to {filename}")


def read_matrix_json(filename):
    """
    Returns (entries, metadata) from a file written by write_matrix_json.
    """
    with open_file_based_on_extension(filename, "rt") as f:
        document = json.load(f)
    pairs = np.asarray(document["entries"], dtype=float).reshape(-1, 2)
    n = int(round(np.sqrt(len(pairs))))
    if n * n != len(pairs):
        raise ValueError(f"{filename}: the matrix is not square")
    return (pairs[:, 0] + 1j * pairs[:, 1]).reshape(n, n), document["metadata"]


def write_sweep_csv(points, filename):
    with open_file_based_on_extension(filename, "wt") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(["k", "defect", "min_eig_distance", "energy_defect", "M", "M_prime", "flags"])
        for p in points:
            numbers = [_number(v) for v in (p.k, p.unitarity_defect, p.distance, p.energy_defect)]
            writer.writerow([*numbers, p.M, p.M_prime, ";".join(p.flags)])


def write_bracket_csv(brackets, filename):
    with open_file_based_on_extension(filename, "wt") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(["k_low", "k_high", "k", "min_eig_distance", "oracle_k", "confirmed"])
        for b in brackets:
            writer.writerow([*(_number(v) for v in (b.k_low, b.k_high, b.k, b.distance, b.oracle_k)), b.confirmed])


def write_oracle_json(report, filename):
    """
    The oracle's trapped-mode set next to the confirmed brackets and the threshold split.
    """
    document = {
        "oracle_modes": [float(k) for k in report.oracle_modes],
        "confirmed": [float(b.oracle_k) for b in report.brackets if b.confirmed],
        "unconfirmed": [float(b.k) for b in report.brackets if not b.confirmed],
        "segments": [[float(s[0]), float(s[-1]), len(s)] for s in report.split_plan],
        "step": float(report.step),
        "consistent": bool(report.consistent),
    }
    with open_file_based_on_extension(filename, "wt") as f:
        json.dump(document, f, indent=1)
        f.write("\n")


def write_table_csv(header, rows, filename):
    with open_file_based_on_extension(filename, "wt") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_number(v) if isinstance(v, (float, np.floating)) else v for v in row])
