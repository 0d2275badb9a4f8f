"""
Miscellaneous file utilities
"""

import bz2
import gzip
import hashlib
import os


def open_file_based_on_extension(filename, mode):
    # Open a file, whether it's uncompressed, bz2 or gz
    filename = os.fspath(filename)
    if filename.endswith(".bz2"):
        return bz2.open(filename, mode, encoding="utf-8")
    elif filename.endswith(".gz"):
        return gzip.open(filename, mode, encoding="utf-8")
    else:
        return open(filename, mode, encoding="utf-8")


def sha256_of_file(filename, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(filename, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def check_identical_files(output_location, expected_output_path, skip=("manifest.json",)):
    """
    Checks that every file of one run directory has a byte-identical counterpart in another
    """
    for name in sorted(os.listdir(expected_output_path)):
        if name.startswith(".") or name in skip:
            continue

        expected_file_path = os.path.join(expected_output_path, name)
        output_file_path = os.path.join(output_location, name)

        assert sha256_of_file(expected_file_path) == sha256_of_file(
            output_file_path
        ), f"File {name} is not the same as the expected output file"
