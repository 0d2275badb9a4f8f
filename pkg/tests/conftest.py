import os

import pytest

from waveguide_scattering.cli.config import read_config


def pytest_addoption(parser):
    parser.addoption(
        "--conf-file",
        action="store",
        help="A path to a run configuration used by the command-line tests (defaults to tests/appconfig.ini)",
        default=None,
    )
    parser.addoption(
        "--full-sweeps",
        action="store_true",
        help="Also run the slow k sweeps on fine meshes",
    )


@pytest.fixture(scope="session")
def conf_file(request):
    return request.config.getoption("--conf-file") or os.path.join(os.path.dirname(__file__), "appconfig.ini")


@pytest.fixture(scope="session")
def full_sweeps(request):
    return request.config.getoption("--full-sweeps")


@pytest.fixture
def run_config(conf_file):
    return read_config(conf_file)


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--full-sweeps"):
        skip_full_sweep = pytest.mark.skip(reason="slow sweep: run with --full-sweeps")
        for item in items:
            if "full_sweep" in item.keywords:
                item.add_marker(skip_full_sweep)
