import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)


def pytest_addoption(parser):
    parser.addoption(
        "--acceptance-only",
        action="store_true",
        help="run only the acceptance criteria",
    )


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--acceptance-only"):
        return
    keep = [it for it in items if "test_acceptance" in it.nodeid]
    items[:] = keep
