import importlib.util

import pytest


def pytest_configure(config):
    if importlib.util.find_spec("scrmed") is None:
        pytest.exit("scrmed is not installed; run `pip install --no-build-isolation -e .`", returncode=77)
