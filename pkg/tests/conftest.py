"""
Shared pytest configuration and fixtures.
"""

from pathlib import Path

import numpy as np
import pytest

from quadnpmle.config import _DEFAULTS, get_settings
from quadnpmle.logs_utils import register_main_push_log, set_debug


def pytest_configure(config):
    """Global test configuration."""
    print("\n🧪 Starting quadnpmle tests")


def pytest_unconfigure(config):
    """Cleanup after tests."""
    print("\n✅ Tests completed")


@pytest.fixture(scope="session")
def project_root():
    """Project root directory."""
    return Path(__file__).parent.parent


@pytest.fixture(scope="session")
def temp_dir(tmp_path_factory):
    """Temporary directory for tests."""
    return tmp_path_factory.mktemp("quadnpmle_tests")


@pytest.fixture
def rng():
    """Seeded generator, fresh for every test."""
    return np.random.default_rng(20240611)


@pytest.fixture
def clean_settings(monkeypatch):
    """Settings cache cleared before and after, with no config env leaking in."""
    for key in _DEFAULTS:
        monkeypatch.delenv(key, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(autouse=True)
def reset_logging():
    """Each test starts with the stderr fallback sink and no debug override."""
    register_main_push_log(None)
    set_debug(None)
    yield
    register_main_push_log(None)
    set_debug(None)
