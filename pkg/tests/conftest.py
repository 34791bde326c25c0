"""
Pytest configuration and fixtures for lgdc tests.

This file contains shared fixtures and configuration for all test files.
"""
import os
import sys

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

import pytest  # noqa: E402

from lgdc.core.logger import setup_logging  # noqa: E402


@pytest.fixture(autouse=True, scope="session")
def configure_logging():
    """Quiet console logs for the whole test session."""
    setup_logging("WARNING", json_logs=False)


# Import all fixtures from the fixtures module
from tests.fixtures.tensor_fixtures import *  # noqa: E402, F403
from tests.fixtures.config_fixtures import *  # noqa: E402, F403
from tests.fixtures.scene_fixtures import *  # noqa: E402, F403
from tests.fixtures.api_fixtures import *  # noqa: E402, F403
