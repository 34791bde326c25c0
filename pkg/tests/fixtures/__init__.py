"""
Test fixtures for the lgdc package.

This module provides reusable test fixtures for unit and integration tests.
"""

from tests.fixtures.tensor_fixtures import *
from tests.fixtures.config_fixtures import *
from tests.fixtures.scene_fixtures import *
from tests.fixtures.api_fixtures import *
