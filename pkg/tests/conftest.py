"""Pytest configuration and shared fixtures.

Loads .env.local if present (same as src/config/settings.py) so CASCADE_* overrides
apply to tests too.
"""
import os

import numpy as np
import pytest
from dotenv import load_dotenv

from src.config.run_config import RunConfig
from tests.helpers.factories import tiny_run_config

if os.path.exists(".env.local"):
    load_dotenv(".env.local")


@pytest.fixture
def rng() -> np.random.Generator:
    """Fresh generator with a fixed seed for every test."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> RunConfig:
    return tiny_run_config()
