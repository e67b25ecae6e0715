"""Pytest configuration and shared fixtures."""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path so tests can import the lab modules
sys.path.insert(0, str(Path(__file__).parent.parent))

# Enable pytest-asyncio
pytest_plugins = ['pytest_asyncio']


# =============================================================================
# Config snippets
# =============================================================================

SUPERSUB_CONFIG = """\
seed = 7
jobs = 1

[[experiment]]
name = "barriers"
kind = "supersub-audit"
samples = 64
mus = [0.5, 1.5]
amplitudes = [1.0]
"""

DISK_RATE_CONFIG = """\
seed = 3

[[experiment]]
name = "disk-rate"
kind = "smooth-rate"
domain = {{ kind = "disk", r = 1.0 }}
solver = {{ h = {h}, mode = "matched" }}
"""


# =============================================================================
# Test Fixtures
# =============================================================================


@pytest.fixture
def temp_dir():
    """Create temporary directory for tests."""
    with tempfile.TemporaryDirectory() as d:
        yield d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_disk():
    from geometry import build_domain
    return build_domain("disk", r=1.0)


@pytest.fixture
def quarter_sector():
    """Sector of opening pi/2 and radius 1 with its vertex at the origin."""
    from geometry import build_domain
    return build_domain("sector", mu=0.5, R=1.0)


@pytest.fixture
def config_file(temp_dir):
    """Write a TOML config into the temp dir and return its path."""
    def write(text: str, name: str = "lab.toml") -> Path:
        path = Path(temp_dir) / name
        path.write_text(text)
        return path

    return write


@pytest.fixture(autouse=True)
def _fresh_singletons():
    """Reset cached settings and the clamp counter between tests."""
    from lab_utils import arcsin_clamps
    from store import reset_singletons
    reset_singletons()
    arcsin_clamps.reset()
    yield
    reset_singletons()
