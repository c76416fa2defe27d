import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anonbench.dataset import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def synth16():
    """Small synthetic set shared by read-only tests: 6 identities x 4 samples, 16x16."""
    return generate_synthetic(SyntheticSpec(6, 4, 16, 16, 0.03, seed=5))


@pytest.fixture(scope="session")
def synth_default():
    """The default-config synthetic set: 10 identities x 6 samples, 64x64."""
    return generate_synthetic(SyntheticSpec(10, 6, 64, 64, 0.05, seed=7))
