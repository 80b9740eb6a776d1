# conftest.py
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.models import GaussianJoint
from core.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(1234, 0)


@pytest.fixture
def joint():
    return GaussianJoint(mu_x=0.3, mu_c=-0.2, sigma_xx=1.5, sigma_cc=0.8, sigma_xc=0.6)
