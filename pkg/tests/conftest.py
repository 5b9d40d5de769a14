import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from heston_ddn.heston import HestonParams, PricingInput, QuadratureConfig
from heston_ddn.dataset import ParameterRanges, lhs_sample, to_pricing_input


REFERENCE_INPUT = PricingInput(
    HestonParams(kappa=2.0, lam=0.09, sigma=0.3, rho=-0.5, v0=0.09),
    s0=100.0, r=0.03, tau=0.5, k=100.0)


@pytest.fixture(scope="session")
def quad():
    return QuadratureConfig()


def random_pricing_inputs(n, seed):
    """LHS-sampled pricing inputs over the default ranges."""
    rows = lhs_sample(n, ParameterRanges(), seed)
    return [to_pricing_input(row) for row in rows]
