"""Shared fixtures: benchmark constants, the insurance problem, and the desk pilot.

The desk calibration pilot is expensive (minutes); it runs once per session and
is shared between the calibration tests and the acceptance suite.
"""

from __future__ import annotations

import numpy as np
import pytest

from nestmc import alm
from nestmc.calibrate import calibrate
from nestmc.core import PayoffTransform
from nestmc.plans import StructuralConstants

DESK_PILOT_N = 1_000_000
DESK_PILOT_GRID = (8, 16, 32, 64, 128)
DESK_PILOT_SEED = 20240
Q995 = 252.75873881492225  # closed-form benchmark quantile, re-derived in test_alm


@pytest.fixture(scope="session")
def market():
    return alm.default_market()


@pytest.fixture(scope="session")
def contract():
    return alm.default_contract()


@pytest.fixture(scope="session")
def alm_problem(market, contract):
    return alm.make_nested_problem(market, contract, tau=0.0)


@pytest.fixture(scope="session")
def benchmark_constants():
    return StructuralConstants(
        alpha=1.0, beta=0.5, c1=0.025, growth_a=2.0, V1=0.01, sigma1_sq=0.005, tau=0.0
    )


@pytest.fixture(scope="session")
def indicator_at_quantile(market, contract):
    return PayoffTransform.indicator(alm.scr_reference(market, contract, 0.005))


@pytest.fixture(scope="session")
def desk_calibration_report(alm_problem, indicator_at_quantile):
    """Full desk pilot (1e6 outer samples per pass); shared across the session."""
    return calibrate(
        alm_problem,
        indicator_at_quantile,
        K_grid=list(DESK_PILOT_GRID),
        n_pilot=DESK_PILOT_N,
        seed=DESK_PILOT_SEED,
    )


def normal_se(values: np.ndarray) -> float:
    """Standard error of the sample mean."""
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))
