"""Shared fixtures.

The full-resolution baseline conversion (spec truncations, full tensor
space, robustness re-runs) dominates the suite's runtime, so it is
computed once per session and shared by every test that needs it.
"""

import numpy as np
import pytest

from transduction import default_params
from transduction.efficiency import run_conversion

TWO_PI = 2 * np.pi


@pytest.fixture(scope="session")
def baseline_params():
    return default_params()


@pytest.fixture(scope="session")
def small_params():
    """Baseline rates on minimal truncations: fast, converged to ~1e-4."""
    return default_params(dims=(2, 2, 2, 2))


@pytest.fixture(scope="session")
def small_run(small_params):
    """Conversion at minimal truncations with the trajectory attached."""
    return run_conversion(small_params, return_trajectory=True)


@pytest.fixture(scope="session")
def baseline_full_run(baseline_params):
    """The flagship run: full tensor space at the default truncations.
    Takes several minutes; everything downstream shares it. Robustness
    re-runs (enlarged truncation, halved dt) happen in the acceptance
    module on the occupation-capped engine, which this suite separately
    pins to the full-space result."""
    return run_conversion(baseline_params, return_trajectory=True)


@pytest.fixture(scope="session")
def baseline_capped_run(baseline_params):
    """Baseline on the occupation-capped engine: the fast workhorse for
    sweeps and robustness comparisons."""
    return run_conversion(baseline_params, excitation_cap=4, return_trajectory=True)
