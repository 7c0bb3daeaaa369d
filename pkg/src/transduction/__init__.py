"""Simulator and analysis toolkit for microwave-to-optical quantum
transduction through a strain-coupled diamond color center.

The package models a four-stage interface (microwave cavity, mechanical
breathing mode, color-center electron, optical cavity) with a Lindblad
master equation, propagates the density matrix, and reports population
and coherent conversion efficiencies. Companion modules sweep and
optimize device parameters and post-process exported cavity field grids
into coupling rates and mode volumes.
"""

__version__ = "0.1.0"

from .efficiency import EfficiencyResult, eta_coh, eta_pop, run_conversion
from .evolve import (
    Trajectory,
    build_liouvillian,
    integrate_rk,
    lindblad_rhs,
    propagate_expm,
    run_until_converged,
)
from .model import (
    TransducerParams,
    build_collapse_channels,
    build_hamiltonian,
    check_modulation_window,
    default_params,
    initial_state,
    quality_to_rate,
)
from .operators import DensityMatrix, HilbertLayout, Operator
from .sweep import SweepAxis, SweepSpec, nelder_mead, sweep

__all__ = [
    "__version__",
    "EfficiencyResult",
    "Trajectory",
    "TransducerParams",
    "DensityMatrix",
    "HilbertLayout",
    "Operator",
    "SweepAxis",
    "SweepSpec",
    "build_collapse_channels",
    "build_hamiltonian",
    "build_liouvillian",
    "check_modulation_window",
    "default_params",
    "eta_coh",
    "eta_pop",
    "initial_state",
    "integrate_rk",
    "lindblad_rhs",
    "nelder_mead",
    "propagate_expm",
    "quality_to_rate",
    "run_conversion",
    "run_until_converged",
    "sweep",
]
