"""Conversion efficiencies from propagated trajectories.

The waveguide output field is the intracavity optical field scaled by the
square root of the extraction rate (input-output relation with the
reflected pump discriminated and the input operator dropped), so the
emitted photon flux is ``gamma_wg <c†c>`` and the coherent flux is
``gamma_wg |<c>|^2``. Integrating both over the conversion run and
normalizing by the actual t = 0 microwave expectations gives

* ``eta_pop`` -- total population transmitted to the waveguide per input
  microwave photon,
* ``eta_coh`` -- the coherently emitted part, normalized by the initial
  microwave amplitude squared.

Summing the waveguide modes over position is equivalent to integrating
the output flux over time (the field propagates linearly away from the
coupling port), which is how these time integrals represent the total
waveguide population; no position-resolved waveguide state is built.

Both efficiencies are evaluated on run-minus-vacuum-reference integrands
when the trajectory carries a reference twin (the default produced by
:func:`transduction.evolve.run_until_converged`); see the module notes in
:mod:`transduction.evolve` for why the reference subtraction is needed.
Denominators always come from the trajectory's own first sample, which
keeps the definitions exact for the re-normalized truncated coherent
input.
"""

from __future__ import annotations

from dataclasses import dataclass

from .evolve import Trajectory, run_until_converged
from .model import TransducerParams

__all__ = [
    "EfficiencyResult",
    "ConvergenceCheck",
    "UndefinedEfficiencyError",
    "eta_pop",
    "eta_coh",
    "run_conversion",
    "TRUNCATION_CHECK_CAP",
]

# Total-occupation cap used for the enlarged-truncation validation run;
# keeps its superoperator small while covering every sector the weakly
# driven model can reach at reportable magnitude.
TRUNCATION_CHECK_CAP = 4

ETA_POP_KEY = "eta_pop"


class UndefinedEfficiencyError(ValueError):
    """The efficiency denominator vanishes (no microwave input)."""


@dataclass
class ConvergenceCheck:
    """Outcome of a robustness re-run (enlarged truncation or halved dt)."""

    name: str
    delta_relative: float
    passed: bool
    detail: str


@dataclass
class EfficiencyResult:
    """Conversion efficiencies plus the provenance needed to reproduce them."""

    eta_pop: float
    eta_coh: float
    t_final: float
    n_mw_initial: float
    a_mw_initial_sq: float
    floor_flux: float
    converged: bool
    engine: str
    dims: tuple[int, ...]
    dt_sample: float
    excitation_cap: int | None = None
    reference_subtracted: bool = True
    truncation_check: ConvergenceCheck | None = None
    sampling_check: ConvergenceCheck | None = None


def _require_converged(traj: Trajectory):
    if not traj.converged:
        raise ValueError("trajectory did not converge; efficiencies are undefined")


def _signal_integral(traj: Trajectory, attr: str) -> float:
    run = getattr(traj, attr)[-1]
    if traj.reference is not None:
        run = run - getattr(traj.reference, attr)[-1]
    return float(run)


def eta_pop(traj: Trajectory, p: TransducerParams) -> float:
    """Population conversion efficiency.

    Waveguide extraction rate times the accumulated optical photon-number
    integral, divided by the initial microwave occupation of the
    trajectory itself.
    """
    _require_converged(traj)
    n0 = float(traj.expectations["n_mw"][0].real)
    if traj.reference is not None:
        n0 -= float(traj.reference.expectations["n_mw"][0].real)
    if n0 <= 0.0:
        raise UndefinedEfficiencyError(
            "initial microwave occupation is zero; eta_pop is undefined (alpha = 0?)"
        )
    return p.gamma_wg * _signal_integral(traj, "int_photon_number") / n0


def eta_coh(traj: Trajectory, p: TransducerParams) -> float:
    """Coherent conversion efficiency.

    Waveguide extraction rate times the accumulated squared coherent
    amplitude integral, divided by the squared initial microwave
    amplitude of the trajectory itself.
    """
    _require_converged(traj)
    a0_sq = float(abs(traj.expectations["a_mw"][0]) ** 2)
    if a0_sq <= 0.0:
        raise UndefinedEfficiencyError(
            "initial microwave amplitude is zero; eta_coh is undefined (alpha = 0?)"
        )
    return p.gamma_wg * _signal_integral(traj, "int_coherent_sq") / a0_sq


def run_conversion(p: TransducerParams, engine: str = "expm",
                   dt_sample: float | None = None, tol: float = 1e-3,
                   horizon: float = 100e-6, *,
                   reference: bool = True,
                   excitation_cap: int | None = None,
                   check_truncation: bool = False,
                   check_sampling: bool = False,
                   robustness_tol: float = 1e-3,
                   return_trajectory: bool = False,
                   **evolve_kwargs):
    """Full conversion run: model construction, propagation, efficiencies.

    Optionally re-runs the conversion with an enlarged truncation
    (``check_truncation``) and with a halved sampling step
    (``check_sampling``) and records the relative shift of ``eta_pop``
    against ``robustness_tol``. The enlarged-truncation run projects onto
    the total-occupation subspace (cap :data:`TRUNCATION_CHECK_CAP`) so
    its superoperator stays tractable.

    Returns an :class:`EfficiencyResult`, or ``(result, trajectory)``
    when ``return_trajectory`` is set.
    """
    if abs(p.alpha) == 0.0:
        raise UndefinedEfficiencyError(
            "alpha = 0: conversion efficiencies are undefined without input"
        )
    traj = run_until_converged(
        p, engine=engine, dt_sample=dt_sample, tol=tol, horizon=horizon,
        reference=reference, excitation_cap=excitation_cap, **evolve_kwargs,
    )
    floor = 0.0
    if traj.reference is not None:
        floor = p.gamma_wg * float(traj.reference.expectations["n_opt"][-1].real)
    result = EfficiencyResult(
        eta_pop=eta_pop(traj, p),
        eta_coh=eta_coh(traj, p),
        t_final=traj.t_final,
        n_mw_initial=float(traj.expectations["n_mw"][0].real),
        a_mw_initial_sq=float(abs(traj.expectations["a_mw"][0]) ** 2),
        floor_flux=floor,
        converged=traj.converged,
        engine=engine,
        dims=p.dims,
        dt_sample=traj.dt,
        excitation_cap=excitation_cap,
        reference_subtracted=reference,
    )

    if check_truncation:
        d = p.dims
        bumped = (d[0] + 1, d[1] + 2, d[2], d[3] + 1)
        cap = excitation_cap if excitation_cap is not None else TRUNCATION_CHECK_CAP
        alt = run_conversion(
            p.with_updates(dims=bumped), engine=engine, dt_sample=dt_sample,
            tol=tol, horizon=horizon, reference=reference,
            excitation_cap=cap, **evolve_kwargs,
        )
        delta = abs(alt.eta_pop - result.eta_pop) / max(abs(result.eta_pop), 1e-30)
        result.truncation_check = ConvergenceCheck(
            name="truncation-doubling",
            delta_relative=delta,
            passed=delta < robustness_tol,
            detail=(
                f"dims {d} -> {bumped} (occupation cap {cap}): "
                f"eta_pop {result.eta_pop:.8g} -> {alt.eta_pop:.8g}"
            ),
        )

    if check_sampling:
        alt = run_conversion(
            p, engine=engine, dt_sample=traj.dt / 2.0, tol=tol, horizon=horizon,
            reference=reference, excitation_cap=excitation_cap, **evolve_kwargs,
        )
        delta = abs(alt.eta_pop - result.eta_pop) / max(abs(result.eta_pop), 1e-30)
        delta_coh = abs(alt.eta_coh - result.eta_coh) / max(abs(result.eta_coh), 1e-30)
        result.sampling_check = ConvergenceCheck(
            name="dt-halving",
            delta_relative=max(delta, delta_coh),
            passed=max(delta, delta_coh) < robustness_tol,
            detail=(
                f"dt {traj.dt:.4g} s -> {alt.dt_sample:.4g} s: "
                f"eta_pop shift {delta:.3g}, eta_coh shift {delta_coh:.3g}"
            ),
        )

    if return_trajectory:
        return result, traj
    return result
