"""Parameter sweeps over the transducer model and a simplex optimizer.

Sweep axes address either raw model fields (any rate/coupling name of
:class:`~transduction.model.TransducerParams`) or the derived quality
knobs that figure captions are written in:

* ``Q_MW``   -- microwave quality factor, mapped to ``gamma_mw = omega_mw / Q``
* ``Q_m``    -- mechanical quality factor, mapped to ``gamma_m = omega_m / Q``
* ``T2_star``-- electron pure-dephasing time, mapped to ``gamma_dephasing = 1 / T2*``

Grid points run independently (optionally in a process pool); a failure
at one point is recorded with its diagnostic and never aborts the rest of
the grid. Output ordering is a pure function of the spec, regardless of
execution order.
"""

from __future__ import annotations

import itertools
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields

import numpy as np

from .efficiency import EfficiencyResult, run_conversion
from .model import TransducerParams, quality_to_rate

__all__ = [
    "SweepAxis",
    "SweepSpec",
    "SweepPoint",
    "SweepResult",
    "NelderMeadResult",
    "DERIVED_KNOBS",
    "apply_axis",
    "sweep",
    "nelder_mead",
]


def _set_q_mw(p: TransducerParams, q: float) -> TransducerParams:
    return p.with_updates(gamma_mw=quality_to_rate(p.omega_mw, q))


def _set_q_m(p: TransducerParams, q: float) -> TransducerParams:
    return p.with_updates(gamma_m=quality_to_rate(p.omega_m, q))


def _set_t2_star(p: TransducerParams, t2: float) -> TransducerParams:
    if t2 <= 0:
        raise ValueError(f"T2_star must be > 0, got {t2}")
    rate = 0.0 if np.isinf(t2) else 1.0 / t2
    return p.with_updates(gamma_dephasing=rate)


DERIVED_KNOBS = {
    "Q_MW": _set_q_mw,
    "Q_m": _set_q_m,
    "T2_star": _set_t2_star,
}

_PARAM_FIELDS = {f.name for f in dataclass_fields(TransducerParams)} - {"dims"}


def apply_axis(p: TransducerParams, name: str, value: float) -> TransducerParams:
    """Return params with one named knob set to ``value``.

    ``name`` is either a derived knob (``Q_MW``, ``Q_m``, ``T2_star``) or
    a raw field of :class:`TransducerParams`.
    """
    if name in DERIVED_KNOBS:
        return DERIVED_KNOBS[name](p, value)
    if name in _PARAM_FIELDS:
        return p.with_updates(**{name: value})
    raise ValueError(
        f"axis {name!r} resolves to no parameter; expected one of "
        f"{sorted(DERIVED_KNOBS)} or a TransducerParams field"
    )


@dataclass(frozen=True)
class SweepAxis:
    """One named sweep axis with its strictly monotone grid values."""

    name: str
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) == 0:
            raise ValueError(f"axis {self.name!r} has no grid points")
        diffs = np.diff(self.values)
        if len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError(f"axis {self.name!r} grid must be strictly monotone")


@dataclass(frozen=True)
class SweepSpec:
    """One or two axes swept around a base parameter set."""

    axes: tuple[SweepAxis, ...]
    base: TransducerParams

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not 1 <= len(self.axes) <= 2:
            raise ValueError(f"sweeps support 1 or 2 axes, got {len(self.axes)}")
        for ax in self.axes:
            apply_axis(self.base, ax.name, ax.values[0])  # validates the name

    def grid(self) -> list[tuple[float, ...]]:
        return list(itertools.product(*(ax.values for ax in self.axes)))


@dataclass
class SweepPoint:
    """Result record for one grid point; exactly one of result/error is set."""

    coords: tuple[float, ...]
    result: EfficiencyResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list[SweepPoint] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(not pt.ok for pt in self.points)

    def eta_pop_grid(self) -> np.ndarray:
        """eta_pop on the grid (NaN at failed points); shaped by the axes."""
        shape = tuple(len(ax.values) for ax in self.spec.axes)
        vals = np.array(
            [pt.result.eta_pop if pt.ok else np.nan for pt in self.points]
        )
        return vals.reshape(shape)


def _run_point(args):
    params, coords, axis_names, run_kwargs = args
    try:
        for name, value in zip(axis_names, coords):
            params = apply_axis(params, name, value)
        return SweepPoint(coords=coords, result=run_conversion(params, **run_kwargs))
    except Exception:
        return SweepPoint(coords=coords, error=traceback.format_exc(limit=4))


def sweep(spec: SweepSpec, parallelism: int = 1, **run_kwargs) -> SweepResult:
    """Run the conversion at every grid point of the spec.

    ``run_kwargs`` are forwarded to
    :func:`transduction.efficiency.run_conversion`. With
    ``parallelism > 1`` the points execute in a process pool; each worker
    owns its full model state and results are reassembled in grid order,
    so the output is independent of scheduling.
    """
    axis_names = [ax.name for ax in spec.axes]
    jobs = [(spec.base, coords, axis_names, run_kwargs) for coords in spec.grid()]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            points = list(pool.map(_run_point, jobs))
    else:
        points = [_run_point(job) for job in jobs]
    return SweepResult(spec=spec, points=points)


@dataclass
class NelderMeadResult:
    x_best: np.ndarray
    f_best: float
    iterations: int
    n_evaluations: int
    trace: list[tuple[int, np.ndarray, float]]


def nelder_mead(objective, x0, initial_step=None, xtol: float = 1e-8,
                ftol: float = 0.0, max_iter: int = 1000) -> NelderMeadResult:
    """Downhill-simplex minimization (reflection 1, expansion 2,
    contraction 0.5, shrink 0.5).

    Terminates when the simplex diameter drops below ``xtol``, the spread
    of vertex values drops below ``ftol``, or ``max_iter`` iterations
    elapse. The value spread can sit at rounding level while the simplex
    still straddles the optimum, so ``ftol`` is disabled by default;
    enable it for noisy or plateaued objectives. Never returns a point
    worse than the best vertex ever evaluated.

    Parameters
    ----------
    objective : callable
        Scalar function of a 1-D parameter vector.
    x0 : array-like
        Starting point; the initial simplex perturbs each coordinate by
        ``initial_step`` (default: 5% of the coordinate, or 2.5e-4 for
        zero coordinates).
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    ndim = x0.size
    if ndim < 1:
        raise ValueError("optimization needs at least one dimension")

    if initial_step is None:
        steps = np.where(x0 != 0.0, 0.05 * np.abs(x0), 2.5e-4)
    else:
        steps = np.broadcast_to(np.asarray(initial_step, dtype=float), (ndim,)).copy()
        if np.any(steps == 0.0):
            raise ValueError("initial_step must be nonzero in every coordinate")

    simplex = [x0.copy()]
    for i in range(ndim):
        v = x0.copy()
        v[i] += steps[i]
        simplex.append(v)
    simplex = np.array(simplex)

    n_evals = 0

    def f(x):
        nonlocal n_evals
        n_evals += 1
        return float(objective(x))

    values = np.array([f(v) for v in simplex])
    if not np.all(np.isfinite(values)):
        raise ValueError("objective is not finite on the initial simplex")

    best_x = simplex[np.argmin(values)].copy()
    best_f = float(values.min())
    trace: list[tuple[int, np.ndarray, float]] = [(0, best_x.copy(), best_f)]

    iteration = 0
    while iteration < max_iter:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if values[0] < best_f:
            best_f = float(values[0])
            best_x = simplex[0].copy()

        diameter = np.abs(simplex[1:] - simplex[0]).max()
        spread = values[-1] - values[0]
        if diameter < xtol or spread < ftol:
            break
        iteration += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        reflected = centroid + (centroid - worst)
        f_r = f(reflected)
        if f_r < values[0]:
            expanded = centroid + 2.0 * (centroid - worst)
            f_e = f(expanded)
            if f_e < f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
        elif f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
        else:
            if f_r < values[-1]:
                contracted = centroid + 0.5 * (reflected - centroid)
            else:
                contracted = centroid + 0.5 * (worst - centroid)
            f_c = f(contracted)
            if f_c < min(f_r, values[-1]):
                simplex[-1], values[-1] = contracted, f_c
            else:
                for i in range(1, ndim + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    values[i] = f(simplex[i])
        if values.min() < best_f:
            i_min = int(np.argmin(values))
            best_f = float(values[i_min])
            best_x = simplex[i_min].copy()
        trace.append((iteration, best_x.copy(), best_f))

    return NelderMeadResult(
        x_best=best_x, f_best=best_f, iterations=iteration,
        n_evaluations=n_evals, trace=trace,
    )
