"""Command-line interface: configuration, runs, and result serialization.

Subcommands
-----------
simulate  -- one conversion run: trajectory CSV plus summary JSON
sweep     -- 1-D or 2-D parameter sweep: long-format CSV plus SVG figure
optimize  -- simplex maximization of eta_pop over named parameters
fields    -- grid post-processing (volumes | mass | gmap | piezo | wavelengths)
check     -- modulation-window verdict and derived rates for a config
plot      -- re-render a previously written CSV as SVG

Configuration is a JSON file. Frequencies, couplings and decay rates in
the ``parameters`` block are ordinary frequencies in Hz (values as they
are quoted, nu = omega / 2 pi); conversion to angular units happens once
at load time. Dissipation channels accept either a rate or a quality
factor, never both. Unknown keys anywhere are rejected.

Exit codes: 0 success, 1 configuration error, 2 convergence failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, efficiency, evolve, fields, model, svgfig
from .sweep import SweepAxis, SweepSpec, apply_axis, nelder_mead, sweep as run_sweep

__all__ = ["main", "ConfigError", "load_config", "params_from_config"]

TWO_PI = 2.0 * math.pi

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONVERGENCE = 2


class ConfigError(ValueError):
    """The configuration file is malformed or inconsistent."""


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------

_PARAM_KEYS = {
    "nu_mw", "nu_m", "delta_e", "delta_opt", "rabi",
    "g_mw_m", "g_m_e", "g_e_opt",
    "gamma_mw", "Q_mw", "gamma_m", "Q_m", "gamma_e",
    "gamma_opt", "Q_opt", "nu_opt", "gamma_wg",
    "T2_star", "alpha",
}
_ENGINE_KEYS = {
    "dims", "dt_sample", "tol", "horizon", "engine", "excitation_cap",
    "reference", "check_truncation", "check_sampling", "validate_states",
}
_SWEEP_KEYS = {"axes", "parallelism"}
_AXIS_KEYS = {"name", "points", "grid"}
_GRID_KEYS = {"type", "start", "stop", "num"}
_OPTIMIZE_KEYS = {"axes", "x0", "initial_step", "xtol", "ftol", "max_iter"}
_OUTPUT_KEYS = {"trajectory_csv", "summary_json", "sweep_csv", "sweep_svg", "report_json"}
_TOP_KEYS = {"parameters", "engine", "sweep", "optimize", "output"}

_DEFAULT_OUTPUT = {
    "trajectory_csv": "trajectory.csv",
    "summary_json": "summary.json",
    "sweep_csv": "sweep.csv",
    "sweep_svg": "sweep.svg",
    "report_json": "report.json",
}


def _reject_unknown(block: dict, allowed: set, where: str):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def load_config(path: str | None) -> dict:
    """Read and structurally validate a config file (missing path = all defaults)."""
    if path is None:
        cfg = {}
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, "config")
    _reject_unknown(cfg.get("parameters", {}), _PARAM_KEYS, "parameters")
    _reject_unknown(cfg.get("engine", {}), _ENGINE_KEYS, "engine")
    _reject_unknown(cfg.get("output", {}), _OUTPUT_KEYS, "output")
    if "sweep" in cfg:
        _reject_unknown(cfg["sweep"], _SWEEP_KEYS, "sweep")
        for ax in cfg["sweep"].get("axes", []):
            _reject_unknown(ax, _AXIS_KEYS, "sweep axis")
            if "grid" in ax:
                _reject_unknown(ax["grid"], _GRID_KEYS, "sweep axis grid")
    if "optimize" in cfg:
        _reject_unknown(cfg["optimize"], _OPTIMIZE_KEYS, "optimize")
    return cfg


def _channel_rate(block: dict, rate_key: str, q_key: str, omega: float,
                  default_rate: float) -> float:
    """Resolve one dissipation channel from a rate (Hz) or a quality factor."""
    has_rate, has_q = rate_key in block, q_key in block
    if has_rate and has_q:
        raise ConfigError(f"give exactly one of {rate_key!r} or {q_key!r}, not both")
    if has_rate:
        return TWO_PI * float(block[rate_key])
    if has_q:
        return model.quality_to_rate(omega, float(block[q_key]))
    return default_rate


def params_from_config(cfg: dict, dims_override=None) -> model.TransducerParams:
    """Build angular-unit model parameters from the Hz-denominated config."""
    block = cfg.get("parameters", {})
    base = model.default_params()

    nu_m = float(block.get("nu_m", 12.5e9))
    omega_m = TWO_PI * nu_m
    omega_mw = TWO_PI * float(block.get("nu_mw", nu_m))
    delta_opt = TWO_PI * float(block.get("delta_opt", nu_m))
    # electron detuning defaults to the mechanical frequency (resonance
    # condition of the conversion scheme); override with delta_e.
    delta_e = TWO_PI * float(block.get("delta_e", nu_m))

    nu_opt = float(block.get("nu_opt", 470e12))
    gamma_opt = _channel_rate(block, "gamma_opt", "Q_opt", TWO_PI * nu_opt,
                              base.gamma_opt_internal)
    if "gamma_wg" in block:
        gamma_wg = TWO_PI * float(block["gamma_wg"])
    else:
        gamma_wg = gamma_opt  # critical coupling

    t2 = block.get("T2_star", "inf")
    if isinstance(t2, str):
        if t2.lower() not in ("inf", "infinity"):
            raise ConfigError(f"T2_star must be seconds or 'inf', got {t2!r}")
        gamma_dephasing = 0.0
    else:
        t2 = float(t2)
        if t2 <= 0:
            raise ConfigError(f"T2_star must be > 0, got {t2}")
        gamma_dephasing = 1.0 / t2  # plain reciprocal, no 2 pi

    dims = dims_override
    if dims is None:
        dims = tuple(cfg.get("engine", {}).get("dims", model.DEFAULT_DIMS))

    try:
        return model.TransducerParams(
            omega_mw=omega_mw,
            omega_m=omega_m,
            delta_e=delta_e,
            delta_opt=delta_opt,
            omega_rabi=TWO_PI * float(block.get("rabi", 5e9)),
            g_mw_m=TWO_PI * float(block.get("g_mw_m", 0.3e6)),
            g_m_e=TWO_PI * float(block.get("g_m_e", 16.4e6)),
            g_e_opt=TWO_PI * float(block.get("g_e_opt", 1e9)),
            gamma_mw=_channel_rate(block, "gamma_mw", "Q_mw", omega_mw, base.gamma_mw),
            gamma_m=_channel_rate(block, "gamma_m", "Q_m", omega_m, base.gamma_m),
            gamma_e=TWO_PI * float(block.get("gamma_e", 10e6)),
            gamma_opt_internal=gamma_opt,
            gamma_wg=gamma_wg,
            gamma_dephasing=gamma_dephasing,
            alpha=complex(block.get("alpha", 0.1)),
            dims=dims,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _engine_options(cfg: dict, args) -> dict:
    block = dict(cfg.get("engine", {}))
    block.pop("dims", None)
    opts = {
        "engine": block.pop("engine", "expm"),
        "dt_sample": block.pop("dt_sample", None),
        "tol": block.pop("tol", 1e-3),
        "horizon": block.pop("horizon", 100e-6),
        "reference": block.pop("reference", True),
        "excitation_cap": block.pop("excitation_cap", None),
        "check_truncation": block.pop("check_truncation", False),
        "check_sampling": block.pop("check_sampling", False),
        "validate_states": block.pop("validate_states", True),
    }
    if getattr(args, "engine", None):
        opts["engine"] = args.engine
    return opts


def _resolved_config(cfg: dict, p: model.TransducerParams, opts: dict) -> dict:
    return {
        "version": __version__,
        "config": cfg,
        "resolved_parameters_rad_per_s": {
            "omega_mw": p.omega_mw, "omega_m": p.omega_m,
            "delta_e": p.delta_e, "delta_opt": p.delta_opt,
            "omega_rabi": p.omega_rabi,
            "g_mw_m": p.g_mw_m, "g_m_e": p.g_m_e, "g_e_opt": p.g_e_opt,
            "gamma_mw": p.gamma_mw, "gamma_m": p.gamma_m, "gamma_e": p.gamma_e,
            "gamma_opt_internal": p.gamma_opt_internal, "gamma_wg": p.gamma_wg,
            "gamma_dephasing": p.gamma_dephasing,
            "alpha_re": p.alpha.real, "alpha_im": p.alpha.imag,
            "dims": list(p.dims),
        },
        "engine_options": {k: v for k, v in opts.items()},
    }


def _check_to_dict(check):
    if check is None:
        return None
    return {
        "name": check.name,
        "delta_relative": check.delta_relative,
        "passed": check.passed,
        "detail": check.detail,
    }


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_trajectory_csv(path: str, traj: evolve.Trajectory, p: model.TransducerParams):
    n0 = traj.expectations["n_mw"][0].real
    a0_sq = abs(traj.expectations["a_mw"][0]) ** 2
    int_pop = traj.int_photon_number
    int_coh = traj.int_coherent_sq
    if traj.reference is not None:
        int_pop = int_pop - traj.reference.int_photon_number
        int_coh = int_coh - traj.reference.int_coherent_sq
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("time_s,p_mw,p_m,p_e,p_opt,wg_cum,eta_pop_cum,eta_coh_cum\n")
        for k in range(len(traj.times)):
            row = (
                traj.times[k],
                traj.expectations["n_mw"][k].real,
                traj.expectations["n_m"][k].real,
                traj.expectations["n_e"][k].real,
                traj.expectations["n_opt"][k].real,
                p.gamma_wg * traj.int_photon_number[k],
                p.gamma_wg * int_pop[k] / n0 if n0 > 0 else 0.0,
                p.gamma_wg * int_coh[k] / a0_sq if a0_sq > 0 else 0.0,
            )
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def _out_path(args, cfg, key) -> str:
    name = cfg.get("output", {}).get(key, _DEFAULT_OUTPUT[key])
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _threads(args) -> int | None:
    """Worker count from --threads, else the TRANSDUCTION_THREADS env var."""
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("TRANSDUCTION_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"TRANSDUCTION_THREADS must be an integer, got {env!r}")
    return None


def _parse_dims(text):
    if text is None:
        return None
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"--dims must be four comma-separated integers, got {text!r}")
    if len(dims) != 4:
        raise ConfigError(f"--dims must have four entries, got {text!r}")
    return dims


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    p = params_from_config(cfg, dims_override=_parse_dims(args.dims))
    opts = _engine_options(cfg, args)
    result, traj = efficiency.run_conversion(p, return_trajectory=True, **opts)

    csv_path = _out_path(args, cfg, "trajectory_csv")
    _write_trajectory_csv(csv_path, traj, p)
    summary = _resolved_config(cfg, p, opts)
    summary.update(
        eta_pop=result.eta_pop,
        eta_coh=result.eta_coh,
        t_f=result.t_final,
        n_mw_initial=result.n_mw_initial,
        a_mw_initial_sq=result.a_mw_initial_sq,
        floor_flux=result.floor_flux,
        converged=result.converged,
        convergence_reason=traj.convergence_reason,
        trace_drift=traj.trace_drift,
        herm_defect=traj.herm_defect,
        min_eigenvalue=traj.min_eigenvalue,
        truncation_check=_check_to_dict(result.truncation_check),
        sampling_check=_check_to_dict(result.sampling_check),
    )
    json_path = _out_path(args, cfg, "summary_json")
    _write_json(json_path, summary)
    print(f"eta_pop = {result.eta_pop:.6f}")
    print(f"eta_coh = {result.eta_coh:.6f}")
    print(f"t_f     = {result.t_final:.6e} s")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def _axis_values(ax: dict) -> list[float]:
    if ("points" in ax) == ("grid" in ax):
        raise ConfigError("each sweep axis needs exactly one of 'points' or 'grid'")
    if "points" in ax:
        return [float(v) for v in ax["points"]]
    grid = ax["grid"]
    for key in ("type", "start", "stop", "num"):
        if key not in grid:
            raise ConfigError(f"sweep grid needs {key!r}")
    num = int(grid["num"])
    start, stop = float(grid["start"]), float(grid["stop"])
    if grid["type"] == "linear":
        return list(np.linspace(start, stop, num))
    if grid["type"] == "log":
        if start <= 0 or stop <= 0:
            raise ConfigError("log grid needs positive start/stop")
        return list(np.geomspace(start, stop, num))
    raise ConfigError(f"unknown grid type {grid['type']!r}")


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if "sweep" not in cfg or not cfg["sweep"].get("axes"):
        raise ConfigError("config needs a 'sweep' block with at least one axis")
    p = params_from_config(cfg, dims_override=_parse_dims(args.dims))
    opts = _engine_options(cfg, args)
    opts.pop("check_truncation", None)
    opts.pop("check_sampling", None)
    axes = []
    for ax in cfg["sweep"]["axes"]:
        if "name" not in ax:
            raise ConfigError("sweep axis needs a 'name'")
        axes.append(SweepAxis(name=ax["name"], values=tuple(_axis_values(ax))))
    try:
        spec = SweepSpec(axes=tuple(axes), base=p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    parallelism = _threads(args) or int(cfg["sweep"].get("parallelism", 1))
    parallelism = max(1, parallelism)

    result = run_sweep(spec, parallelism=parallelism, **opts)

    csv_path = _out_path(args, cfg, "sweep_csv")
    names = [ax.name for ax in spec.axes]
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names + ["eta_pop", "eta_coh", "status"]) + "\n")
        for pt in result.points:
            coords = [f"{c:.12g}" for c in pt.coords]
            if pt.ok:
                fh.write(",".join(coords + [
                    f"{pt.result.eta_pop:.12g}", f"{pt.result.eta_coh:.12g}", "ok",
                ]) + "\n")
            else:
                fh.write(",".join(coords + ["nan", "nan", "error"]) + "\n")

    svg_path = _out_path(args, cfg, "sweep_svg")
    _write_sweep_svg(svg_path, spec, result)

    n_total = len(result.points)
    n_ok = n_total - result.n_failed
    for pt in result.points:
        if not pt.ok:
            sys.stderr.write(f"point {pt.coords} failed:\n{pt.error}\n")
    print(f"{n_ok}/{n_total} points succeeded; wrote {csv_path} and {svg_path}")
    if n_ok < 0.9 * n_total:
        return EXIT_CONVERGENCE
    return EXIT_OK


def _is_log_axis(values) -> bool:
    v = np.asarray(values, dtype=float)
    if v.size < 3 or np.any(v <= 0):
        return False
    lin = abs(np.diff(v, 2)).max() <= 1e-9 * abs(v).max()
    ratios = v[1:] / v[:-1]
    geo = abs(ratios - ratios[0]).max() <= 1e-9 * abs(ratios[0])
    return geo and not lin


def _write_sweep_svg(path: str, spec: SweepSpec, result):
    if len(spec.axes) == 1:
        ax = spec.axes[0]
        x = np.asarray(ax.values)
        eta_p = np.array([pt.result.eta_pop if pt.ok else np.nan for pt in result.points])
        eta_c = np.array([pt.result.eta_coh if pt.ok else np.nan for pt in result.points])
        svg = svgfig.line_plot(
            x, {"eta_pop": eta_p, "eta_coh": eta_c},
            xlabel=ax.name, ylabel="conversion efficiency",
            xlog=_is_log_axis(x), title="efficiency sweep",
        )
    else:
        ax0, ax1 = spec.axes
        z = result.eta_pop_grid()
        svg = svgfig.heatmap(
            np.asarray(ax0.values), np.asarray(ax1.values), z,
            xlabel=ax0.name, ylabel=ax1.name, zlabel="eta_pop",
            xlog=_is_log_axis(ax0.values), ylog=_is_log_axis(ax1.values),
            title="efficiency sweep",
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg + "\n")


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    if "optimize" not in cfg:
        raise ConfigError("config needs an 'optimize' block")
    block = cfg["optimize"]
    axes = block.get("axes")
    x0 = block.get("x0")
    if not axes or not x0 or len(axes) != len(x0):
        raise ConfigError("'optimize' needs matching 'axes' and 'x0' lists")
    p = params_from_config(cfg, dims_override=_parse_dims(args.dims))
    opts = _engine_options(cfg, args)
    opts.pop("check_truncation", None)
    opts.pop("check_sampling", None)

    # Axis values arrive in Hz (or seconds for T2_star); convert the raw
    # angular fields, leave derived knobs and alpha untouched.
    def to_internal(name, v):
        if name in ("Q_MW", "Q_m", "T2_star", "alpha"):
            return float(v)
        return TWO_PI * float(v)

    def from_internal(name, v):
        if name in ("Q_MW", "Q_m", "T2_star", "alpha"):
            return float(v)
        return float(v) / TWO_PI

    def objective(x):
        trial = p
        for name, v in zip(axes, x):
            trial = apply_axis(trial, name, v)
        try:
            return -efficiency.run_conversion(trial, **opts).eta_pop
        except Exception:
            return math.inf

    x0_internal = [to_internal(n, v) for n, v in zip(axes, x0)]
    nm = nelder_mead(
        objective, x0_internal,
        initial_step=block.get("initial_step"),
        xtol=float(block.get("xtol", 1e-3)),
        ftol=float(block.get("ftol", 1e-8)),
        max_iter=int(block.get("max_iter", 60)),
    )
    report = _resolved_config(cfg, p, opts)
    report.update(
        objective="eta_pop (maximized)",
        axes=list(axes),
        x_best={n: from_internal(n, v) for n, v in zip(axes, nm.x_best)},
        f_best=-nm.f_best,
        iterations=nm.iterations,
        n_evaluations=nm.n_evaluations,
        simplex_trace=[
            {"iteration": it, "x": [from_internal(n, v) for n, v in zip(axes, x)],
             "eta_pop": -f}
            for it, x, f in nm.trace
        ],
    )
    path = _out_path(args, cfg, "report_json")
    _write_json(path, report)
    best = ", ".join(f"{n} = {from_internal(n, v):.6g}" for n, v in zip(axes, nm.x_best))
    print(f"best eta_pop = {-nm.f_best:.6f} at {best} ({nm.n_evaluations} evaluations)")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_fields(args) -> int:
    grid = fields.load_grid(args.grid)
    out = {}
    task = args.task
    if task == "volumes":
        mech = fields.mech_mode_volume(grid)
        opt = fields.opt_mode_volume(grid)
        out = {
            "V_mech_m3": mech.volume,
            "V_mech_per_lambda_p3": mech.per_lambda_p3,
            "V_mech_per_lambda_s3": mech.per_lambda_s3,
            "lambda_p_m": mech.lambda_p,
            "lambda_s_m": mech.lambda_s,
            "V_opt_m3": opt.volume,
            "V_opt_per_lambda_n3": opt.per_lambda_n3,
        }
    elif task == "mass":
        m_eff = fields.effective_mass(grid)
        out = {
            "m_eff_kg": m_eff,
            "x_zpf_m": fields.x_zpf(m_eff, grid.omega_m),
        }
    elif task == "gmap":
        frame = fields.CrystalFrame(math.radians(args.phi))
        chi = fields.CHI_STRAIN_DEFAULT if args.chi is None else TWO_PI * args.chi
        gmap = fields.g_m_e_map(grid, chi=chi, frame=frame)
        out = {
            "phi_deg": args.phi,
            "max_g_m_e_over_2pi_Hz": gmap.max_abs / TWO_PI,
            "argmax_index": list(gmap.argmax_index),
            "argmax_position_m": list(gmap.argmax_position),
        }
        if args.line:
            axis, i, j = _parse_line(args.line)
            positions, values = fields.extract_line(gmap.rate, grid, axis, (i, j))
            line_path = os.path.join(args.out or ".", "gmap_line.csv")
            os.makedirs(args.out or ".", exist_ok=True)
            with open(line_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(f"position_{axis}_m,g_m_e_over_2pi_Hz\n")
                for pos, val in zip(positions, values):
                    fh.write(f"{pos:.12g},{val / TWO_PI:.12g}\n")
            out["line_profile_csv"] = line_path
    elif task == "piezo":
        if not args.piezo_json:
            raise ConfigError("task 'piezo' needs --piezo-json with the 3x6 tensor")
        with open(args.piezo_json, encoding="utf-8") as fh:
            tensor = json.load(fh)
        out = {"g_mw_m_over_2pi_Hz": fields.piezo_coupling(grid, tensor) / TWO_PI}
    elif task == "wavelengths":
        lam_p, lam_s = fields.acoustic_wavelengths(
            grid.youngs_modulus, grid.poisson_ratio,
            float(grid.density.max()), grid.omega_m,
        )
        out = {"lambda_p_m": lam_p, "lambda_s_m": lam_s}
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown fields task {task!r}")

    out["version"] = __version__
    out["grid"] = args.grid
    path = os.path.join(args.out or ".", f"fields_{task}.json")
    os.makedirs(args.out or ".", exist_ok=True)
    _write_json(path, out)
    for key, value in sorted(out.items()):
        print(f"{key}: {value}")
    return EXIT_OK


def _parse_line(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--line must be 'axis,i,j', got {text!r}")
    axis = parts[0].strip()
    try:
        return axis, int(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--line indices must be integers, got {text!r}")


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    p = params_from_config(cfg, dims_override=_parse_dims(args.dims))
    block = cfg.get("parameters", {})
    nu_opt = float(block.get("nu_opt", 470e12))
    omega_opt = TWO_PI * nu_opt
    # the optical drive sits one detuning below the cavity resonance
    omega_d = omega_opt - p.delta_opt
    inside = model.check_modulation_window(
        omega_opt, p.gamma_opt_total, omega_d, p.omega_m
    )
    lines = [
        f"modulation window: {'PASS' if inside else 'FAIL'} "
        f"(drive and sideband {'inside' if inside else 'outside'} the cavity line)",
        f"  nu_opt          = {nu_opt:.6g} Hz",
        f"  gamma_opt_total = {p.gamma_opt_total / TWO_PI:.6g} Hz (angular {p.gamma_opt_total:.6g})",
        f"  nu_d            = {omega_d / TWO_PI:.6g} Hz",
        f"  nu_m            = {p.omega_m / TWO_PI:.6g} Hz",
        "derived rates:",
        f"  gamma_mw  = {p.gamma_mw / TWO_PI:.6g} Hz",
        f"  gamma_m   = {p.gamma_m / TWO_PI:.6g} Hz",
        f"  gamma_e   = {p.gamma_e / TWO_PI:.6g} Hz",
        f"  gamma_opt = {p.gamma_opt_internal / TWO_PI:.6g} Hz",
        f"  gamma_wg  = {p.gamma_wg / TWO_PI:.6g} Hz",
        f"  gamma_dephasing = {p.gamma_dephasing:.6g} 1/s",
    ]
    if args.grid:
        grid = fields.load_grid(args.grid)
        m_eff = fields.effective_mass(grid)
        zpf = fields.x_zpf(m_eff, grid.omega_m)
        lam_p, lam_s = fields.acoustic_wavelengths(
            grid.youngs_modulus, grid.poisson_ratio,
            float(grid.density.max()), grid.omega_m,
        )
        lines += [
            "grid-derived quantities:",
            f"  m_eff    = {m_eff:.6g} kg",
            f"  x_zpf    = {zpf:.6g} m",
            f"  lambda_p = {lam_p:.6g} m",
            f"  lambda_s = {lam_s:.6g} m",
        ]
    print("\n".join(lines))
    return EXIT_OK


def _read_csv(path: str):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=str)
    return header, data


def cmd_plot(args) -> int:
    header, raw = _read_csv(args.csv)
    out_path = args.svg or (os.path.splitext(args.csv)[0] + ".svg")
    if args.kind == "populations":
        data = raw.astype(float)
        cols = {name: data[:, i] for i, name in enumerate(header)}
        t = cols.pop("time_s")
        series = {k: cols[k] for k in ("p_mw", "p_m", "p_e", "p_opt") if k in cols}
        svg = svgfig.line_plot(t, series, xlabel="time (s)", ylabel="population",
                               title="transducer populations")
    elif args.kind == "efficiency":
        ok = raw[:, -1] == "ok"
        data = np.where(raw[:, :-1] == "nan", "nan", raw[:, :-1]).astype(float)
        x = data[ok, 0]
        series = {"eta_pop": data[ok, -2], "eta_coh": data[ok, -1]}
        svg = svgfig.line_plot(x, series, xlabel=header[0], ylabel="efficiency",
                               xlog=_is_log_axis(x), title="efficiency sweep")
    elif args.kind == "heatmap":
        if len(header) < 5:
            raise ConfigError("heatmap needs a two-axis sweep CSV")
        data = np.where(raw[:, :-1] == "nan", "nan", raw[:, :-1]).astype(float)
        x = np.unique(data[:, 0])
        y = np.unique(data[:, 1])
        z = np.full((x.size, y.size), np.nan)
        for row in data:
            i = int(np.searchsorted(x, row[0]))
            j = int(np.searchsorted(y, row[1]))
            z[i, j] = row[2]
        svg = svgfig.heatmap(x, y, z, xlabel=header[0], ylabel=header[1],
                             zlabel="eta_pop", xlog=_is_log_axis(x),
                             ylog=_is_log_axis(y), title="efficiency sweep")
    else:  # pragma: no cover
        raise ConfigError(f"unknown plot kind {args.kind!r}")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg + "\n")
    print(f"wrote {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transduction",
        description="Microwave-to-optical transduction simulator and analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help="output directory (default: current)")
        sp.add_argument("--threads", type=int, help="worker processes for sweeps")
        sp.add_argument("--engine", choices=("expm", "rk"), help="propagation engine")
        sp.add_argument("--dims", help="subsystem truncations, e.g. 3,4,2,3")
        sp.add_argument("--seed", type=int, help="reserved for future stochastic engines")

    sp = sub.add_parser("simulate", help="single conversion run")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="parameter sweep")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("optimize", help="maximize eta_pop over parameters")
    common(sp)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("fields", help="field-grid post-processing")
    sp.add_argument("grid", help="grid file path")
    sp.add_argument("task", choices=("volumes", "mass", "gmap", "piezo", "wavelengths"))
    sp.add_argument("--out", help="output directory (default: current)")
    sp.add_argument("--phi", type=float, default=0.0, help="crystal rotation (degrees)")
    sp.add_argument("--chi", type=float, default=None,
                    help="strain susceptibility in Hz/strain (default: built-in)")
    sp.add_argument("--line", help="gmap line profile: axis,i,j (node indices)")
    sp.add_argument("--piezo-json", help="JSON file with the 3x6 piezoelectric tensor")
    sp.set_defaults(func=cmd_fields)

    sp = sub.add_parser("check", help="modulation window and derived rates")
    common(sp)
    sp.add_argument("--grid", help="optional grid file for x_zpf and wavelengths")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("plot", help="render a result CSV as SVG")
    sp.add_argument("csv", help="CSV written by simulate or sweep")
    sp.add_argument("kind", choices=("populations", "efficiency", "heatmap"))
    sp.add_argument("--svg", help="output SVG path (default: next to the CSV)")
    sp.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, fields.GridFormatError, efficiency.UndefinedEfficiencyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except evolve.ConvergenceError as exc:
        sys.stderr.write(f"convergence failure: {exc}\n")
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
