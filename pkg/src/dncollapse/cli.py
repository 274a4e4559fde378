"""Command line front end: config ingestion, run orchestration, artifacts.

Subcommands
    run                   one evolution with diagnostics and artifacts
    verify-schwarzschild  convergence table on the vacuum interior
    criterion-sweep       amplitude sweep of the trapped-surface criterion
    exponent-sweep        perturbation sweep of the blow-up exponent
    report                re-render the text summary from summary.json

Exit codes: 0 success, 2 configuration error (nothing written), 3 numerical
blowup (partial artifacts on disk), 4 failed check in verify/sweep.
All floating output uses 17 significant digits so identical configs produce
identical bytes.
"""

import argparse
import configparser
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import jsonschema

from .geometry import ConfigurationError, DoubleNullGrid, FieldState, \
    build_grid, default_r_floor
from .initial_data import (CriterionReport, Family, InitialDataSpec,
                           build_initial_data, criterion_functionals,
                           resolved_support)
from .evolution import (EvolutionReport, NumericalBlowupError, SchemeConfig,
                        convergence_study, march)
from .diagnostics import (diagnostics_record, find_apparent_horizon,
                          fit_exponent_on_ray, mass_inequality_check,
                          mass_monotonicity_check, omega_window, ray_table,
                          scalar_bound_constants, track_r_dr_limits,
                          trapped_monotonicity_violations)

TOOL_VERSION = "0.1.0"
ENV_OUT = "DNCOLLAPSE_OUT"
_FMT = "%.17g"

RAY_CSV_COLUMNS = ("r", "m", "mu", "K", "r_nu", "r_lambda", "r2_z", "r2_w")


def _fnum(x) -> str:
    return _FMT % float(x)


# ---------------------------------------------------------------------------
# configuration


_SECTION_KEYS = {
    "grid": ("u_min", "u_max", "v_min", "v_max", "n_u", "n_v"),
    "initial_data": ("family", "M", "epsilon", "amplitude", "v_a", "v_b",
                     "shape_exponent", "r_corner"),
    "scheme": ("r_floor", "corrector_iterations", "constraint_check_cadence",
               "excision_policy", "log_omega_abort", "threads",
               "checkpoint_path", "checkpoint_cadence"),
    "diagnostics": ("rays", "fit_r_lo", "fit_r_hi", "criterion_v1",
                    "criterion_v2"),
    "output": ("out_dir", "dump_grid", "seed"),
    "sweep": ("amplitudes", "epsilons"),
}


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {v!r}")


def _int_list(v) -> Tuple[int, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(s) for s in str(v).split(",") if s.strip())


def _float_list(v) -> Tuple[float, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(s) for s in str(v).split(",") if s.strip())


@dataclass
class RunConfig:
    """One run, fully specified. Equality is exact, used by the round-trip
    tests; all defaults are resolved at parse time except r_floor (left to
    the initial data when absent) and the diagnostics windows."""

    u_min: float
    u_max: float
    v_min: float
    v_max: float
    n_u: int
    n_v: int
    initial: InitialDataSpec
    scheme: SchemeConfig
    rays: Optional[Tuple[int, ...]] = None
    fit_r_lo: Optional[float] = None
    fit_r_hi: Optional[float] = None
    criterion_v1: Optional[float] = None
    criterion_v2: Optional[float] = None
    out_dir: Optional[str] = None
    dump_grid: bool = False
    seed: int = 0  # reserved; the core is deterministic
    amplitudes: Optional[Tuple[float, ...]] = None
    epsilons: Optional[Tuple[float, ...]] = None

    def to_dict(self) -> dict:
        d: Dict[str, dict] = {
            "grid": {"u_min": self.u_min, "u_max": self.u_max,
                     "v_min": self.v_min, "v_max": self.v_max,
                     "n_u": self.n_u, "n_v": self.n_v},
            "initial_data": {"family": self.initial.family.value,
                             "M": self.initial.M,
                             "epsilon": self.initial.epsilon,
                             "amplitude": self.initial.amplitude,
                             "shape_exponent": self.initial.shape_exponent,
                             "r_corner": self.initial.r_corner},
            "scheme": {"corrector_iterations": self.scheme.corrector_iterations,
                       "constraint_check_cadence": self.scheme.constraint_check_cadence,
                       "excision_policy": self.scheme.excision_policy,
                       "log_omega_abort": self.scheme.log_omega_abort,
                       "threads": self.scheme.threads,
                       "checkpoint_cadence": self.scheme.checkpoint_cadence},
            "diagnostics": {},
            "output": {"dump_grid": self.dump_grid, "seed": self.seed},
            "sweep": {},
        }
        if self.initial.v_a is not None:
            d["initial_data"]["v_a"] = self.initial.v_a
        if self.initial.v_b is not None:
            d["initial_data"]["v_b"] = self.initial.v_b
        if self.scheme.r_floor is not None:
            d["scheme"]["r_floor"] = self.scheme.r_floor
        if self.scheme.checkpoint_path is not None:
            d["scheme"]["checkpoint_path"] = self.scheme.checkpoint_path
        if self.rays is not None:
            d["diagnostics"]["rays"] = list(self.rays)
        for key in ("fit_r_lo", "fit_r_hi", "criterion_v1", "criterion_v2"):
            val = getattr(self, key)
            if val is not None:
                d["diagnostics"][key] = val
        if self.out_dir is not None:
            d["output"]["out_dir"] = self.out_dir
        if self.amplitudes is not None:
            d["sweep"]["amplitudes"] = list(self.amplitudes)
        if self.epsilons is not None:
            d["sweep"]["epsilons"] = list(self.epsilons)
        return d

    def to_ini(self) -> str:
        lines = []
        for section, payload in self.to_dict().items():
            if not payload:
                continue
            lines.append(f"[{section}]")
            for key, val in payload.items():
                if isinstance(val, (list, tuple)):
                    val = ",".join(str(x) for x in val)
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


def config_from_dict(raw: dict) -> RunConfig:
    for section, payload in raw.items():
        if section not in _SECTION_KEYS:
            raise ConfigurationError(f"unknown config section [{section}]")
        if not isinstance(payload, dict):
            raise ConfigurationError(f"section [{section}] must map keys to values")
        for key in payload:
            if key not in _SECTION_KEYS[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")

    def get(section, key, cast, default=None, required=False):
        val = raw.get(section, {}).get(key)
        if val is None:
            if required:
                raise ConfigurationError(f"missing required key {key!r} in [{section}]")
            return default
        try:
            return cast(val)
        except (TypeError, ValueError) as err:
            raise ConfigurationError(f"bad value for {key!r} in [{section}]: {err}")

    initial = InitialDataSpec(
        family=get("initial_data", "family", str, required=True),
        M=get("initial_data", "M", float, 0.5),
        epsilon=get("initial_data", "epsilon", float, 0.0),
        amplitude=get("initial_data", "amplitude", float, 0.0),
        v_a=get("initial_data", "v_a", float),
        v_b=get("initial_data", "v_b", float),
        shape_exponent=get("initial_data", "shape_exponent", int, 4),
        r_corner=get("initial_data", "r_corner", float, 1.0),
    )
    scheme = SchemeConfig(
        r_floor=get("scheme", "r_floor", float),
        corrector_iterations=get("scheme", "corrector_iterations", int, 2),
        constraint_check_cadence=get("scheme", "constraint_check_cadence", int, 16),
        excision_policy=get("scheme", "excision_policy", str, "MASK_FUTURE"),
        log_omega_abort=get("scheme", "log_omega_abort", float, 200.0),
        threads=get("scheme", "threads", int, 1),
        checkpoint_path=get("scheme", "checkpoint_path", str),
        checkpoint_cadence=get("scheme", "checkpoint_cadence", int, 0),
    )
    return RunConfig(
        u_min=get("grid", "u_min", float, required=True),
        u_max=get("grid", "u_max", float, required=True),
        v_min=get("grid", "v_min", float, required=True),
        v_max=get("grid", "v_max", float, required=True),
        n_u=get("grid", "n_u", int, required=True),
        n_v=get("grid", "n_v", int, required=True),
        initial=initial,
        scheme=scheme,
        rays=get("diagnostics", "rays", _int_list),
        fit_r_lo=get("diagnostics", "fit_r_lo", float),
        fit_r_hi=get("diagnostics", "fit_r_hi", float),
        criterion_v1=get("diagnostics", "criterion_v1", float),
        criterion_v2=get("diagnostics", "criterion_v2", float),
        out_dir=get("output", "out_dir", str),
        dump_grid=get("output", "dump_grid", _as_bool, False),
        seed=get("output", "seed", int, 0),
        amplitudes=get("sweep", "amplitudes", _float_list),
        epsilons=get("sweep", "epsilons", _float_list),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"malformed JSON config {path}: {err}")
        if not isinstance(raw, dict):
            raise ConfigurationError(f"JSON config {path} must be an object")
    else:
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are case-sensitive field names
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as err:
            raise ConfigurationError(f"malformed config {path}: {err}")
        raw = {s: dict(parser.items(s)) for s in parser.sections()}
    config = config_from_dict(raw)
    if (config.fit_r_lo is None) != (config.fit_r_hi is None):
        raise ConfigurationError("fit_r_lo and fit_r_hi must be given together")
    return config


def _kruskal_corner(r: float, mass_m: float = 0.5) -> float:
    # u = v = sqrt((1 - r/2M) e^{r/2M}) puts the corner at radius r
    return math.sqrt((1.0 - r / (2.0 * mass_m)) * math.exp(r / (2.0 * mass_m)))


def default_pulse_config() -> RunConfig:
    """Built-in criterion-sweep base: unit corner radius, incoming pulse
    supported on v in [0.02, 0.045], amplitudes spanning both sides of the
    trapping threshold."""
    return RunConfig(
        u_min=0.0, u_max=1.9, v_min=0.0, v_max=0.3, n_u=401, n_v=401,
        initial=InitialDataSpec(family=Family.PULSE, amplitude=0.0,
                                v_a=0.02, v_b=0.045, shape_exponent=4,
                                r_corner=1.0),
        scheme=SchemeConfig(r_floor=1e-3),
        amplitudes=(0.0, 500.0, 1000.0, 1500.0, 2000.0, 2500.0),
    )


def default_exponent_config() -> RunConfig:
    """Built-in exponent-sweep base: interior square from r=0.45 down to
    r=0.015 at M=1/2, scalar perturbation on the default support window,
    log-log fit over r in [0.05, 0.3]."""
    return RunConfig(
        u_min=_kruskal_corner(0.45), u_max=_kruskal_corner(0.015),
        v_min=_kruskal_corner(0.45), v_max=_kruskal_corner(0.015),
        n_u=801, n_v=801,
        initial=InitialDataSpec(family=Family.PERTURBED_SCHWARZSCHILD,
                                M=0.5, epsilon=0.0),
        scheme=SchemeConfig(r_floor=0.012),
        fit_r_lo=0.05, fit_r_hi=0.3,
        epsilons=(0.0, 0.025, 0.05, 0.1),
    )


def default_deep_config(epsilon: float = 0.0) -> RunConfig:
    """Built-in near-singularity base: interior square from r=0.02 down to
    r=0.0008 at M=1/2, excision floor 0.001. Resolves two decades of the
    approach along the last rays."""
    return RunConfig(
        u_min=_kruskal_corner(0.02), u_max=_kruskal_corner(0.0008),
        v_min=_kruskal_corner(0.02), v_max=_kruskal_corner(0.0008),
        n_u=801, n_v=801,
        initial=InitialDataSpec(family=Family.PERTURBED_SCHWARZSCHILD,
                                M=0.5, epsilon=epsilon),
        scheme=SchemeConfig(r_floor=0.001),
    )


# ---------------------------------------------------------------------------
# run orchestration


@dataclass
class RunResult:
    status: str  # "completed" | "numerical-blowup"
    state: FieldState
    grid: DoubleNullGrid
    report: EvolutionReport
    r_floor: float


def execute_run(config: RunConfig) -> RunResult:
    """Initial data, march, status. Raises ConfigurationError before any
    output exists; numerical blowup is captured as a status, the partially
    evolved state is kept for artifact writing."""
    grid = build_grid(config.u_min, config.u_max, config.v_min, config.v_max,
                      config.n_u, config.n_v)
    if config.rays is not None:
        for j in config.rays:
            if not 0 <= j < grid.n_v:
                raise ConfigurationError(f"ray index {j} outside 0..{grid.n_v - 1}")
    state = build_initial_data(config.initial, grid)
    floor = config.scheme.r_floor
    if floor is None:
        floor = default_r_floor(state)
    scheme = replace(config.scheme, r_floor=floor)
    status = "completed"
    try:
        state, report = march(state, grid, scheme)
    except NumericalBlowupError as err:
        report = err.report
        status = "numerical-blowup"
    return RunResult(status, state, grid, report, floor)


def _clean(obj):
    """NaN and infinities are not JSON; map them to null, recursively."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _check(name, status, value, tolerance) -> dict:
    return {"name": name, "status": status,
            "value": None if value is None or not math.isfinite(value) else float(value),
            "tolerance": None if tolerance is None else float(tolerance)}


def _first_trapped(trapped: np.ndarray) -> Optional[Tuple[int, int]]:
    pts = np.argwhere(trapped)
    if pts.size == 0:
        return None
    order = np.lexsort((pts[:, 0], pts[:, 0] + pts[:, 1]))
    i, j = pts[order[0]]
    return int(i), int(j)


def build_criterion_report(result: RunResult, config: RunConfig,
                           trapped: np.ndarray) -> CriterionReport:
    v_a, v_b = resolved_support(config.initial, result.grid)
    v1 = config.criterion_v1 if config.criterion_v1 is not None else v_a
    v2 = config.criterion_v2 if config.criterion_v2 is not None else v_b
    eta0, delta0, e_thr = criterion_functionals(result.state, result.grid, v1, v2)
    first = _first_trapped(trapped)
    return CriterionReport(eta0=eta0, delta0=delta0, E_of_delta0=e_thr,
                           predicted_trapped=bool(eta0 > e_thr),
                           observed_trapped=first is not None,
                           first_trapped_point=first)


def summarize(result: RunResult, config: RunConfig):
    """Full diagnostics pass over one evolved state.

    Returns (summary dict, DiagnosticsRecord); the record is reused for the
    per-ray CSVs so the summary and the tables always agree.
    """
    state, grid = result.state, result.grid
    rec = diagnostics_record(state, grid)
    rays = config.rays if config.rays is not None else (grid.n_v - 3,)
    j0 = rays[0]
    if config.fit_r_lo is not None:
        window = (config.fit_r_lo, config.fit_r_hi)
    else:
        window = (2.0 * result.r_floor, 20.0 * result.r_floor)

    tracks = track_r_dr_limits(state, grid, rays=[j0], r_window=window)
    track = tracks[0]
    fit_v = fit_exponent_on_ray(state, grid, window[0], window[1],
                                ray=j0, axis="v", record=rec)
    fit_u = fit_exponent_on_ray(state, grid, window[0], window[1],
                                axis="u", record=rec)
    om = omega_window(state, grid, ray=j0, r_window=window)
    bounds = scalar_bound_constants(state)

    crossings = find_apparent_horizon(state, grid)
    max_duality = max((abs(c.two_m_minus_r) for c in crossings), default=None)

    margin = mass_inequality_check(state, grid, kfield=rec.kretschmann)
    mono = mass_monotonicity_check(state, grid)
    violations = trapped_monotonicity_violations(state)

    checks = [
        _check("curvature_lower_bound", "pass" if margin.passed else "fail",
               margin.min_margin, margin.tol),
        _check("mass_monotonicity", "pass" if mono.passed else "fail",
               mono.min_du_m, mono.tol),
        _check("trapped_persistence",
               "not-applicable" if rec.n_trapped == 0
               else ("pass" if violations == 0 else "fail"),
               float(violations), 0.0),
        _check("horizon_mass_duality",
               "not-applicable" if max_duality is None
               else ("pass" if max_duality <= max(grid.du, grid.dv) else "fail"),
               max_duality, max(grid.du, grid.dv)),
        _check("scalar_bound_plateau",
               "not-applicable" if not bounds.applicable
               else ("pass" if bounds.plateaued else "fail"),
               bounds.plateau_growth if bounds.applicable else None, 0.10),
        _check("ray_limit_variation",
               "not-applicable" if not track.applicable
               else ("pass" if max(track.tv_r_nu, track.tv_r_lambda) <= 0.02
                     else "fail"),
               max(track.tv_r_nu, track.tv_r_lambda) if track.applicable else None,
               0.02),
    ]

    criterion = None
    if config.initial.family is Family.PULSE:
        rep = build_criterion_report(result, config, rec.trapped)
        criterion = {"eta0": rep.eta0, "delta0": rep.delta0,
                     "e_of_delta0": rep.E_of_delta0,
                     "predicted_trapped": rep.predicted_trapped,
                     "observed_trapped": rep.observed_trapped,
                     "first_trapped_point":
                         list(rep.first_trapped_point)
                         if rep.first_trapped_point is not None else None}

    summary = {
        "tool_version": TOOL_VERSION,
        "status": result.status,
        "config": config.to_dict(),
        "grid": {"n_u": grid.n_u, "n_v": grid.n_v, "du": grid.du,
                 "dv": grid.dv, "u_min": grid.u_min, "u_max": grid.u_max,
                 "v_min": grid.v_min, "v_max": grid.v_max},
        "evolution": {
            "diagonals_completed": result.report.diagonals_completed,
            "cells_excised": result.report.cells_excised,
            "wall_time": result.report.wall_time,
            "residual_history": [[int(d), v] for d, v in
                                 result.report.max_constraint_residual_history],
        },
        "criterion": criterion,
        "constants": {
            "c1_hat": track.c1_hat if track.applicable else None,
            "c2_hat": track.c2_hat if track.applicable else None,
            "d1_hat": bounds.d1_hat if bounds.applicable else None,
            "d2_hat": bounds.d2_hat if bounds.applicable else None,
            "n_hat": fit_v.n_hat if fit_v is not None else None,
            "n_hat_cross": fit_u.n_hat if fit_u is not None else None,
            "omega_slope": om.slope if om.applicable else None,
            "omega_d_hat": om.d_hat,
        },
        "fits": {
            "exponent": None if fit_v is None else {
                "r_lo": fit_v.r_lo, "r_hi": fit_v.r_hi, "n_hat": fit_v.n_hat,
                "intercept": fit_v.intercept, "r_squared": fit_v.r_squared,
                "n_samples": fit_v.n_samples, "n_excluded": fit_v.n_excluded},
            "exponent_cross": None if fit_u is None else {
                "r_lo": fit_u.r_lo, "r_hi": fit_u.r_hi, "n_hat": fit_u.n_hat,
                "intercept": fit_u.intercept, "r_squared": fit_u.r_squared,
                "n_samples": fit_u.n_samples, "n_excluded": fit_u.n_excluded},
            "omega": {
                "slope": om.slope, "intercept": om.intercept,
                "r_squared": om.r_squared, "d_hat": om.d_hat,
                "r_lo": om.window[0], "r_hi": om.window[1],
                "n_samples": om.n_samples, "ray": om.j},
        },
        "checks": checks,
        "horizon": {"n_crossings": len(crossings),
                    "max_abs_two_m_minus_r": max_duality},
        "artifacts": {"rays": [], "grid_dump": None},
    }
    return _clean(summary), rec


def _load_schema() -> dict:
    text = resources.files("dncollapse").joinpath("summary_schema.json").read_text()
    return json.loads(text)


def _write_ray_csv(path, table) -> None:
    lines = [",".join(RAY_CSV_COLUMNS)]
    n = table["r"].size
    for i in range(n):
        lines.append(",".join(_fnum(table[c][i]) for c in RAY_CSV_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def write_run_artifacts(result: RunResult, config: RunConfig, out_dir) -> dict:
    """Summary JSON (schema-validated), text render, per-ray CSVs, optional
    full-grid dump. Returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, rec = summarize(result, config)

    rays = config.rays if config.rays is not None else (result.grid.n_v - 3,)
    names = []
    for j in rays:
        name = f"ray_{j:04d}.csv"
        _write_ray_csv(out / name, ray_table(result.state, result.grid, j,
                                             record=rec))
        names.append(name)
    summary["artifacts"]["rays"] = names

    if config.dump_grid:
        state = result.state
        np.savez(out / "grid_dump.npz", mask=state.mask, r=state.r,
                 log_omega=state.log_omega, phi=state.phi, nu=state.nu,
                 lam=state.lam, z=state.z, w=state.w,
                 u=result.grid.u_coords(), v=result.grid.v_coords())
        summary["artifacts"]["grid_dump"] = "grid_dump.npz"

    jsonschema.validate(summary, _load_schema())
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n")
    (out / "summary.txt").write_text(render_text(summary))
    return summary


def render_text(summary: dict) -> str:
    """Human-readable mirror of summary.json."""
    g = summary["grid"]
    ev = summary["evolution"]
    co = summary["constants"]

    def show(x, digits=6):
        if x is None:
            return "n/a"
        return f"{x:.{digits}g}"

    lines = [
        f"dncollapse {summary['tool_version']} run summary",
        f"status: {summary['status']}",
        f"family: {summary['config']['initial_data']['family']}"
        f"   grid: {g['n_u']} x {g['n_v']}   du={show(g['du'])} dv={show(g['dv'])}",
        f"evolution: diagonals={ev['diagonals_completed']}"
        f" excised={ev['cells_excised']} wall={show(ev['wall_time'], 3)}s",
    ]
    if summary["criterion"] is not None:
        c = summary["criterion"]
        lines.append(
            f"criterion: eta0={show(c['eta0'])} delta0={show(c['delta0'])}"
            f" E(delta0)={show(c['e_of_delta0'])}"
            f" predicted={c['predicted_trapped']} observed={c['observed_trapped']}")
    lines.append(
        "constants: C1_hat={} C2_hat={} D1_hat={} D2_hat={}".format(
            show(co["c1_hat"]), show(co["c2_hat"]),
            show(co["d1_hat"]), show(co["d2_hat"])))
    lines.append(
        "           N_hat={} N_hat_cross={} omega_slope={} omega_d_hat={}".format(
            show(co["n_hat"]), show(co["n_hat_cross"]),
            show(co["omega_slope"]), show(co["omega_d_hat"])))
    h = summary["horizon"]
    lines.append(f"horizon: crossings={h['n_crossings']}"
                 f" max|2m-r|={show(h['max_abs_two_m_minus_r'])}")
    lines.append("checks:")
    for ch in summary["checks"]:
        lines.append(f"  {ch['name']:<24} {ch['status']:<14}"
                     f" value={show(ch['value'])} tol={show(ch['tolerance'])}")
    return "\n".join(lines) + "\n"


def _resolve_out(cli_out, config_out=None) -> Path:
    if cli_out:
        return Path(cli_out)
    if config_out:
        return Path(config_out)
    return Path(os.environ.get(ENV_OUT, "dncollapse_out"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.threads is not None:
        config.scheme = replace(config.scheme, threads=args.threads)
    if args.dump_grid:
        config.dump_grid = True
    result = execute_run(config)
    out = _resolve_out(args.out, config.out_dir)
    summary = write_run_artifacts(result, config, out)
    sys.stdout.write(render_text(summary))
    if result.status != "completed":
        rep = result.report
        print(f"numerical blowup after diagonal {rep.diagonals_completed};"
              f" partial artifacts in {out}", file=sys.stderr)
        return 3
    return 0


def verify_schwarzschild(levels: int = 3, threads: int = 1,
                         mass_m: float = 0.5, n_base: int = 101):
    """Convergence table for the vacuum interior march.

    Errors are measured away from the floor (r >= 2 r_floor) against the
    closed-form solution; the curvature row compares the reconstructed
    Kretschmann field with 48 M^2 / r^6. Returns ({quantity: rows}, ok).
    """
    if levels < 3:
        raise ConfigurationError(f"need levels >= 3, got {levels}")
    a = _kruskal_corner(0.9, mass_m)
    b = _kruskal_corner(0.05, mass_m)
    base = build_grid(a, b, a, b, n_base, n_base)
    spec = InitialDataSpec(family=Family.SCHWARZSCHILD, M=mass_m)
    scheme = SchemeConfig(r_floor=0.05, threads=threads)
    tables = {}
    for quantity in ("r", "log_omega", "constraint", "kretschmann"):
        tables[quantity] = convergence_study(spec, base, levels, scheme,
                                             quantity=quantity)
    ok = True
    for quantity, rows in tables.items():
        orders = [row.order for row in rows
                  if not row.degenerate and math.isfinite(row.order)]
        if not orders or not 1.8 <= orders[-1] <= 2.2:
            ok = False
        errors = [row.error for row in rows]
        if any(e2 >= e1 for e1, e2 in zip(errors, errors[1:])):
            ok = False  # every error column must shrink under refinement
    return tables, ok


def _format_convergence(tables) -> str:
    lines = [f"{'quantity':<14} {'h':>12} {'error':>14} {'order':>8}"]
    for quantity, rows in tables.items():
        for row in rows:
            order = "-" if not math.isfinite(row.order) else f"{row.order:.3f}"
            lines.append(f"{quantity:<14} {row.h:>12.6g} {row.error:>14.6g}"
                         f" {order:>8}")
    return "\n".join(lines) + "\n"


def cmd_verify(args) -> int:
    tables, ok = verify_schwarzschild(levels=args.levels,
                                      threads=args.threads or 1)
    text = _format_convergence(tables)
    sys.stdout.write(text)
    if args.out:
        out = _resolve_out(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["quantity,level,h,error,order"]
        for quantity, rows in tables.items():
            for lvl, row in enumerate(rows):
                order = "" if not math.isfinite(row.order) else _fnum(row.order)
                lines.append(f"{quantity},{lvl},{_fnum(row.h)},{_fnum(row.error)},{order}")
        (out / "convergence.csv").write_text("\n".join(lines) + "\n")
        (out / "verify.txt").write_text(text)
    if not ok:
        print("verification failed: order outside [1.8, 2.2]"
              " or non-shrinking error", file=sys.stderr)
        return 4
    return 0


def _sweep_pool(rows_fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
            return list(pool.map(rows_fn, items))  # ordered by input index
    return [rows_fn(x) for x in items]


def criterion_sweep(config: RunConfig, amplitudes: Sequence[float],
                    threads: int = 1):
    """March one pulse run per amplitude and tabulate the criterion.

    Returns (rows, failures) where a failure is a row with
    predicted_trapped=True but no trapped point observed; the guarantee is
    one-sided, so observed-without-predicted rows are informational.
    """
    if len(amplitudes) < 2:
        raise ConfigurationError("criterion sweep needs at least 2 amplitudes")

    def one(amp: float) -> dict:
        cfg = replace(config, initial=replace(config.initial, amplitude=amp))
        result = execute_run(cfg)
        trapped = (result.state.active
                   & (result.state.nu < 0.0) & (result.state.lam < 0.0))
        rep = build_criterion_report(result, cfg, trapped)
        return {"amplitude": amp, "eta0": rep.eta0, "delta0": rep.delta0,
                "e_of_delta0": rep.E_of_delta0,
                "predicted": rep.predicted_trapped,
                "observed": rep.observed_trapped,
                "status": result.status}

    rows = _sweep_pool(one, list(amplitudes), threads)
    failures = [r for r in rows if r["predicted"] and not r["observed"]]
    return rows, failures


def cmd_criterion_sweep(args) -> int:
    config = load_config(args.config) if args.config else default_pulse_config()
    amplitudes = config.amplitudes
    if amplitudes is None:
        amplitudes = default_pulse_config().amplitudes
    rows, failures = criterion_sweep(config, amplitudes, args.threads or 1)

    header = "amplitude,eta0,delta0,E_of_delta0,predicted,observed,status"
    lines = [header]
    for r in rows:
        lines.append(",".join([
            _fnum(r["amplitude"]), _fnum(r["eta0"]), _fnum(r["delta0"]),
            _fnum(r["e_of_delta0"]),
            "true" if r["predicted"] else "false",
            "true" if r["observed"] else "false",
            r["status"]]))
    csv_text = "\n".join(lines) + "\n"
    sys.stdout.write(csv_text)
    out = _resolve_out(args.out, config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "criterion_sweep.csv").write_text(csv_text)
    for r in failures:
        print(f"FAILURE: amplitude={r['amplitude']:g} predicted a trapped"
              " surface but none formed", file=sys.stderr)
    return 4 if failures else 0


def exponent_sweep(config: RunConfig, epsilons: Sequence[float],
                   threads: int = 1):
    """One perturbed run per epsilon; fits the blow-up exponent on each.

    Returns (rows, problems). Checks: the unperturbed exponent is 6 within
    0.05; every row sits in [5.8, 6 + 10 eps^2 + 0.05]; and the excess over
    6 does not decrease by more than 0.1 when epsilon grows.
    """
    for eps in epsilons:
        if not 0.0 <= eps <= 0.2:
            raise ConfigurationError(f"epsilon {eps} outside [0, 0.2]")

    def one(eps: float) -> dict:
        cfg = replace(config, initial=replace(config.initial, epsilon=eps))
        result = execute_run(cfg)
        summary, _ = summarize(result, cfg)
        co = summary["constants"]
        return {"epsilon": eps, "n_hat": co["n_hat"], "d1_hat": co["d1_hat"],
                "d2_hat": co["d2_hat"], "omega_slope": co["omega_slope"],
                "status": summary["status"]}

    rows = _sweep_pool(one, list(epsilons), threads)
    problems: List[str] = []
    fit_tol = 0.05
    for r in rows:
        if r["status"] != "completed":
            problems.append(f"epsilon={r['epsilon']:g}: {r['status']}")
            continue
        if r["n_hat"] is None:
            problems.append(f"epsilon={r['epsilon']:g}: no exponent fit")
            continue
        lo, hi = 5.8, 6.0 + 10.0 * r["epsilon"] ** 2 + fit_tol
        if not lo <= r["n_hat"] <= hi:
            problems.append(f"epsilon={r['epsilon']:g}: N_hat={r['n_hat']:.4f}"
                            f" outside [{lo}, {hi:.4f}]")
        if r["epsilon"] == 0.0 and abs(r["n_hat"] - 6.0) > fit_tol:
            problems.append(f"unperturbed N_hat={r['n_hat']:.4f} not 6 +- {fit_tol}")
    fitted = [r for r in rows if r["status"] == "completed"
              and r["n_hat"] is not None]
    fitted.sort(key=lambda r: r["epsilon"])
    for a, b in zip(fitted, fitted[1:]):
        if (a["n_hat"] - 6.0) > (b["n_hat"] - 6.0) + 0.1:
            problems.append(
                f"excess over 6 not nonincreasing toward epsilon=0:"
                f" {a['epsilon']:g} -> {b['epsilon']:g}")
    return rows, problems


def cmd_exponent_sweep(args) -> int:
    config = load_config(args.config) if args.config else default_exponent_config()
    epsilons = config.epsilons
    if epsilons is None:
        epsilons = default_exponent_config().epsilons
    rows, problems = exponent_sweep(config, epsilons, args.threads or 1)

    def cell(x):
        return "" if x is None else _fnum(x)

    lines = ["epsilon,n_hat,d1_hat,d2_hat,omega_slope,status"]
    for r in rows:
        lines.append(",".join([_fnum(r["epsilon"]), cell(r["n_hat"]),
                               cell(r["d1_hat"]), cell(r["d2_hat"]),
                               cell(r["omega_slope"]), r["status"]]))
    csv_text = "\n".join(lines) + "\n"
    sys.stdout.write(csv_text)
    out = _resolve_out(args.out, config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "exponent_sweep.csv").write_text(csv_text)
    for p in problems:
        print(f"FAILURE: {p}", file=sys.stderr)
    return 4 if problems else 0


def cmd_report(args) -> int:
    out = Path(args.out)
    path = out / "summary.json"
    if not path.is_file():
        raise ConfigurationError(f"no summary.json under {out}")
    try:
        summary = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"corrupt summary.json: {err}")
    jsonschema.validate(summary, _load_schema())
    text = render_text(summary)
    sys.stdout.write(text)
    (out / "summary.txt").write_text(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dncollapse",
        description="Double-null evolution of the spherically symmetric"
                    " Einstein-scalar system with singularity diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one evolution with full diagnostics")
    p.add_argument("--config", required=True, help="INI or JSON run config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="marcher thread count")
    p.add_argument("--dump-grid", action="store_true",
                   help="write all field planes to grid_dump.npz")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify-schwarzschild",
                       help="convergence table on the vacuum interior")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--out", help="write convergence.csv here")
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("criterion-sweep",
                       help="trapped-surface criterion over pulse amplitudes")
    p.add_argument("--config", help="base pulse config (built-in default)")
    p.add_argument("--out")
    p.add_argument("--threads", type=int, help="parallel sweep rows")
    p.set_defaults(fn=cmd_criterion_sweep)

    p = sub.add_parser("exponent-sweep",
                       help="blow-up exponent over perturbation strengths")
    p.add_argument("--config", help="base perturbed config (built-in default)")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_exponent_sweep)

    p = sub.add_parser("report", help="re-render summary.txt from summary.json")
    p.add_argument("--out", required=True, help="directory with summary.json")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
