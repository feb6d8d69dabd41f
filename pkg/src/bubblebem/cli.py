"""Batch front door: one experiment per process, driven by a JSON config.

    bubblebem <experiment> --config cfg.json [--check] [--out-dir DIR]

Experiments: capacitance, minnaert, scatter, sweep, resolvent, resonances,
convergence.  Each run writes `result.json` (schema version, resolved
config, scalar results) plus experiment-specific CSV files into the output
directory.  CSV output is deterministic: fixed 17-significant-digit float
formatting, LF endings, UTF-8.  `--check` turns the acceptance thresholds
of the experiment into the exit code.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(diagnostics on stderr as JSON), 4 threshold violation under --check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import asymptotics, oracle, resonances, scattering, spectral
from .errors import BubbleBemError, ConfigurationError, UsageError
from .geometry import make_ellipsoid, make_sphere, make_volume_quadrature

SCHEMA_VERSION = 1

_EXPERIMENTS = ("capacitance", "minnaert", "scatter", "sweep", "resolvent",
                "resonances", "convergence")


class ConfigError(ConfigurationError):
    """Configuration problem with a field-precise message."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Config parsing and validation
# ---------------------------------------------------------------------------

def _require(mapping, key, kind, path, positive=False, optional=False, default=None):
    if key not in mapping:
        if optional:
            return default
        raise ConfigError(f"{path}.{key}: missing required field")
    value = mapping[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")
        value = float(value)
        if positive and value <= 0:
            raise ConfigError(f"{path}.{key}: must be positive, got {value}")
    elif kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
        if positive and value <= 0:
            raise ConfigError(f"{path}.{key}: must be positive, got {value}")
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}.{key}: expected a string, got {value!r}")
    elif kind == "vec3":
        if (not isinstance(value, (list, tuple)) or len(value) != 3
                or not all(isinstance(v, (int, float)) for v in value)):
            raise ConfigError(f"{path}.{key}: expected [x, y, z], got {value!r}")
        value = [float(v) for v in value]
    elif kind is list:
        if not isinstance(value, list) or (not value and not optional):
            raise ConfigError(f"{path}.{key}: expected a non-empty list")
    elif kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected true/false, got {value!r}")
    return value


class RunConfig:
    """Validated configuration for one experiment."""

    def __init__(self, raw: dict, experiment: str):
        if not isinstance(raw, dict):
            raise ConfigError("top level: expected a JSON object")
        self.raw = raw
        self.experiment = experiment

        geo = raw.get("geometry")
        if not isinstance(geo, dict):
            raise ConfigError("geometry: missing section")
        self.shape = _require(geo, "shape", str, "geometry")
        if self.shape not in ("sphere", "ellipsoid"):
            raise ConfigError(f"geometry.shape: unknown shape {self.shape!r}")
        self.refinement = _require(geo, "refinement", int, "geometry")
        self.center = np.array(_require(geo, "center", "vec3", "geometry",
                                        optional=True, default=[0.0, 0.0, 0.0]))
        if self.shape == "sphere":
            self.radius = _require(geo, "radius", float, "geometry", positive=True)
            self.semi_axes = None
        else:
            self.semi_axes = _require(geo, "semi_axes", list, "geometry")
            if len(self.semi_axes) != 3 or any(
                    not isinstance(v, (int, float)) or v <= 0 for v in self.semi_axes):
                raise ConfigError("geometry.semi_axes: expected three positive numbers")
            self.radius = None

        med = raw.get("medium")
        if not isinstance(med, dict):
            raise ConfigError("medium: missing section")
        kwargs = {}
        for key in ("rho0", "k0", "rho1", "k1", "eps"):
            kwargs[key] = _require(med, key, float, "medium", positive=True)
        kwargs["y0"] = np.array(_require(med, "y0", "vec3", "medium",
                                         optional=True, default=list(self.center)))
        self.medium = scattering.Medium(**kwargs)

        exp = raw.get("experiment", {})
        if not isinstance(exp, dict):
            raise ConfigError("experiment: expected a JSON object")
        self.params = exp

    def build_mesh(self):
        if self.shape == "sphere":
            return make_sphere(self.center, self.radius, self.refinement)
        return make_ellipsoid(self.center, self.semi_axes, self.refinement)


def load_config(path: str, experiment: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path}: not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    return RunConfig(raw, experiment)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _result_skeleton(cfg: RunConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config": cfg.raw,
    }


def _sample_points(params, path, default_n=20, default_rmin=1.5, default_rmax=3.0,
                   center=(0.0, 0.0, 0.0)):
    if "points" in params:
        pts = params["points"]
        if not isinstance(pts, list) or not pts:
            raise ConfigError(f"{path}.points: expected a non-empty list of [x,y,z]")
        return np.array(pts, dtype=float).reshape(-1, 3)
    n = _require(params, "n_points", int, path, positive=True, optional=True,
                 default=default_n)
    rmin = _require(params, "sample_radius_min", float, path, positive=True,
                    optional=True, default=default_rmin)
    rmax = _require(params, "sample_radius_max", float, path, positive=True,
                    optional=True, default=default_rmax)
    seed = _require(params, "seed", int, path, optional=True, default=7)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    radii = rmin + (rmax - rmin) * rng.random((n, 1))
    return np.asarray(center, dtype=float) + dirs * radii


def run_capacitance(cfg: RunConfig, out_dir: Path, check: bool):
    mesh = cfg.build_mesh()
    frame = spectral.build_frame(mesh)
    result = _result_skeleton(cfg)
    result.update(
        capacitance=frame.capacitance,
        volume=mesh.volume,
        area=mesh.area,
        refinement=cfg.refinement,
        n_panels=mesh.n_panels,
    )
    violations = []
    if check:
        if cfg.shape != "sphere":
            violations.append("capacitance --check requires a sphere geometry")
        else:
            exact = 4.0 * np.pi * cfg.radius
            rel = abs(frame.capacitance - exact) / exact
            result["analytic_capacitance"] = exact
            result["relative_error"] = rel
            if rel > 0.01:
                violations.append(f"capacitance off by {rel:.3e} (> 1e-2)")
    return result, violations


def run_minnaert(cfg: RunConfig, out_dir: Path, check: bool):
    mesh = cfg.build_mesh()
    frame = spectral.build_frame(mesh)
    config = asymptotics.AsymptoticConfig.from_frame(frame, cfg.medium)
    result = _result_skeleton(cfg)
    result.update(
        omega_M=config.omega_m,
        capacitance=frame.capacitance,
        volume=mesh.volume,
    )
    violations = []
    if check:
        if cfg.shape != "sphere":
            violations.append("minnaert --check requires a sphere geometry")
        else:
            exact = np.sqrt(3.0 * cfg.medium.k1 / cfg.medium.rho0) / cfg.radius
            rel = abs(config.omega_m - exact) / exact
            result["analytic_omega_M"] = exact
            result["relative_error"] = rel
            if rel > 0.01:
                violations.append(f"omega_M off by {rel:.3e} (> 1e-2)")
    return result, violations


def run_scatter(cfg: RunConfig, out_dir: Path, check: bool):
    params = cfg.params
    omega = _require(params, "omega", float, "experiment", positive=True)
    direction = np.array(_require(params, "direction", "vec3", "experiment",
                                  optional=True, default=[0.0, 0.0, 1.0]))
    radial_order = _require(params, "radial_order", int, "experiment",
                            positive=True, optional=True, default=4)
    points = _sample_points(params, "experiment", center=cfg.medium.y0)

    mesh = cfg.build_mesh()
    incident = scattering.plane_wave(direction, omega, cfg.medium.c0)
    solution = scattering.solve_bubble(cfg.medium, omega, incident, mesh,
                                       radial_order=radial_order)
    values = scattering.eval_field(solution, points)
    csv_name = params.get("fields_csv", "fields.csv")
    write_csv(out_dir / csv_name, ["x", "y", "z", "Re(u)", "Im(u)"],
              [(p[0], p[1], p[2], v.real, v.imag) for p, v in zip(points, values)])

    result = _result_skeleton(cfg)
    result.update(
        omega=omega,
        fields_csv=csv_name,
        diagnostics=solution.diagnostics,
    )
    violations = []
    if check:
        if cfg.shape != "sphere":
            violations.append("scatter --check requires a sphere geometry")
        else:
            mie = oracle.mie_scatter(cfg.medium, omega, direction,
                                     reference_radius=cfg.radius)
            u_mie = oracle.mie_eval_scattered(mie, points)
            u_bem = scattering.eval_scattered(solution, points)
            rel = float(np.linalg.norm(u_bem - u_mie) / np.linalg.norm(u_mie))
            result["mie_relative_l2_error"] = rel
            if rel > 1e-2:
                violations.append(f"scattered field off Mie by {rel:.3e} (> 1e-2)")
    return result, violations


def run_sweep(cfg: RunConfig, out_dir: Path, check: bool):
    params = cfg.params
    omega_min = _require(params, "omega_min", float, "experiment", positive=True)
    omega_max = _require(params, "omega_max", float, "experiment", positive=True)
    n_omega = _require(params, "n_omega", int, "experiment", positive=True,
                       optional=True, default=41)
    direction = np.array(_require(params, "direction", "vec3", "experiment",
                                  optional=True, default=[0.0, 0.0, 1.0]))
    obs = np.array(_require(params, "observation_point", "vec3", "experiment",
                            optional=True, default=[2.0, 0.0, 0.0]))
    if omega_max <= omega_min:
        raise ConfigError("experiment.omega_max: must exceed omega_min")

    mesh = cfg.build_mesh()
    frame = spectral.build_frame(mesh)
    omegas = np.linspace(omega_min, omega_max, n_omega)
    amplitudes = []
    for omega in omegas:
        incident = scattering.plane_wave(direction, float(omega), cfg.medium.c0)
        solution = scattering.solve_bubble(cfg.medium, float(omega), incident, mesh,
                                           radial_order=2)
        amplitudes.append(abs(scattering.eval_scattered(solution, obs[None, :])[0]))
    csv_name = params.get("sweep_csv", "sweep.csv")
    write_csv(out_dir / csv_name, ["omega", "amplitude_abs"],
              list(zip(omegas, amplitudes)))

    config = asymptotics.AsymptoticConfig.from_frame(frame, cfg.medium)
    argmax = float(omegas[int(np.argmax(amplitudes))])
    result = _result_skeleton(cfg)
    result.update(sweep_csv=csv_name, omega_M=config.omega_m, argmax_omega=argmax)
    violations = []
    if check and abs(argmax - config.omega_m) > 5.0 * cfg.medium.eps:
        violations.append(
            f"amplitude peak at {argmax:.4f}, more than 5 eps from omega_M "
            f"{config.omega_m:.4f}")
    return result, violations


def run_convergence(cfg: RunConfig, out_dir: Path, check: bool):
    params = cfg.params
    omega = _require(params, "omega", float, "experiment", positive=True)
    eps_list = _require(params, "eps_list", list, "experiment")
    direction = np.array(_require(params, "direction", "vec3", "experiment",
                                  optional=True, default=[0.0, 0.0, 1.0]))
    points = _sample_points(params, "experiment", center=cfg.medium.y0)

    mesh = cfg.build_mesh()
    frame = spectral.build_frame(mesh)
    errors = []
    for eps in eps_list:
        medium = scattering.Medium(cfg.medium.rho0, cfg.medium.k0, cfg.medium.rho1,
                                   cfg.medium.k1, float(eps), cfg.medium.y0)
        config = asymptotics.AsymptoticConfig.from_frame(frame, medium)
        incident = scattering.plane_wave(direction, omega, medium.c0)
        solution = scattering.solve_bubble(medium, omega, incident, mesh,
                                           radial_order=2)
        u_bem = scattering.eval_scattered(solution, points)
        u_lead = asymptotics.point_scatterer_field(
            config, omega, float(eps),
            incident.value(np.asarray(medium.y0)[None, :])[0], points)
        errors.append(float(np.max(np.abs(u_bem - u_lead))))
    slope = float(np.polyfit(np.log(np.asarray(eps_list, float)),
                             np.log(np.asarray(errors)), 1)[0])
    csv_name = params.get("convergence_csv", "convergence.csv")
    write_csv(out_dir / csv_name, ["eps", "max_error_vs_point_scatterer"],
              list(zip(eps_list, errors)))
    result = _result_skeleton(cfg)
    result.update(convergence_csv=csv_name, fitted_slope=slope, errors=errors)
    violations = []
    if check and not (1.3 <= slope <= 1.8):
        violations.append(f"fitted slope {slope:.3f} outside [1.3, 1.8]")
    return result, violations


def run_resonances(cfg: RunConfig, out_dir: Path, check: bool):
    params = cfg.params
    eps_list = _require(params, "eps_list", list, "experiment")
    search_radius = _require(params, "search_radius", float, "experiment",
                             positive=True, optional=True, default=0.5)
    grid_n = _require(params, "grid_n", int, "experiment", positive=True,
                      optional=True, default=40)
    verify = _require(params, "verify_count", bool, "experiment", optional=True,
                      default=False)

    mesh = cfg.build_mesh()
    frame = spectral.build_frame(mesh)
    config = asymptotics.AsymptoticConfig.from_frame(frame, cfg.medium)

    rows = []
    violations = []
    for eps in eps_list:
        medium = scattering.Medium(cfg.medium.rho0, cfg.medium.k0, cfg.medium.rho1,
                                   cfg.medium.k1, float(eps), cfg.medium.y0)
        pair = resonances.find_resonances(medium, frame, float(eps), search_radius,
                                          grid_n=grid_n, verify_count=verify)
        cubic = resonances.cubic_characteristic_roots(config, float(eps))
        row = [float(eps), pair.z_plus.real, pair.z_plus.imag,
               pair.z_minus.real, pair.z_minus.imag, pair.sigma_plus,
               pair.iterations,
               cubic.physical_z[0].real, cubic.physical_z[0].imag]
        if cfg.shape == "sphere":
            seed = asymptotics.resonance_first_order(config, float(eps))[0]
            mie_root = oracle.mie_resonance(medium, seed, reference_radius=cfg.radius)
            row.extend([mie_root.real, mie_root.imag])
            if check and abs(pair.z_plus - mie_root) > 0.03:
                violations.append(
                    f"eps={eps}: |z_plus - mie| = {abs(pair.z_plus - mie_root):.3e} > 0.03")
        else:
            row.extend([np.nan, np.nan])
        rows.append(row)
        if check:
            if abs(pair.z_minus + np.conj(pair.z_plus)) > 1e-6:
                violations.append(f"eps={eps}: resonance pair breaks conjugate symmetry")
            if abs(pair.z_plus - cubic.physical_z[0]) > 0.05:
                violations.append(f"eps={eps}: cubic root disagrees beyond 0.05")

    csv_name = params.get("resonances_csv", "resonances.csv")
    write_csv(out_dir / csv_name,
              ["eps", "Re_z_plus", "Im_z_plus", "Re_z_minus", "Im_z_minus",
               "sigma_min", "iterations", "Re_z_cubic", "Im_z_cubic",
               "Re_z_mie", "Im_z_mie"],
              rows)
    result = _result_skeleton(cfg)
    result.update(resonances_csv=csv_name, omega_M=config.omega_m)
    return result, violations


def run_resolvent(cfg: RunConfig, out_dir: Path, check: bool):
    params = cfg.params
    z_list = _require(params, "z_list", list, "experiment")
    eps_list = _require(params, "eps_list", list, "experiment")
    source_cfg = params.get("source")
    if not isinstance(source_cfg, dict):
        raise ConfigError("experiment.source: missing section")
    center = _require(source_cfg, "center", "vec3", "experiment.source")
    sigma = _require(source_cfg, "sigma", float, "experiment.source", positive=True)
    mass = _require(source_cfg, "mass", float, "experiment.source", optional=True,
                    default=1.0)
    points = _sample_points(params, "experiment", center=cfg.medium.y0)

    mesh = cfg.build_mesh()
    frame = spectral.build_frame(mesh)
    source = asymptotics.gaussian_bump(center, sigma, mass)

    rows = []
    residuals = {}
    for z_raw in z_list:
        z = complex(z_raw[0], z_raw[1]) if isinstance(z_raw, list) else complex(z_raw)
        for eps in eps_list:
            medium = scattering.Medium(cfg.medium.rho0, cfg.medium.k0,
                                       cfg.medium.rho1, cfg.medium.k1, float(eps),
                                       cfg.medium.y0)
            config = asymptotics.AsymptoticConfig.from_frame(frame, medium)
            field = scattering.resolvent_apply(medium, z, source, mesh,
                                               radial_order=2)
            applied = field.evaluate(points)
            free_vals = field.free_field(points)
            rh0 = field.free_field(np.asarray(medium.y0)[None, :])[0]
            h0 = source(np.asarray(medium.y0)[None, :])[0]
            leading = asymptotics.resolvent_leading(config, z, float(eps), h0, rh0,
                                                    points, free_vals)
            denom = abs(asymptotics.denominator(config, z, float(eps)))
            resid = float(np.max(np.abs(applied - leading))) * denom
            residuals[(z, float(eps))] = resid
            for p, ua, ul in zip(points, applied, leading):
                rows.append([z.real, z.imag, float(eps), p[0], p[1], p[2],
                             ua.real, ua.imag, ul.real, ul.imag, abs(ua - ul)])

    csv_name = params.get("resolvent_csv", "resolvent.csv")
    write_csv(out_dir / csv_name,
              ["Re_z", "Im_z", "eps", "x", "y", "z",
               "Re_u_apply", "Im_u_apply", "Re_u_leading", "Im_u_leading",
               "abs_difference"],
              rows)
    result = _result_skeleton(cfg)
    result.update(resolvent_csv=csv_name,
                  scaled_residuals={f"z={k[0]}, eps={k[1]}": v
                                    for k, v in residuals.items()})
    violations = []
    if check:
        for z_raw in z_list:
            z = complex(z_raw[0], z_raw[1]) if isinstance(z_raw, list) else complex(z_raw)
            eps_sorted = sorted(float(e) for e in eps_list)
            for e_small in eps_sorted:
                e_big = 2.0 * e_small
                if any(abs(e - e_big) < 1e-12 for e in eps_sorted):
                    factor = residuals[(z, e_big)] / residuals[(z, e_small)]
                    if factor < 2.4:
                        violations.append(
                            f"z={z}: residual halving factor {factor:.2f} < 2.4")
    return result, violations


_RUNNERS = {
    "capacitance": run_capacitance,
    "minnaert": run_minnaert,
    "scatter": run_scatter,
    "sweep": run_sweep,
    "resolvent": run_resolvent,
    "resonances": run_resonances,
    "convergence": run_convergence,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"not JSON serializable: {type(obj)}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bubblebem", description=__doc__)
    parser.add_argument("experiment", choices=_EXPERIMENTS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--check", action="store_true",
                        help="turn acceptance thresholds into the exit code")
    parser.add_argument("--out-dir", default=".")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.experiment)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        result, violations = _RUNNERS[args.experiment](cfg, out_dir, args.check)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (BubbleBemError, np.linalg.LinAlgError) as exc:
        diagnostics = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(diagnostics, sort_keys=True), file=sys.stderr)
        return 3

    if violations:
        result["violations"] = violations
    with open(out_dir / "result.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    print(json.dumps({k: v for k, v in result.items() if k != "config"},
                     sort_keys=True, default=_json_default))

    if args.check and violations:
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
