"""Command-line runner: config handling, orchestration, reproducible output.

Subcommands: spectrum, stirap, oracle, sweep, validate. Configuration is a
YAML file merged over built-in defaults, with dotted --set overrides.
Numeric outputs go only to files (CSV/JSON, bit-deterministic for a fixed
config and package version); progress and failures go to stderr. Exit
codes: 0 success, 2 config error, 3 convergence failure, 4 partial sweep
failure.
"""
from __future__ import annotations

import argparse
import copy
import datetime
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cloud import (CloudSpec, DetectorDisk, default_detector, derive_seed,
                    RNG_ALGORITHM)
from .dynamics import (ConvergenceError, LambdaParams, StiffnessError,
                       StirapSchedule, Tolerances)
from .kernel import KERNEL_MODES
from .observables import (RealizationPlan, SpectrumPointError, WindowShapeError,
                          ensemble_stats, spectrum, stirap_ensemble,
                          window_metrics)
from . import oracle as oracle_mod

SCHEMA_VERSION = 1
WORKERS_ENV = "EITCLOUD_WORKERS"

DEFAULTS = {
    "run": {"master_seed": 1234, "workers": 1},
    "cloud": {"radius_kR": 20.0, "thickness_kL": 20.0, "density": 0.01,
              "min_pair_separation_k": 0.05},
    "params": {"omega1": 0.1, "omega2": 0.5, "delta1": 0.0, "delta2": 0.0,
               "gamma1_frac": 0.5, "gamma2_frac": 0.5, "k2_over_k1": 1.0,
               "kernel_mode": "scalar"},
    "detector": {"z0_k": None, "s_max_k": None, "radial_nodes": 64,
                 "angular_nodes": 128},
    "tolerances": {"rtol": 1e-8, "atol": 1e-10, "steady_residual": 1e-8,
                   "t_max": 2000.0},
    "spectrum": {"delta1_min": -0.5, "delta1_max": 0.5, "delta1_points": 101,
                 "realizations": 8, "adaptive": False,
                 "fwhm_stderr_frac": 0.02, "min_realizations": 4,
                 "max_realizations": 64, "batch": 4, "compare_none": False},
    "stirap": {"omega_max": 0.5, "t0": 10.0, "tr": 60.0,
               "convention": "shifted", "t_end": 140.0, "t_points": 141,
               "modes": ["none", "scalar", "vectorial"], "realizations": 4},
    "oracle": {"delta1_min": -1.0, "delta1_max": 1.0, "delta1_points": 81},
    "sweep": {"axis": "density", "values": [0.002, 0.01],
              "modes": ["scalar", "none"]},
}

_NUMERIC = (int, float)


class ConfigError(ValueError):
    """Carries the full list of config problems."""

    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


def _merge(base: dict, override: dict, prefix: str, problems: list) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            problems.append(f"unknown key: {path}")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                problems.append(f"{path}: expected a mapping")
                continue
            out[key] = _merge(base[key], value, path + ".", problems)
        else:
            out[key] = value
    return out


def _type_ok(default, value) -> bool:
    if value is None or default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, _NUMERIC):
        return isinstance(value, _NUMERIC) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _validate(cfg: dict, problems: list) -> None:
    for section, table in DEFAULTS.items():
        for key, default in table.items():
            value = cfg[section][key]
            if not _type_ok(default, value):
                problems.append(
                    f"{section}.{key}: expected "
                    f"{type(default).__name__}, got {value!r}")
    if not problems:
        p = cfg["params"]
        if p["kernel_mode"] not in KERNEL_MODES:
            problems.append(f"params.kernel_mode: must be one of "
                            f"{KERNEL_MODES}")
        if abs(p["gamma1_frac"] + p["gamma2_frac"] - 1.0) > 1e-12:
            problems.append("params.gamma1_frac + params.gamma2_frac "
                            "must equal 1")
        if cfg["spectrum"]["delta1_points"] < 2:
            problems.append("spectrum.delta1_points: need at least 2")
        if cfg["spectrum"]["realizations"] < 1:
            problems.append("spectrum.realizations: need at least 1")
        if cfg["stirap"]["convention"] not in ("shifted", "literal"):
            problems.append("stirap.convention: must be shifted or literal")
        for mode in cfg["stirap"]["modes"]:
            if mode not in KERNEL_MODES:
                problems.append(f"stirap.modes: invalid mode {mode!r}")
        if cfg["sweep"]["axis"] not in ("density", "thickness"):
            problems.append("sweep.axis: must be density or thickness")
        if not cfg["sweep"]["values"]:
            problems.append("sweep.values: must be a non-empty list")
        for mode in cfg["sweep"]["modes"]:
            if mode not in KERNEL_MODES:
                problems.append(f"sweep.modes: invalid mode {mode!r}")
        if cfg["cloud"]["radius_kR"] <= 0 or cfg["cloud"]["thickness_kL"] <= 0:
            problems.append("cloud dimensions must be positive")
        if cfg["cloud"]["density"] < 0:
            problems.append("cloud.density: must be non-negative")


def load_config(path: str | None, overrides=()) -> dict:
    """Defaults merged with the YAML file and dotted --set overrides."""
    problems: list = []
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        cfg = _merge(DEFAULTS, user, "", problems)
    for item in overrides:
        if "=" not in item:
            problems.append(f"--set needs key.path=value, got {item!r}")
            continue
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        value = yaml.safe_load(raw)
        table = DEFAULTS
        target = cfg
        ok = True
        for k in keys[:-1]:
            if not isinstance(table.get(k), dict):
                problems.append(f"unknown key: {dotted}")
                ok = False
                break
            table = table[k]
            target = target[k]
        if ok:
            if keys[-1] not in table:
                problems.append(f"unknown key: {dotted}")
            else:
                default = table[keys[-1]]
                if (isinstance(value, str)
                        and isinstance(default, _NUMERIC)
                        and not isinstance(default, bool)):
                    # YAML needs "1.0e-6" to resolve a float; accept the
                    # common "1e-6" spelling on the command line too.
                    try:
                        value = float(value)
                    except ValueError:
                        pass
                target[keys[-1]] = value
    _validate(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def _build_cloud_spec(cfg) -> CloudSpec:
    c = cfg["cloud"]
    return CloudSpec(radius_kR=float(c["radius_kR"]),
                     thickness_kL=float(c["thickness_kL"]),
                     density=float(c["density"]),
                     min_pair_separation_k=float(c["min_pair_separation_k"]))


def _build_params(cfg) -> LambdaParams:
    p = cfg["params"]
    return LambdaParams(omega1=float(p["omega1"]), omega2=float(p["omega2"]),
                        delta1=float(p["delta1"]), delta2=float(p["delta2"]),
                        gamma1_frac=float(p["gamma1_frac"]),
                        gamma2_frac=float(p["gamma2_frac"]),
                        k2_over_k1=float(p["k2_over_k1"]),
                        kernel_mode=p["kernel_mode"])


def _build_detector(cfg, spec: CloudSpec) -> DetectorDisk:
    d = cfg["detector"]
    base = default_detector(spec.radius_kR, spec.thickness_kL,
                            radial_nodes=int(d["radial_nodes"]),
                            angular_nodes=int(d["angular_nodes"]))
    z0 = base.z0_k if d["z0_k"] is None else float(d["z0_k"])
    s_max = base.s_max_k if d["s_max_k"] is None else float(d["s_max_k"])
    return DetectorDisk(z0_k=z0, s_max_k=s_max,
                        radial_nodes=base.radial_nodes,
                        angular_nodes=base.angular_nodes)


def _build_tolerances(cfg) -> Tolerances:
    t = cfg["tolerances"]
    return Tolerances(rtol=float(t["rtol"]), atol=float(t["atol"]),
                      steady_residual=float(t["steady_residual"]),
                      t_max=float(t["t_max"]))


def _build_plan(cfg, workers: int) -> RealizationPlan:
    s = cfg["spectrum"]
    if s["adaptive"]:
        return RealizationPlan(count=int(s["realizations"]), workers=workers,
                               fwhm_stderr_frac=float(s["fwhm_stderr_frac"]),
                               min_count=int(s["min_realizations"]),
                               max_count=int(s["max_realizations"]),
                               batch=int(s["batch"]))
    return RealizationPlan(count=int(s["realizations"]), workers=workers)


def _workers(cfg) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        return max(1, int(env))
    return max(1, int(cfg["run"]["workers"]))


def _grid(table, lo_key="delta1_min", hi_key="delta1_max",
          n_key="delta1_points") -> np.ndarray:
    return np.linspace(float(table[lo_key]), float(table[hi_key]),
                       int(table[n_key]))


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_json_ready(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(command: str, cfg: dict, started: str, seeds) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "package": {"name": "eitcloud", "version": __version__},
        "command": command,
        "config": cfg,
        "master_seed": cfg["run"]["master_seed"],
        "rng_algorithm": RNG_ALGORITHM,
        "seed_derivation": "SeedSequence(master_seed, "
                           "spawn_key=(point_index, realization_index))",
        "seeds": seeds,
        "timestamps": {"start": started, "end": None},
        "diagnostics": {},
        "status": "running",
    }


def _finish_manifest(path: Path, manifest: dict, status: str = "ok") -> None:
    manifest["timestamps"]["end"] = _utcnow()
    manifest["status"] = status
    _write_json(path, manifest)


def _spectrum_csv(path: Path, result) -> None:
    stderr = result.t_stderr
    with open(path, "w") as fh:
        fh.write("delta1_over_gamma,t_mean,t_stderr,n_realizations\n")
        for i, d in enumerate(result.delta1_grid):
            se = "" if stderr is None else _fmt(stderr[i])
            fh.write(f"{_fmt(d)},{_fmt(result.t_mean[i])},{se},"
                     f"{result.n_realizations}\n")


def _metrics_payload(result) -> dict:
    payload = {
        "n_realizations": result.n_realizations,
        "seeds": list(result.seeds),
        "parameters": asdict(result.params),
        "cloud": asdict(result.cloud_spec),
        "detector": asdict(result.detector),
    }
    try:
        mm = result.mean_metrics()
        payload["mean_curve"] = {
            "fwhm": mm.fwhm, "t_peak": mm.t_peak, "t_min": mm.t_min,
            "valley_detunings": list(mm.valley_detunings)}
    except WindowShapeError as exc:
        payload["mean_curve"] = None
        payload["window_error"] = str(exc)
    per = [m for m in result.per_realization_metrics() if m is not None]
    if len(per) >= 2:
        fwhm_mean, fwhm_se = ensemble_stats([m.fwhm for m in per])
        tmin_mean, tmin_se = ensemble_stats([m.t_min for m in per])
        payload["per_realization"] = {
            "n_valid": len(per), "fwhm_mean": fwhm_mean,
            "fwhm_stderr": fwhm_se, "tmin_mean": tmin_mean,
            "tmin_stderr": tmin_se}
    else:
        payload["per_realization"] = {"n_valid": len(per)}
    return payload


def run_spectrum(cfg: dict, outdir: Path) -> int:
    started = _utcnow()
    spec = _build_cloud_spec(cfg)
    params = _build_params(cfg)
    detector = _build_detector(cfg, spec)
    tol = _build_tolerances(cfg)
    plan = _build_plan(cfg, _workers(cfg))
    grid = _grid(cfg["spectrum"])
    master = int(cfg["run"]["master_seed"])
    runs = [("", params)]
    if cfg["spectrum"]["compare_none"] and params.kernel_mode != "none":
        runs.append(("_none", replace(params, kernel_mode="none")))
    manifest = _manifest("spectrum", cfg, started, seeds={})
    for suffix, p in runs:
        label = p.kernel_mode
        print(f"spectrum: mode={label} realizations>={plan.count} "
              f"grid={grid.size}", file=sys.stderr)
        try:
            result = spectrum(spec, p, detector, grid, plan, master,
                              point_index=0, tolerances=tol)
        except (SpectrumPointError, ConvergenceError, StiffnessError) as exc:
            print(f"FAILED: {exc}", file=sys.stderr)
            manifest["diagnostics"][f"error{suffix}"] = str(exc)
            _finish_manifest(outdir / "manifest.json", manifest, "failed")
            (outdir / "FAILED.txt").write_text(str(exc) + "\n")
            return 3
        _spectrum_csv(outdir / f"spectrum{suffix}.csv", result)
        _write_json(outdir / f"metrics{suffix}.json",
                    _metrics_payload(result))
        manifest["seeds"][label] = list(result.seeds)
        manifest["diagnostics"][label] = _json_ready(result.diagnostics)
    _finish_manifest(outdir / "manifest.json", manifest)
    return 0


def run_stirap(cfg: dict, outdir: Path) -> int:
    started = _utcnow()
    spec = _build_cloud_spec(cfg)
    base = _build_params(cfg)
    tol = _build_tolerances(cfg)
    st = cfg["stirap"]
    schedule = StirapSchedule(omega_max=float(st["omega_max"]),
                              t0=float(st["t0"]), tr=float(st["tr"]),
                              convention=st["convention"])
    t_eval = np.linspace(0.0, float(st["t_end"]), int(st["t_points"]))
    master = int(cfg["run"]["master_seed"])
    workers = _workers(cfg)
    manifest = _manifest("stirap", cfg, started, seeds={})
    traces = []
    for mode in st["modes"]:
        params = replace(base, kernel_mode=mode)
        print(f"stirap: mode={mode} realizations={st['realizations']}",
              file=sys.stderr)
        try:
            trace = stirap_ensemble(spec, params, schedule, t_eval,
                                    int(st["realizations"]), master,
                                    tolerances=tol, workers=workers)
        except (ConvergenceError, StiffnessError) as exc:
            print(f"FAILED: {exc}", file=sys.stderr)
            manifest["diagnostics"][f"error_{mode}"] = str(exc)
            _finish_manifest(outdir / "manifest.json", manifest, "failed")
            (outdir / "FAILED.txt").write_text(str(exc) + "\n")
            return 3
        traces.append((mode, trace))
        manifest["seeds"][mode] = list(trace.seeds)
        manifest["diagnostics"][mode] = {
            "final_mean_s11": float(trace.mean_s11[-1]),
            "final_s11_per_realization": _json_ready(trace.final_s11)}
    with open(outdir / "stirap.csv", "w") as fh:
        fh.write("mode,t_gamma,mean_s11,mean_s22,mean_s33,omega1,omega2\n")
        for mode, tr in traces:
            for i, t in enumerate(tr.times):
                row = [t, tr.mean_s11[i], tr.mean_s22[i], tr.mean_s33[i],
                       tr.omega1[i], tr.omega2[i]]
                fh.write(mode + "," + ",".join(_fmt(v) for v in row) + "\n")
    _finish_manifest(outdir / "manifest.json", manifest)
    return 0


def run_oracle(cfg: dict, outdir: Path) -> int:
    started = _utcnow()
    spec = _build_cloud_spec(cfg)
    params = _build_params(cfg)
    grid = _grid(cfg["oracle"])
    manifest = _manifest("oracle", cfg, started, seeds={})
    with open(outdir / "oracle.csv", "w") as fh:
        fh.write("delta1_over_gamma,sigma33,sigma_sc_k1sq,b\n")
        for d in grid:
            p = replace(params, delta1=float(d))
            row = [d, oracle_mod.sigma33_steady(p),
                   oracle_mod.scattering_cross_section(p),
                   oracle_mod.optical_thickness(p, spec)]
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    _finish_manifest(outdir / "manifest.json", manifest)
    return 0


def run_sweep(cfg: dict, outdir: Path) -> int:
    started = _utcnow()
    base_spec = _build_cloud_spec(cfg)
    base_params = _build_params(cfg)
    detector_cfg = cfg["detector"]
    tol = _build_tolerances(cfg)
    plan = _build_plan(cfg, _workers(cfg))
    grid = _grid(cfg["spectrum"])
    master = int(cfg["run"]["master_seed"])
    axis = cfg["sweep"]["axis"]
    manifest = _manifest("sweep", cfg, started, seeds={})
    failures = []
    rows = []
    for p_idx, value in enumerate(cfg["sweep"]["values"]):
        if axis == "density":
            spec = replace(base_spec, density=float(value))
        else:
            spec = replace(base_spec, thickness_kL=float(value))
        detector = _build_detector({"detector": detector_cfg}, spec)
        for mode in cfg["sweep"]["modes"]:
            params = replace(base_params, kernel_mode=mode)
            tag = f"point{p_idx}_{mode}"
            print(f"sweep: {axis}={value} mode={mode}", file=sys.stderr)
            try:
                result = spectrum(spec, params, detector, grid, plan,
                                  master, point_index=p_idx, tolerances=tol)
            except (SpectrumPointError, ConvergenceError,
                    StiffnessError) as exc:
                print(f"point FAILED: {exc}", file=sys.stderr)
                failures.append(tag)
                manifest["diagnostics"][f"error_{tag}"] = str(exc)
                continue
            _spectrum_csv(outdir / f"spectrum_{tag}.csv", result)
            payload = _metrics_payload(result)
            payload["axis"] = axis
            payload["axis_value"] = float(value)
            _write_json(outdir / f"metrics_{tag}.json", payload)
            manifest["seeds"][tag] = list(result.seeds)
            per = payload["per_realization"]
            if per.get("fwhm_mean") is not None:
                rows.append((float(value), per["fwhm_mean"],
                             per["fwhm_stderr"], per["tmin_mean"],
                             per["tmin_stderr"], mode))
            else:
                failures.append(tag)
                manifest["diagnostics"][f"error_{tag}"] = \
                    "window extraction failed"
    with open(outdir / "summary.csv", "w") as fh:
        fh.write("axis_value,fwhm_mean,fwhm_stderr,tmin_mean,tmin_stderr,"
                 "mode\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row[:5]) + f",{row[5]}\n")
    status = "partial" if failures else "ok"
    manifest["diagnostics"]["failures"] = failures
    _finish_manifest(outdir / "manifest.json", manifest, status)
    return 4 if failures else 0


def run_validate(cfg: dict, outdir: Path) -> int:
    from . import validation
    results = validation.run_all()
    ok = True
    for name, passed, detail in results:
        ok = ok and passed
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}",
              file=sys.stderr)
    return 0 if ok else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eitcloud",
        description="Transmission spectra and population transfer in "
                    "disordered three-level atom clouds")
    parser.add_argument("command",
                        choices=["spectrum", "stirap", "oracle", "sweep",
                                 "validate"])
    parser.add_argument("-c", "--config", default=None,
                        help="YAML config file merged over defaults")
    parser.add_argument("--set", action="append", default=[],
                        metavar="KEY.PATH=VALUE",
                        help="override a config entry (repeatable)")
    parser.add_argument("-o", "--out", default=".",
                        help="output directory (created if missing)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    runner = {"spectrum": run_spectrum, "stirap": run_stirap,
              "oracle": run_oracle, "sweep": run_sweep,
              "validate": run_validate}[args.command]
    return runner(cfg, outdir)


if __name__ == "__main__":
    sys.exit(main())
