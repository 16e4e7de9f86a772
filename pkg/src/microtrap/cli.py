"""Batch front end.

    microtrap <command> [--config FILE] [--out DIR] [--seed N] [--workers N]

Commands: fields, zeros, storage, adiabatic, analyze-tof, fit-lifetime.
Exit codes: 0 success, 2 configuration error, 3 runtime or fit error,
4 I/O error.  The run configuration is an INI-style file documented in
``configs/SCHEMA.md``; unknown sections or keys are rejected.
"""

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .analysis import (
    DataError, FitError, cooling_sweep, fit_exponential_lifetime, mean_velocity_from_signal,
    optimal_cooling_factor, temperature_from_mean_velocity,
)
from .detection import DetectionGeometry, read_tof, write_tof
from .dynamics import DEFAULT_DT, LossModelConfig
from .geometry_fields import ExitAperture, FieldModel, TrapGeometry, find_field_zeros, write_field_map
from .protocols import (
    WINDOW_CONVENTION, AccountingError, ConfigurationError, ExperimentConfig, ExperimentError, ProtocolConfig,
    SourceConfig, default_electrodes, run_experiment,
)
from .schedule import ElectrodeConfig, RampSchedule
from .stark import CH3F, RotState, Species

log = logging.getLogger("microtrap")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

_FLOAT, _INT, _STR, _BOOL, _OPT_FLOAT = "float", "int", "str", "bool", "float?"

SCHEMA = {
    "geometry": {"length_x": _FLOAT, "width_y": _FLOAT, "gap_z": _FLOAT, "region_split_x": _FLOAT,
                 "stripe_period": _FLOAT, "aperture_wall": _STR, "aperture_center": _FLOAT,
                 "aperture_width": _FLOAT},
    "electrodes": {"v_micro": _FLOAT, "v_offset_region1": _FLOAT, "v_offset_region2": _FLOAT,
                   "e_perimeter": _FLOAT, "wedge_bias": _FLOAT},
    "field": {"n_harmonics": _INT, "region_smoothing": _OPT_FLOAT, "perimeter_decay": _OPT_FLOAT,
              "soft_perimeter": _BOOL, "perimeter": _STR, "gradient": _STR, "fd_step": _FLOAT},
    "species": {"name": _STR, "mass": _FLOAT, "dipole": _FLOAT, "states": _STR},
    "source": {"flux_temperature": _FLOAT, "e_load": _FLOAT, "n_molecules": _INT},
    "loss": {"majorana_mode": _STR, "e_critical": _FLOAT, "xi_critical": _FLOAT, "background_rate": _FLOAT,
             "leak_probability": _FLOAT},
    "protocol": {"e_unload": _OPT_FLOAT, "t_hold": _FLOAT, "t_ramp": _FLOAT, "t_total_constraint": _FLOAT,
                 "step_offset_region1": _OPT_FLOAT, "t_switch": _FLOAT, "t_settle": _FLOAT, "t_unload": _FLOAT,
                 "sweep": _STR, "energy_consistent_loading": _BOOL},
    "detection": {"guide_length": _FLOAT, "detection_efficiency": _FLOAT, "bin_width": _FLOAT, "jitter": _FLOAT},
    "integration": {"dt": _FLOAT, "seed": _INT, "workers": _INT},
    "output": {"directory": _STR},
    "grid": {"x": _STR, "y": _STR, "z": _STR, "t": _FLOAT},
    "zeros": {"region": _STR, "threshold": _FLOAT, "resolution": _OPT_FLOAT, "t": _FLOAT},
}


class RunConfig:
    """Parsed and validated run configuration."""

    def __init__(self, values: dict, text: str):
        self.values = values
        self.sha256 = hashlib.sha256(text.encode()).hexdigest()

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)

    def section(self, name) -> dict:
        return dict(self.values.get(name, {}))


def _convert(kind, raw, where):
    raw = raw.strip()
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _OPT_FLOAT:
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        if kind == _INT:
            return int(raw)
        if kind == _BOOL:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read {raw!r} as {kind}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax: {exc}") from None
    values = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown section [{sec}]")
        values[sec] = {}
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigurationError(f"unknown key '{key}' in section [{sec}]")
            values[sec][key] = _convert(SCHEMA[sec][key], raw, f"[{sec}] {key}")
    return RunConfig(values, text)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig({}, "")
    with open(path) as fh:
        text = fh.read()
    return parse_config(text)


def _floats(text, n=None, where=""):
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"{where}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigurationError(f"{where}: expected {n} numbers, got {len(vals)}")
    return vals


def _parse_states(text):
    """``j,k,m:weight`` entries separated by semicolons."""
    out = []
    for item in text.split(";"):
        if not item.strip():
            continue
        try:
            q, w = item.split(":")
            j, k, m = (int(v) for v in q.split(","))
            out.append((RotState(j, k, m), float(w)))
        except ValueError as exc:
            raise ConfigurationError(f"[species] states: bad entry {item.strip()!r} ({exc})") from None
    return tuple(out)


def build_geometry(cfg: RunConfig) -> TrapGeometry:
    g = cfg.section("geometry")
    ap_kw = {}
    for key, name in (("aperture_wall", "wall"), ("aperture_center", "center"), ("aperture_width", "width")):
        if key in g:
            ap_kw[name] = g.pop(key)
    try:
        return TrapGeometry(exit_aperture=ExitAperture(**ap_kw), **g)
    except ValueError as exc:
        raise ConfigurationError(f"[geometry] {exc}") from None


def build_model(cfg: RunConfig) -> FieldModel:
    try:
        return FieldModel(**cfg.section("field"))
    except ValueError as exc:
        raise ConfigurationError(f"[field] {exc}") from None


def build_electrodes(cfg: RunConfig, geometry: TrapGeometry) -> ElectrodeConfig:
    sec = cfg.section("electrodes")
    try:
        return default_electrodes(geometry).replace(**sec) if sec else default_electrodes(geometry)
    except ValueError as exc:
        raise ConfigurationError(f"[electrodes] {exc}") from None


def build_experiment(cfg: RunConfig) -> tuple:
    """Returns (ExperimentConfig, sweep values, seed, workers)."""
    geometry = build_geometry(cfg)
    model = build_model(cfg)
    electrodes = build_electrodes(cfg, geometry)
    sp = cfg.section("species")
    states = _parse_states(sp.pop("states")) if "states" in sp else SourceConfig().state_mixture
    try:
        species = Species(mass=sp.get("mass", CH3F.mass), dipole=sp.get("dipole", CH3F.dipole),
                          name=sp.get("name", CH3F.name))
        src = SourceConfig(state_mixture=states, **cfg.section("source"))
        loss = LossModelConfig(**cfg.section("loss"))
        pr = cfg.section("protocol")
        sweep = _floats(pr.pop("sweep"), where="[protocol] sweep") if "sweep" in pr else []
        consistent = pr.pop("energy_consistent_loading", True)
        protocol = ProtocolConfig(e_load=src.e_load, **pr)
        det = DetectionGeometry(**cfg.section("detection"))
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(str(exc)) from None
    dt = cfg.get("integration", "dt", DEFAULT_DT)
    if dt <= 0:
        raise ConfigurationError("[integration] dt must be positive")
    exp = ExperimentConfig(geometry=geometry, electrode_base=electrodes, species=species, source=src, loss=loss,
                           protocol=protocol, detection=det, model=model, dt=dt,
                           energy_consistent_loading=consistent)
    return exp, sweep


def _header(cfg: RunConfig, seed, command) -> str:
    return f"microtrap {command} config_sha256={cfg.sha256} seed={seed}"


def _tag(value: float) -> str:
    return f"{value:.6g}".replace(".", "p").replace("-", "m")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# commands

def cmd_fields(args, cfg: RunConfig, seed: int) -> int:
    geometry = build_geometry(cfg)
    model = build_model(cfg)
    electrodes = build_electrodes(cfg, geometry)
    grid = cfg.section("grid")
    axes = []
    for name, hi in (("x", geometry.length_x), ("y", geometry.width_y), ("z", geometry.gap_z)):
        lo_, hi_, n = _floats(grid.get(name, f"0,{hi},5"), 3, f"[grid] {name}")
        if n < 1 or n != int(n):
            raise ConfigurationError(f"[grid] {name}: point count must be a positive integer")
        if lo_ < 0 or hi_ > hi or lo_ > hi_:
            raise ConfigurationError(f"[grid] {name}: range must lie inside the trap")
        axes.append(np.linspace(lo_, hi_, int(n)))
    path = os.path.join(args.out, "field_map.csv")
    rows = write_field_map(path, *axes, grid.get("t", 0.0), geometry, RampSchedule.static(electrodes), model,
                           comment=_header(cfg, seed, "fields"))
    print(f"wrote {rows} rows to {path}")
    return EXIT_OK


def cmd_zeros(args, cfg: RunConfig, seed: int) -> int:
    geometry = build_geometry(cfg)
    model = build_model(cfg)
    electrodes = build_electrodes(cfg, geometry)
    z = cfg.section("zeros")
    region = _floats(z.get("region", f"0,{geometry.length_x},0,{geometry.width_y},0,{geometry.gap_z}"), 6,
                     "[zeros] region")
    box = ((region[0], region[1]), (region[2], region[3]), (region[4], region[5]))
    try:
        zeros = find_field_zeros(box, z.get("t", 0.0), geometry, RampSchedule.static(electrodes),
                                 z.get("threshold", 1e3), model, resolution=z.get("resolution"))
    except ValueError as exc:
        raise ConfigurationError(f"[zeros] {exc}") from None
    path = os.path.join(args.out, "zeros.csv")
    from .geometry_fields import evaluate
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_header(cfg, seed, 'zeros')}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "Emag"])
        for p in zeros:
            mag = evaluate(p, electrodes, geometry, model)[0, 4]
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(mag))])
    print(f"found {len(zeros)} zeros; wrote {path}")
    return EXIT_OK


def _run_sweep(kind, args, cfg, seed):
    exp, sweep = build_experiment(cfg)
    if not sweep:
        raise ConfigurationError("[protocol] sweep must list at least one value")
    runs = []
    for value in sweep:
        if kind == "storage":
            pc = replace(exp.protocol, t_hold=value)
            name = f"tof_hold_{_tag(value)}.csv"
        else:
            pc = exp.protocol.with_ramp(value)
            name = f"tof_ramp_{_tag(value)}.csv"
        signal, report = run_experiment(kind, replace(exp, protocol=pc), seed, workers=args.workers)
        if signal is not None:
            write_tof(os.path.join(args.out, name), signal,
                      comment=_header(cfg, seed, kind) + f" sweep_value={value!r}")
        runs.append(report.to_dict())
        log.info("%s %s=%g: %s", kind, "t_hold" if kind == "storage" else "t_ramp", value, report.counts)
    return exp, sweep, runs


def cmd_storage(args, cfg: RunConfig, seed: int) -> int:
    exp, sweep, runs = _run_sweep("storage", args, cfg, seed)
    out = {"provenance": {"config_sha256": cfg.sha256, "seed": seed, "command": "storage"}, "runs": runs}
    pts = [(r["t_hold"], r["integrated_signal"]) for r in runs if r["integrated_signal"] > 0]
    if len(pts) >= 3:
        try:
            fit = fit_exponential_lifetime(pts)
            out["lifetime_fit"] = {"tau": fit.tau, "tau_err": fit.tau_err, "amplitude": fit.amplitude,
                                   "residual_norm": fit.residual_norm, "capped": fit.capped,
                                   "status": "unbounded" if fit.capped else "ok"}
        except (FitError, DataError) as exc:
            out["lifetime_fit"] = {"status": f"failed: {exc}"}
    elif len(pts) == 2:
        (t1, s1), (t2, s2) = pts
        if s2 >= s1 or t2 == t1:
            out["lifetime_fit"] = {"status": "unbounded", "tau": "inf", "capped": True}
        else:
            tau = (t2 - t1) / math.log(s1 / s2)
            out["lifetime_fit"] = {"status": "two-point", "tau": tau, "tau_err": "nan", "capped": False}
    else:
        out["lifetime_fit"] = {"status": "insufficient data"}
    path = os.path.join(args.out, "report.json")
    _write_json(path, out)
    print(json.dumps(_jsonable(out["lifetime_fit"])))
    return EXIT_OK


def cmd_adiabatic(args, cfg: RunConfig, seed: int) -> int:
    exp, sweep, runs = _run_sweep("adiabatic", args, cfg, seed)
    f_opt = optimal_cooling_factor(3)
    temps = [r["temperature_post"] for r in runs]
    results = cooling_sweep(sweep, temps, d=3) if all(t > 0 for t in temps) else []
    for r, c in zip(runs, results):
        r["cooling_factor"] = c.cooling_factor
        r["yield"] = c.yield_fraction
    out = {"provenance": {"config_sha256": cfg.sha256, "seed": seed, "command": "adiabatic"},
           "f_opt": f_opt, "temperature_source": "velocity moments of the alive ensemble at the unload trigger",
           "runs": runs}
    _write_json(os.path.join(args.out, "report.json"), out)
    print(f"F_opt(d=3) = {f_opt:.4f}")
    for r in runs:
        print(f"t_ramp={r['t_ramp']:g} s  T={r['temperature_post'] * 1e3:.2f} mK  "
              f"F={r.get('cooling_factor', float('nan')):.3f}")
    return EXIT_OK


def cmd_analyze_tof(args, cfg: RunConfig, seed: int) -> int:
    try:
        signal = read_tof(args.file)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if signal.total <= 0:
        raise DataError(f"{args.file}: signal is empty")
    L = args.length if args.length is not None else signal.guide_length
    if not (L > 0):
        raise ConfigurationError("guide length unknown: pass --length")
    v = mean_velocity_from_signal(signal, L)
    T = temperature_from_mean_velocity(v, args.mass)
    print(json.dumps({"mean_velocity": v, "temperature": T, "guide_length": L, "mass": args.mass,
                      "window": WINDOW_CONVENTION}))
    return EXIT_OK


def cmd_fit_lifetime(args, cfg: RunConfig, seed: int) -> int:
    pts = []
    try:
        with open(args.file) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                a, b = line.split(",")[:2]
                try:
                    pts.append((float(a), float(b)))
                except ValueError:
                    if pts:
                        raise
    except ValueError as exc:
        raise DataError(f"{args.file}: {exc}") from None
    fit = fit_exponential_lifetime(pts, weighting=args.weighting)
    print(json.dumps(_jsonable({"tau": fit.tau, "tau_err": fit.tau_err, "amplitude": fit.amplitude,
                                "residual_norm": fit.residual_norm, "capped": fit.capped})))
    return EXIT_OK


COMMANDS = {
    "fields": cmd_fields, "zeros": cmd_zeros, "storage": cmd_storage, "adiabatic": cmd_adiabatic,
    "analyze-tof": cmd_analyze_tof, "fit-lifetime": cmd_fit_lifetime,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="microtrap", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides [integration] seed)")
    common.add_argument("--workers", type=int, default=None,
                        help="worker threads (default: [integration] workers or $MICROTRAP_WORKERS)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("fields", "zeros", "storage", "adiabatic"):
        sub.add_parser(name, parents=[common])
    a = sub.add_parser("analyze-tof", parents=[common])
    a.add_argument("file")
    a.add_argument("--length", type=float, default=None, help="guide length L (m); default from the file")
    a.add_argument("--mass", type=float, default=CH3F.mass, help="molecular mass (kg)")
    f = sub.add_parser("fit-lifetime", parents=[common])
    f.add_argument("file", help="CSV of t_hold,signal")
    f.add_argument("--weighting", choices=("unweighted", "poisson"), default="unweighted")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("integration", "seed", 0)
        if seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if args.workers is None:
            args.workers = cfg.get("integration", "workers")
        if args.out is None:
            args.out = cfg.get("output", "directory", ".")
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args, cfg, seed)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataError, FitError, ExperimentError, AccountingError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
