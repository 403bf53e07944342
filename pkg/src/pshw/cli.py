"""Command-line experiment runner.

    pshw run CONFIG [--out DIR] [--seeds 1,2,3] [--threads K]
    pshw validate CONFIG
    pshw describe EXPERIMENT

Exit codes: 0 success, 1 when any seed failed, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__

EXIT_OK, EXIT_SEED_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("pshw").joinpath("schema/config.schema.json").read_text())


def validate_config(config) -> dict:
    """Check ``config`` against the published schema; raise ConfigError on failure."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        msg = "; ".join(f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors)
        raise ConfigError(msg)
    return config


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate_config(config)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# -- experiments -----------------------------------------------------------------------


def _trap_spec(params: dict, default: dict):
    from .trap import TrapSpec

    return TrapSpec(**{**default, **params.get("trap", {})})


def _thermal_equilibration(p: dict, seed: int) -> dict:
    from .core import make_grid
    from .thermal import ThermalSpec, build_thermal_state, equilibration_report

    grid = make_grid(1, 2, p.get("points", 128), p.get("length", 40.0))
    state = build_thermal_state(grid, ThermalSpec(p.get("beta", 1.0), p.get("modes", 50), seed, p.get("symmetry", "none")))
    rep = equilibration_report(state, p.get("band_cells", 16) * grid.spacing[0], tolerance=p.get("tolerance", 0.05))
    return {"metrics": {"report": rep.to_dict()}, "series": {}}


def _diagram(p: dict, seed: int) -> dict:
    from .core import make_grid
    from .dynamics import gp_ground_state
    from .hydro import GPInitial, diagram_residual

    grid = make_grid(2, 1, p.get("points", 64), p.get("length", 20.0))
    X, Y = (np.broadcast_to(a, grid.shape) for a in grid.mesh())
    w, eps = p.get("omega", 1.0), p.get("quadrupole", 0.01)
    V0 = 0.5 * w**2 * ((1 + eps) * X**2 + (1 - eps) * Y**2)
    V = 0.5 * w**2 * (X**2 + Y**2)
    g = p.get("g", 1.0)
    gs = gp_ground_state(grid, V0, g, p.get("atoms", 1000.0))
    dt = p.get("dt", 0.02)
    res = diagram_residual(
        GPInitial(gs.psi, grid, g), V, "euler", p.get("periods", 1.0) * 2 * np.pi / w, dt,
        quantum_dt=p.get("quantum_dt", dt / 10), samples=p.get("samples", 8),
    )
    metrics = {"max_l2": float(np.max(res.l2)), "max_linf": float(np.max(res.linf)), "legs": dict(res.legs)}
    return {"metrics": metrics, "series": {"residual": res.csv_rows()}}


def _evaporation(p: dict, seed: int) -> dict:
    from .trap import classical_evaporation

    spec = _trap_spec(p, {"kind": "gaussian", "V0": 6.0, "a": 1.0})
    rec = classical_evaporation(p.get("particles", 512), spec, p.get("T0", 1.0), p.get("cross_section", 0.1), p.get("t_max", 20.0), seed, dt=p.get("dt"))
    per = rec.energy / np.maximum(rec.retained, 1)
    metrics = {
        "retained_final": int(rec.retained[-1]),
        "energy_per_particle_initial": float(per[0]),
        "energy_per_particle_final": float(per[-1]),
        "escapes": int(rec.escape_energies.size),
        "escape_energy_mean": float(rec.escape_energies.mean()) if rec.escape_energies.size else None,
        "thermal_energy_mean": float(rec.thermal_at_escape.mean()) if rec.thermal_at_escape.size else None,
        "bookkeeping_error": rec.bookkeeping_error,
        "knudsen": rec.knudsen,
        "collisions": rec.collisions,
    }
    series = [("t", "retained", "energy")] + [(float(t), int(n), float(e)) for t, n, e in zip(rec.times, rec.retained, rec.energy)]
    escapes = [("t", "energy", "thermal")] + [tuple(map(float, r)) for r in zip(rec.escape_times, rec.escape_energies, rec.thermal_at_escape)]
    return {"metrics": metrics, "series": {"retained": series, "escapes": escapes}}


def _leakage(p: dict, seed: int) -> dict:
    from .core import ManyBodyState, make_grid
    from .dynamics import PropagationPlan
    from .trap import quantum_leakage

    grid = make_grid(1, 1, p.get("points", 512), p.get("length", 80.0))
    x = grid.axis_coords(0)
    spec = _trap_spec(p, {"kind": "gaussian", "V0": 20.0, "a": 2.0})
    psi = np.exp(-(x**2) / (2 * p.get("width", 1.0) ** 2)) * np.exp(1j * p.get("momentum", 0.0) * x)
    plan = PropagationPlan(p.get("dt", 0.002), p.get("steps", 10000), absorbing_width=p.get("absorbing_width", 10.0), absorbing_strength=p.get("absorbing_strength", 5.0))
    rep = quantum_leakage(ManyBodyState.from_amplitude(grid, psi), spec, plan, stride=max(1, plan.steps // 100))
    metrics = {
        "bound_count": rep.bound_count,
        "initial_bound": rep.initial_bound,
        "final_norm": float(rep.norm[-1]),
        "leak_rate": None if not np.isfinite(rep.leak_rate) else rep.leak_rate,
        "tau_estimate": None if not np.isfinite(rep.tau_estimate) else rep.tau_estimate,
        "tau_printed": None if not np.isfinite(rep.tau_printed) else rep.tau_printed,
        "status": rep.status,
    }
    return {"metrics": metrics, "series": {"norm": rep.csv_rows()}, "snapshots": rep.densities}


def _history(p: dict, seed: int) -> dict:
    from .core import make_grid
    from .trap import history_contrast, history_radius_shift

    grid = make_grid(1, 1, p.get("points", 512), p.get("length", 60.0))
    spec = _trap_spec(p, {"kind": "gaussian", "V0": 50.0, "a": 3.0})
    res = history_contrast(spec, grid, [seed], p.get("cut_fraction", 0.4), p.get("temperature", 1e3))
    shift = history_radius_shift(tuple(p.get("R_coefficients", (1.0, 0.0, 1.0))), 0.0, p.get("delta_E", 1.0))
    metrics = {
        "mean_energy": float(res.mean_energy[0]),
        "width_evaporated": float(res.width_evaporated[0]),
        "width_released": float(res.width_released[0]),
        "release_time": float(res.release_time[0]),
        "delta_R": shift.delta_R,
        "delta_R_printed_linear": shift.printed_linear,
    }
    return {"metrics": metrics, "series": {}}


def _lattice(p: dict, seed: int) -> dict:
    from .vortex import lattice_deviation

    kw = {"s_values": tuple(p["s_values"])} if "s_values" in p else {}
    R = p.get("R", 100.0)
    res = lattice_deviation(R, 1.0, p.get("Omega", 1.0), p.get("M", 1.0), **kw)
    return {"metrics": {"coefficient": res.coefficient, "printed": 2.0}, "series": {}}


def _scales(p: dict, seed: int) -> dict:
    from .vortex import scale_estimates

    rep = scale_estimates(**p)
    metrics = {"v_del_cm": rep.v_del_cm, "v_del_atom": rep.v_del_atom, "omega_threshold": rep.omega_threshold, "within_order": rep.within_order()}
    return {"metrics": metrics, "series": {}}


@dataclass(frozen=True)
class Experiment:
    run: object
    summary: str


EXPERIMENTS = {
    "thermal_equilibration": Experiment(_thermal_equilibration, "Random-phase thermal pair; current balance near the two-body diagonal."),
    "diagram": Experiment(_diagram, "GP versus Euler commuting square for a released quadrupole cloud; L2/Linf density residuals."),
    "evaporation": Experiment(_evaporation, "Hard spheres in a gaussian trap; retained energy and escape energies."),
    "leakage": Experiment(_leakage, "One-body packet in a trap with absorbing edges; norm and bound fraction."),
    "history": Experiment(_history, "Evaporation versus release-recapture to equal mean energy; energy widths."),
    "lattice": Experiment(_lattice, "Vortex-lattice angular momentum deviation coefficient."),
    "scales": Experiment(_scales, "SI delocalization and rotation scale estimates."),
}


# -- outputs ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, rows) -> None:
    """First row is the header; an empty series still gets its header."""
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def emit_outputs(result: dict, directory: Path, fmt: dict, digest: str) -> list:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt.get("json", True):
        path = directory / "metrics.json"
        write_json(path, {"config_hash": digest, "metrics": result.get("metrics", {})})
        written.append(path)
    if fmt.get("csv", True):
        for name, rows in sorted(result.get("series", {}).items()):
            path = directory / f"{name}.csv"
            write_csv(path, rows)
            written.append(path)
    snaps = result.get("snapshots")
    if fmt.get("snapshots", False) and snaps:
        stride = fmt.get("stride", 1)
        sdir = directory / "snapshots"
        sdir.mkdir(exist_ok=True)
        for i, frame in enumerate(snaps[::stride]):
            path = sdir / f"frame_{i:04d}.npy"
            np.save(path, np.asarray(frame))
            written.append(path)
    return written


# -- runner ----------------------------------------------------------------------------


@dataclass
class RunManifest:
    config_hash: str
    version: str
    experiment: str
    seeds: list
    status: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(s != "ok" for s in self.status.values())

    @property
    def exit_code(self) -> int:
        return EXIT_SEED_FAILURE if self.failed else EXIT_OK

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "version": self.version,
            "experiment": self.experiment,
            "seeds": self.seeds,
            "status": {str(k): v for k, v in self.status.items()},
            "artifacts": {str(k): v for k, v in self.artifacts.items()},
            "wall_time": {str(k): v for k, v in self.wall_time.items()},
        }


def _run_seed(experiment: Experiment, params: dict, seed: int):
    start = time.perf_counter()
    try:
        result = experiment.run(copy.deepcopy(params), seed)
        status = "ok"
    except Exception as exc:  # a failing seed must not abort the batch
        result, status = None, f"failed: {type(exc).__name__}: {exc}"
    return result, status, time.perf_counter() - start


def run_experiment(config: dict, out: str | None = None, seeds=None, threads: int = 1) -> RunManifest:
    config = validate_config(copy.deepcopy(config))
    if seeds is not None:
        config["seeds"] = list(seeds)
    config.setdefault("seeds", [0])
    validate_config(config)
    out_dir = Path(out or config.get("output") or f"runs/{config['experiment']}")
    config.pop("output", None)
    digest = config_hash(config)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc
    experiment = EXPERIMENTS[config["experiment"]]
    params = config.get("params", {})
    fmt = config.get("format", {})
    manifest = RunManifest(digest, __version__, config["experiment"], list(config["seeds"]))
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        futures = [pool.submit(_run_seed, experiment, params, s) for s in config["seeds"]]
        # merged and written in seed order, one at a time
        for seed, fut in zip(config["seeds"], futures):
            result, status, wall = fut.result()
            manifest.status[seed] = status
            manifest.wall_time[seed] = wall
            paths = []
            if result is not None:
                paths = emit_outputs(result, out_dir / f"seed_{seed}", fmt, digest)
            manifest.artifacts[seed] = [str(p.relative_to(out_dir)) for p in paths]
    write_json(out_dir / "manifest.json", manifest.to_dict())
    return manifest


# -- entry point -----------------------------------------------------------------------


def _seed_list(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pshw", description="Run pshw experiments from JSON configs.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("config")
    run.add_argument("--out")
    run.add_argument("--seeds", type=str)
    run.add_argument("--threads", type=int, default=1)
    val = sub.add_parser("validate", help="check a config against the schema")
    val.add_argument("config")
    desc = sub.add_parser("describe", help="show an experiment's parameters")
    desc.add_argument("experiment")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "describe":
            if args.experiment not in EXPERIMENTS:
                raise ConfigError(f"unknown experiment {args.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
            schema = load_schema()["$defs"][args.experiment]
            print(json.dumps({"experiment": args.experiment, "summary": EXPERIMENTS[args.experiment].summary, "params": schema}, indent=2, sort_keys=True))
            return EXIT_OK
        config = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({config['experiment']})")
            return EXIT_OK
        seeds = _seed_list(args.seeds) if args.seeds else None
        manifest = run_experiment(config, args.out, seeds, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for seed in manifest.seeds:
        print(f"seed {seed}: {manifest.status[seed]} ({manifest.wall_time[seed]:.2f} s)")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
