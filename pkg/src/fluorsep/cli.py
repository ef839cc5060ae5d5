"""Command-line interface: simulate, estimate, sweep, relight, basis.

A single JSON config file drives every command; the few flags shared across
commands (``--seed``, ``--out``, ``--model``, penalty weights) override the
corresponding config fields. All numerical outputs are deterministic for a
fixed config and seed: randomness flows from one root seed through named
streams, and wall-clock timings live in a separate ``timing.json`` so the
manifest stays byte-stable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cim import estimate_cim
from .core import DEFAULT_GRID, WavelengthGrid, derive_basis, BasisSet, Spectrum, donaldson_from_fluorophores
from .evaluation import sweep_bases, sweep_channels, sweep_convergence, sweep_noise
from .fileio import (
    ParseError,
    atomic_write_text,
    canonical_json,
    estimate_to_dict,
    grid_to_config,
    load_spectrum,
    load_system,
    measurement_from_dict,
    measurement_to_dict,
    read_spectra_csv,
    write_basis_csv,
    write_donaldson_csv,
    write_spectra_csv,
)
from .fixtures import default_bases, fixture_patches
from .forward import GainMatrix, MeasurementGrid, SurfacePatch, add_noise, auto_gain, simulate
from .multi import MultiTuning, estimate_multi
from .relight import relight, render_camera
from .single import SingleTuning, estimate_single
from .util import pool_map


class CliError(Exception):
    """User-facing command error with a machine-readable payload."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise CliError("config", f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError("config", f"config {path} is not valid JSON: line {exc.lineno} column {exc.colno}")


def _config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def _merge_overrides(config: dict, args) -> dict:
    merged = dict(config)
    if getattr(args, "seed", None) is not None:
        merged["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        merged["out"] = args.out
    if getattr(args, "model", None) is not None:
        merged["model"] = args.model
    tuning = dict(merged.get("tuning", {}))
    for key in ("alpha", "beta", "eta"):
        value = getattr(args, key, None)
        if value is not None:
            tuning[key] = value
    if tuning:
        merged["tuning"] = tuning
    merged.setdefault("seed", 0)
    merged.setdefault("out", "out")
    return merged


def _grid_from(config: dict) -> WavelengthGrid:
    if "grid" in config:
        g = config["grid"]
        return WavelengthGrid(float(g["start_nm"]), float(g["step_nm"]), int(g["count"]))
    return DEFAULT_GRID


def _system_from(config: dict, config_dir: Path):
    system_cfg = config.get("system", {"builtin": "bispectral", "grid": grid_to_config(_grid_from(config))})
    if isinstance(system_cfg, str):
        return load_system(config_dir / system_cfg)
    if "builtin" in system_cfg:
        system_cfg = dict(system_cfg)
        system_cfg.setdefault("grid", grid_to_config(_grid_from(config)))
        tmp = json.dumps(system_cfg)
        from .forward import bispectral_system, make_rect_system

        cfg = json.loads(tmp)
        grid = WavelengthGrid(
            float(cfg["grid"]["start_nm"]), float(cfg["grid"]["step_nm"]), int(cfg["grid"]["count"])
        )
        if cfg["builtin"] == "bispectral":
            camera, illuminants = bispectral_system(grid)
        elif cfg["builtin"] == "rect":
            camera, illuminants = make_rect_system(int(cfg["n_filters"]), int(cfg["n_illuminants"]), grid)
        else:
            raise CliError("config", f"unknown builtin system {cfg['builtin']!r}")
        return camera, illuminants, cfg.get("gains", "auto_max_one")
    raise CliError("config", "system must be a path or a builtin description")


def _patches_from(config: dict, grid: WavelengthGrid, config_dir: Path) -> list[SurfacePatch]:
    patches_cfg = config.get("patches", "fixtures")
    if patches_cfg == "fixtures":
        return fixture_patches(grid)
    if isinstance(patches_cfg, dict) and "count" in patches_cfg and "reflectance_csv" not in patches_cfg:
        return fixture_patches(grid, int(patches_cfg["count"]))
    if isinstance(patches_cfg, dict):
        refl_w, refl_v, _ = read_spectra_csv(config_dir / patches_cfg["reflectance_csv"])
        ex_w, ex_v, _ = read_spectra_csv(config_dir / patches_cfg["excitation_csv"])
        em_w, em_v, _ = read_spectra_csv(config_dir / patches_cfg["emission_csv"])
        n = refl_v.shape[1]
        if ex_v.shape[1] != n or em_v.shape[1] != n:
            raise CliError(
                "config",
                f"patch CSV column counts differ: reflectance {n}, "
                f"excitation {ex_v.shape[1]}, emission {em_v.shape[1]}",
            )
        patches = []
        for k in range(n):
            refl = Spectrum(
                grid=grid,
                values=np.interp(grid.wavelengths, refl_w, refl_v[:, k], left=0.0, right=0.0),
                role="reflectance",
            )
            ex = Spectrum(
                grid=grid,
                values=np.interp(grid.wavelengths, ex_w, ex_v[:, k], left=0.0, right=0.0),
                role="excitation",
            )
            em = Spectrum(
                grid=grid,
                values=np.interp(grid.wavelengths, em_w, em_v[:, k], left=0.0, right=0.0),
                role="emission",
            )
            patches.append(
                SurfacePatch(reflectance=refl, donaldson=donaldson_from_fluorophores([(ex, em)]))
            )
        return patches
    raise CliError("config", "patches must be 'fixtures', {'count': n} or CSV paths")


def _bases_from(config: dict, grid: WavelengthGrid, config_dir: Path) -> BasisSet:
    bases_cfg = config.get("bases", {})
    if "reflectance_csv" in bases_cfg:
        from .fileio import read_basis_csv

        return BasisSet(
            reflectance=read_basis_csv(config_dir / bases_cfg["reflectance_csv"], "reflectance"),
            excitation=read_basis_csv(config_dir / bases_cfg["excitation_csv"], "excitation"),
            emission=read_basis_csv(config_dir / bases_cfg["emission_csv"], "emission"),
        )
    return default_bases(
        grid,
        n_reflectance=int(bases_cfg.get("n_reflectance", 5)),
        n_excitation=int(bases_cfg.get("n_excitation", 12)),
        n_emission=int(bases_cfg.get("n_emission", 12)),
    )


def _tuning_from(config: dict, model: str):
    tuning = config.get("tuning", {})
    if model == "multi":
        allowed = {
            "alpha", "beta", "eta", "rho", "max_iterations",
            "primal_tol", "dual_tol", "adapt_rho",
        }
        kwargs = {k: v for k, v in tuning.items() if k in allowed}
        return MultiTuning(**kwargs)
    allowed = {"alpha", "beta", "max_outer_iterations", "objective_tol", "qp_tolerance", "qp_max_iterations"}
    kwargs = {k: v for k, v in tuning.items() if k in allowed}
    return SingleTuning(**kwargs)


def _write_manifest(out_dir: Path, command: str, config: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config_hash": _config_hash(config),
        "seed": config.get("seed", 0),
        "version": __version__,
        "outputs": sorted(outputs),
    }
    atomic_write_text(out_dir / "manifest.json", canonical_json(manifest))


def _write_timing(out_dir: Path, started: float) -> None:
    timing = {"started_unix": started, "finished_unix": time.time()}
    timing["duration_s"] = timing["finished_unix"] - timing["started_unix"]
    atomic_write_text(out_dir / "timing.json", canonical_json(timing))


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    started = time.time()
    config = _merge_overrides(_load_config(args.config), args)
    config_dir = Path(args.config).parent if args.config else Path.cwd()
    out_dir = Path(config["out"])
    grid_cfg = _grid_from(config)
    camera, illuminants, gains_spec = _system_from(config, config_dir)
    grid = camera.grid
    if grid_cfg != grid and "grid" in config:
        raise CliError("config", "config grid does not match the system grid")
    patches = _patches_from(config, grid, config_dir)
    snr_db = config.get("snr_db")
    seed = int(config.get("seed", 0))

    outputs = []
    for idx, patch in enumerate(patches):
        if gains_spec == "auto_max_one":
            gains = auto_gain(patch, camera, illuminants)
        else:
            gains = gains_spec if isinstance(gains_spec, GainMatrix) else GainMatrix(np.asarray(gains_spec, dtype=float))
        m = simulate(patch, camera, illuminants, gains)
        if snr_db is not None and not math.isinf(float(snr_db)):
            m = add_noise(m, float(snr_db), seed=seed * 100003 + idx)
        rel = f"measurements/patch_{idx:03d}.json"
        atomic_write_text(out_dir / rel, canonical_json(measurement_to_dict(m)))
        outputs.append(rel)
        rel_truth = f"truth/patch_{idx:03d}_reflectance.csv"
        write_spectra_csv(out_dir / rel_truth, grid.wavelengths, patch.reflectance.values)
        outputs.append(rel_truth)
        rel_don = f"truth/patch_{idx:03d}_donaldson.csv"
        write_donaldson_csv(out_dir / rel_don, patch.donaldson)
        outputs.append(rel_don)

    _write_manifest(out_dir, "simulate", config, outputs)
    _write_timing(out_dir, started)
    print(f"simulate: wrote {len(patches)} measurements to {out_dir}")
    return 0


def cmd_estimate(args) -> int:
    started = time.time()
    config = _merge_overrides(_load_config(args.config), args)
    config_dir = Path(args.config).parent if args.config else Path.cwd()
    out_dir = Path(config["out"])
    model = config.get("model", "multi")
    if model not in ("multi", "single", "cim"):
        raise CliError("config", f"unknown model selector {model!r} (expected multi, single or cim)")
    camera, illuminants, _ = _system_from(config, config_dir)
    grid = camera.grid
    bases = _bases_from(config, grid, config_dir)
    tuning = _tuning_from(config, model)

    measurements_dir = Path(args.measurements or config.get("measurements", out_dir / "measurements"))
    paths = sorted(measurements_dir.glob("*.json"))
    if not paths:
        raise CliError("input", f"no measurement files found in {measurements_dir}")
    grids = []
    for p in paths:
        with open(p, encoding="utf-8") as handle:
            grids.append(measurement_from_dict(json.load(handle), camera, illuminants))

    def run(m: MeasurementGrid):
        if model == "multi":
            return estimate_multi(m, bases, tuning)
        if model == "single":
            return estimate_single(m, bases, tuning)
        return estimate_cim(m, bases, tuning)

    estimates = pool_map(run, grids)

    outputs = []
    for path, est in zip(paths, estimates):
        stem = path.stem
        rel = f"estimates/{stem}.json"
        atomic_write_text(out_dir / rel, canonical_json(estimate_to_dict(est)))
        outputs.append(rel)
        rel_refl = f"spectra/{stem}_reflectance.csv"
        write_spectra_csv(out_dir / rel_refl, grid.wavelengths, est.reflectance.values)
        outputs.append(rel_refl)
        if model == "multi":
            rel_don = f"spectra/{stem}_donaldson.csv"
            write_donaldson_csv(out_dir / rel_don, est.donaldson)
            outputs.append(rel_don)
        if model == "single":
            rel_sp = f"spectra/{stem}_fluorophore.csv"
            write_spectra_csv(
                out_dir / rel_sp,
                grid.wavelengths,
                np.column_stack([est.excitation.values, est.emission.values]),
                names=["excitation", "emission"],
            )
            outputs.append(rel_sp)
            rel_don = f"spectra/{stem}_donaldson.csv"
            write_donaldson_csv(out_dir / rel_don, est.donaldson)
            outputs.append(rel_don)
        if model == "cim":
            rel_sp = f"spectra/{stem}_emission.csv"
            write_spectra_csv(out_dir / rel_sp, grid.wavelengths, est.emission.values)
            outputs.append(rel_sp)
            rel_p = f"spectra/{stem}_intensities.csv"
            names = [f"illuminant_{q + 1}" for q in range(est.p.size)]
            lines = [",".join(names), ",".join(repr(float(v)) for v in est.p)]
            atomic_write_text(out_dir / rel_p, "\n".join(lines) + "\n")
            outputs.append(rel_p)

    _write_manifest(out_dir, "estimate", config, outputs)
    _write_timing(out_dir, started)
    n_conv = sum(1 for e in estimates if e.converged)
    print(f"estimate[{model}]: {len(estimates)} patches ({n_conv} converged) -> {out_dir}")
    return 0


_SWEEPS = {"bases", "channels", "noise", "convergence"}


def cmd_sweep(args) -> int:
    started = time.time()
    config = _merge_overrides(_load_config(args.config), args)
    out_dir = Path(config["out"])
    name = args.name
    if name not in _SWEEPS:
        raise CliError("usage", f"unknown sweep {name!r} (expected one of {sorted(_SWEEPS)})")
    params = dict(config.get("sweep", {}))
    params.pop("name", None)
    seed = int(config.get("seed", 0))

    if args.smoke:
        grid = WavelengthGrid(400.0, 8.0, 32)
        smoke = {
            "bases": dict(n_x_values=[4, 8], n_m_values=[4, 8], n_patches=4),
            "channels": dict(n_filter_values=[5, 16], n_illuminant_values=[5, 16], n_patches=4),
            "noise": dict(snr_values_db=[0.0, 15.0, 30.0], instances_per_level=3, n_patches=4),
            "convergence": dict(iteration_checkpoints=[5, 20, 80], n_patches=4),
        }
        params = {**smoke[name], **params, "grid": grid}
    else:
        params.setdefault("grid", _grid_from(config))
        defaults = {
            "bases": dict(n_x_values=[4, 8, 12, 16], n_m_values=[4, 8, 12, 16]),
            "channels": dict(n_filter_values=[5, 10, 20], n_illuminant_values=[5, 10, 20]),
            "noise": dict(snr_values_db=[0.0, 10.0, 20.0, 30.0]),
            "convergence": dict(iteration_checkpoints=[10, 50, 100, 200, 500]),
        }
        params = {**defaults[name], **params}

    fn = {"bases": sweep_bases, "channels": sweep_channels, "noise": sweep_noise, "convergence": sweep_convergence}[name]
    result = fn(**params, seed=seed)

    header = list(result.axis_names) + ["mean_rmse", "std_err"]
    lines = [",".join(header)]
    for row in result.rows():
        lines.append(",".join(repr(float(v)) for v in row))
    rel = f"sweeps/{name}.csv"
    atomic_write_text(out_dir / rel, "\n".join(lines) + "\n")
    cfg_rel = f"sweeps/{name}_config.json"
    atomic_write_text(out_dir / cfg_rel, canonical_json(result.config))

    _write_manifest(out_dir, f"sweep:{name}", config, [rel, cfg_rel])
    _write_timing(out_dir, started)
    print(f"sweep[{name}]: {len(result.rows())} grid points -> {out_dir / rel}")
    return 0


def cmd_relight(args) -> int:
    started = time.time()
    config = _merge_overrides(_load_config(args.config), args)
    config_dir = Path(args.config).parent if args.config else Path.cwd()
    out_dir = Path(config["out"])

    from .fileio import read_donaldson_csv

    reflectance_path = Path(args.reflectance)
    donaldson_path = Path(args.donaldson)
    donaldson = read_donaldson_csv(donaldson_path)
    grid = donaldson.grid
    reflectance = load_spectrum(reflectance_path, grid, role="reflectance")
    patch = SurfacePatch(reflectance=reflectance, donaldson=donaldson)
    illuminant = load_spectrum(Path(args.illuminant), grid, role="illuminant")

    radiance = relight(patch, illuminant)
    rel = "relight/radiance.csv"
    write_spectra_csv(out_dir / rel, grid.wavelengths, radiance.values)
    outputs = [rel]

    if args.camera is not None:
        camera, _, _ = load_system(config_dir / args.camera)
        rgb = render_camera(radiance, camera, gain=float(args.gain))
        rel_rgb = "relight/rgb.json"
        atomic_write_text(out_dir / rel_rgb, canonical_json({"rgb": rgb.tolist()}))
        outputs.append(rel_rgb)

    _write_manifest(out_dir, "relight", config, outputs)
    _write_timing(out_dir, started)
    print(f"relight: radiance ({len(outputs)} files) -> {out_dir}")
    return 0


def cmd_basis(args) -> int:
    started = time.time()
    config = _merge_overrides(_load_config(args.config), args)
    out_dir = Path(config["out"])
    family = args.what
    if family not in ("reflectance", "excitation", "emission"):
        raise CliError("usage", f"unknown basis family {family!r}")

    wavelengths, values, _ = read_spectra_csv(Path(args.samples))
    grid = WavelengthGrid(
        start=float(wavelengths[0]),
        step=float(np.diff(wavelengths).mean()),
        count=wavelengths.size,
    )
    samples = [Spectrum(grid=grid, values=values[:, k], role="generic") for k in range(values.shape[1])]
    basis = derive_basis(samples, args.k, family=family)
    rel = f"bases/{family}.csv"
    write_basis_csv(out_dir / rel, basis)
    _write_manifest(out_dir, "basis", config, [rel])
    _write_timing(out_dir, started)
    print(f"basis[{family}]: k={args.k} -> {out_dir / rel}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluorsep",
        description="Joint reflectance and fluorescence estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="root random seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")

    p_sim = sub.add_parser("simulate", help="synthesize measurements for surface patches")
    common(p_sim)
    p_sim.set_defaults(fn=cmd_simulate)

    p_est = sub.add_parser("estimate", help="run an estimation model on measurements")
    common(p_est)
    p_est.add_argument("--model", choices=["multi", "single", "cim"], help="estimation model")
    p_est.add_argument("--measurements", help="directory of measurement JSON files")
    p_est.add_argument("--alpha", type=float, help="reflectance smoothness weight")
    p_est.add_argument("--beta", type=float, help="fluorescence smoothness weight")
    p_est.add_argument("--eta", type=float, help="nuclear norm weight (multi only)")
    p_est.set_defaults(fn=cmd_estimate)

    p_sweep = sub.add_parser("sweep", help="run a simulation study")
    common(p_sweep)
    p_sweep.add_argument("--name", required=True, help="bases | channels | noise | convergence")
    p_sweep.add_argument("--smoke", action="store_true", help="small fast configuration")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_rel = sub.add_parser("relight", help="predict radiance under a novel illuminant")
    common(p_rel)
    p_rel.add_argument("--reflectance", required=True, help="estimated reflectance CSV")
    p_rel.add_argument("--donaldson", required=True, help="estimated Donaldson CSV")
    p_rel.add_argument("--illuminant", required=True, help="novel illuminant CSV")
    p_rel.add_argument("--camera", help="3-filter camera system JSON for RGB rendering")
    p_rel.add_argument("--gain", default=1.0, help="render gain")
    p_rel.set_defaults(fn=cmd_relight)

    p_basis = sub.add_parser("basis", help="derive a linear basis from sample spectra")
    common(p_basis)
    p_basis.add_argument("--what", required=True, help="reflectance | excitation | emission")
    p_basis.add_argument("--samples", required=True, help="multi-column spectral CSV")
    p_basis.add_argument("-k", type=int, required=True, help="number of basis functions")
    p_basis.set_defaults(fn=cmd_basis)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        payload = {"error": {"type": exc.kind, "message": str(exc)}}
        print(json.dumps(payload), file=sys.stderr)
        return 2
    except ParseError as exc:
        payload = {
            "error": {
                "type": "parse",
                "message": str(exc),
                "path": exc.path,
                "line": exc.line,
                "column": exc.column,
            }
        }
        print(json.dumps(payload), file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
