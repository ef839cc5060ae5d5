"""On-disk formats: spectral CSVs, system JSON, estimate JSON, PPM images.

Spectral CSV: header ``wavelength_nm,value`` (or ``wavelength_nm,v1,v2,...``
for multi-column sets), rows strictly increasing in wavelength, UTF-8 with a
``.`` decimal point. Donaldson matrices use the multi-column form with one
column per excitation bin. All writes are atomic (temp file then rename) and
floats are written with full round-trip precision so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .cim import CimEstimate
from .core import DonaldsonMatrix, LinearBasis, Spectrum, WavelengthGrid, resample
from .forward import CameraModel, GainMatrix, IlluminantSet, MeasurementGrid, bispectral_system, make_rect_system
from .multi import MultiEstimate
from .single import SingleEstimate


class ParseError(ValueError):
    """A file failed to parse; carries path plus 1-based line/column."""

    def __init__(self, path, line: int, column: int, message: str):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{path}:{line}:{column}: {message}")


def _fmt(value: float) -> str:
    return repr(float(value))


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# spectral CSV

def write_spectra_csv(path, wavelengths, values, names=None) -> None:
    """Write one or more spectra sharing a wavelength column."""
    wavelengths = np.asarray(wavelengths, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    k = values.shape[1]
    if names is None:
        names = ["value"] if k == 1 else [f"v{i + 1}" for i in range(k)]
    if len(names) != k:
        raise ValueError(f"{k} value columns but {len(names)} names")
    lines = ["wavelength_nm," + ",".join(names)]
    for row in range(wavelengths.size):
        cells = [_fmt(wavelengths[row])] + [_fmt(v) for v in values[row]]
        lines.append(",".join(cells))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_spectra_csv(path):
    """Read a spectral CSV; returns (wavelengths, values d-by-k, names)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, 0, 0, f"cannot read file: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError(path, 1, 1, "empty file")
    header = lines[0].split(",")
    if header[0].strip() != "wavelength_nm":
        raise ParseError(path, 1, 1, f"expected header 'wavelength_nm', got {header[0]!r}")
    if len(header) < 2:
        raise ParseError(path, 1, 1, "need at least one value column")
    names = [h.strip() for h in header[1:]]
    wavelengths = []
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(
                path, line_no, len(cells), f"expected {len(header)} columns, got {len(cells)}"
            )
        parsed = []
        for col_no, cell in enumerate(cells, start=1):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ParseError(path, line_no, col_no, f"not a number: {cell.strip()!r}") from None
        if wavelengths and parsed[0] <= wavelengths[-1]:
            raise ParseError(path, line_no, 1, "wavelengths must be strictly increasing")
        wavelengths.append(parsed[0])
        rows.append(parsed[1:])
    if not rows:
        raise ParseError(path, 1, 1, "no data rows")
    return np.asarray(wavelengths), np.asarray(rows), names


def load_spectrum(path, grid: WavelengthGrid | None = None, role: str = "generic", column: int = 0) -> Spectrum:
    """Load one column of a spectral CSV, resampling onto ``grid`` if given."""
    wavelengths, values, _ = read_spectra_csv(path)
    if column >= values.shape[1]:
        raise ParseError(path, 1, column + 2, f"file has only {values.shape[1]} value columns")
    diffs = np.diff(wavelengths)
    native = WavelengthGrid(
        start=float(wavelengths[0]),
        step=float(diffs.mean()) if diffs.size else 1.0,
        count=wavelengths.size,
    )
    if diffs.size and (diffs.max() - diffs.min()) > 1e-6 * diffs.mean() and grid is None:
        raise ParseError(path, 1, 1, "non-uniform wavelength spacing needs an explicit target grid")
    spectrum = Spectrum(grid=native, values=values[:, column], role="generic")
    if grid is not None and (native != grid):
        resampled = np.interp(grid.wavelengths, wavelengths, values[:, column], left=0.0, right=0.0)
        spectrum = Spectrum(grid=grid, values=resampled, role="generic")
    return Spectrum(grid=spectrum.grid, values=spectrum.values, role=role)


def write_donaldson_csv(path, donaldson: DonaldsonMatrix) -> None:
    """Donaldson matrix as a spectral CSV: one column per excitation bin."""
    grid = donaldson.grid
    names = [f"x{_fmt(w)}" for w in grid.wavelengths]
    write_spectra_csv(path, grid.wavelengths, donaldson.entries, names)


def read_donaldson_csv(path) -> DonaldsonMatrix:
    wavelengths, values, _ = read_spectra_csv(path)
    grid = WavelengthGrid(
        start=float(wavelengths[0]),
        step=float(np.diff(wavelengths).mean()),
        count=wavelengths.size,
    )
    return DonaldsonMatrix(grid=grid, entries=values)


# ---------------------------------------------------------------------------
# system JSON

def _grid_from_config(cfg) -> WavelengthGrid:
    return WavelengthGrid(start=float(cfg["start_nm"]), step=float(cfg["step_nm"]), count=int(cfg["count"]))


def grid_to_config(grid: WavelengthGrid) -> dict:
    return {"start_nm": grid.start, "step_nm": grid.step, "count": grid.count}


def load_system(path):
    """Load a system description JSON.

    Returns (camera, illuminants, gains) where gains is a GainMatrix or the
    string "auto_max_one". CSV paths are resolved relative to the file. The
    builtin forms ``{"builtin": "bispectral", "grid": {...}}`` and
    ``{"builtin": "rect", "grid": {...}, "n_filters": i, "n_illuminants": j}``
    construct ideal systems without CSV files.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        cfg = json.load(handle)

    if "builtin" in cfg:
        grid = _grid_from_config(cfg["grid"])
        kind = cfg["builtin"]
        if kind == "bispectral":
            camera, illuminants = bispectral_system(grid)
        elif kind == "rect":
            camera, illuminants = make_rect_system(int(cfg["n_filters"]), int(cfg["n_illuminants"]), grid)
        else:
            raise ValueError(f"unknown builtin system {kind!r}")
    else:
        base = path.parent
        grid = _grid_from_config(cfg["grid"]) if "grid" in cfg else None
        qe = load_spectrum(base / cfg["camera"]["qe_csv"], grid, role="filter")
        grid = qe.grid
        filters = tuple(
            load_spectrum(base / f, grid, role="filter") for f in cfg["camera"]["filter_csvs"]
        )
        camera = CameraModel(grid=grid, quantum_efficiency=qe, filters=filters)
        illums = tuple(
            load_spectrum(base / f, grid, role="illuminant") for f in cfg["illuminants"]["csvs"]
        )
        illuminants = IlluminantSet(grid=grid, illuminants=illums)

    gains_cfg = cfg.get("gains", "auto_max_one")
    if gains_cfg == "auto_max_one":
        gains = "auto_max_one"
    else:
        gains = GainMatrix(values=np.asarray(gains_cfg, dtype=float))
    return camera, illuminants, gains


# ---------------------------------------------------------------------------
# measurement JSON

def measurement_to_dict(m: MeasurementGrid, system_ref: str | None = None) -> dict:
    out = {
        "grid": grid_to_config(m.grid),
        "values": m.values.tolist(),
        "gains": m.gains.values.tolist(),
    }
    if system_ref is not None:
        out["system"] = system_ref
    return out


def measurement_from_dict(cfg, camera: CameraModel, illuminants: IlluminantSet) -> MeasurementGrid:
    return MeasurementGrid(
        values=np.asarray(cfg["values"], dtype=float),
        camera=camera,
        illuminants=illuminants,
        gains=GainMatrix(values=np.asarray(cfg["gains"], dtype=float)),
    )


# ---------------------------------------------------------------------------
# estimate JSON

def estimate_to_dict(estimate) -> dict:
    """JSON-ready summary of any solver estimate (weights plus diagnostics)."""
    if isinstance(estimate, MultiEstimate):
        return {
            "model": "multi",
            "reflectance_weights": estimate.reflectance_weights.tolist(),
            "fluorophore_weights": estimate.fluorophore_weights.tolist(),
            "iterations_run": estimate.iterations_run,
            "converged": estimate.converged,
            "history": {
                "objective": estimate.history.objective.tolist(),
                "primal_residual": estimate.history.primal_residual.tolist(),
                "dual_residual": estimate.history.dual_residual.tolist(),
            },
        }
    if isinstance(estimate, SingleEstimate):
        return {
            "model": "single",
            "reflectance_weights": estimate.reflectance_weights.tolist(),
            "excitation_weights": estimate.excitation_weights.tolist(),
            "emission_weights": estimate.emission_weights.tolist(),
            "outer_iterations": estimate.outer_iterations,
            "converged": estimate.converged,
            "normalization": estimate.normalization,
            "fluorescence_negligible": estimate.fluorescence_negligible,
            "history": {"objective": estimate.history.tolist()},
        }
    if isinstance(estimate, CimEstimate):
        return {
            "model": "cim",
            "reflectance_weights": estimate.reflectance_weights.tolist(),
            "emission_weights": estimate.emission_weights.tolist(),
            "p": estimate.p.tolist(),
            "outer_iterations": estimate.outer_iterations,
            "converged": estimate.converged,
            "normalization": estimate.normalization,
            "fluorescence_negligible": estimate.fluorescence_negligible,
            "history": {"objective": estimate.history.tolist()},
        }
    raise TypeError(f"unknown estimate type {type(estimate).__name__}")


# ---------------------------------------------------------------------------
# basis CSV

def write_basis_csv(path, basis: LinearBasis) -> None:
    names = [f"b{i + 1}" for i in range(basis.size)]
    write_spectra_csv(path, basis.grid.wavelengths, basis.functions, names)


def read_basis_csv(path, family: str) -> LinearBasis:
    wavelengths, values, _ = read_spectra_csv(path)
    grid = WavelengthGrid(
        start=float(wavelengths[0]),
        step=float(np.diff(wavelengths).mean()),
        count=wavelengths.size,
    )
    return LinearBasis(grid=grid, functions=values, family=family)


# ---------------------------------------------------------------------------
# PPM images

def write_ppm(path, image) -> None:
    """Binary P6 PPM with max value 255; input values in [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (height, width, 3) image, got {img.shape}")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    h, w, _ = img.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    body = np.round(img * 255.0).astype(np.uint8).tobytes()
    atomic_write_bytes(Path(path), header + body)


def read_ppm(path):
    """Read a binary P6 PPM into a float image in [0, 1]."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6":
        raise ParseError(path, 1, 1, "not a binary P6 PPM file")
    try:
        w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise ParseError(path, 1, 1, "malformed PPM header") from None
    if maxval != 255:
        raise ParseError(path, 1, 1, f"only max value 255 supported, got {maxval}")
    body = parts[4][: w * h * 3]
    if len(body) != w * h * 3:
        raise ParseError(path, 1, 1, "truncated PPM pixel data")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return img.astype(float) / 255.0


def write_image_csv(path, image) -> None:
    """Lossless linear-value export: one row,col,r,g,b line per pixel."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (height, width, 3) image, got {img.shape}")
    lines = ["row,col,r,g,b"]
    for r in range(img.shape[0]):
        for c in range(img.shape[1]):
            px = img[r, c]
            lines.append(f"{r},{c},{_fmt(px[0])},{_fmt(px[1])},{_fmt(px[2])}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
