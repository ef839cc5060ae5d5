"""Camera measurement synthesis for reflective-fluorescent surfaces.

Implements the discrete image formation model: a surface described by a
reflectance spectrum plus a Donaldson matrix, observed through ``i`` camera
filters under ``j`` illuminants, produces an i-by-j pixel value matrix

    M = G o C^T (diag(r) + D) L

where C holds the filter transmissivities scaled by the sensor quantum
efficiency, L the illuminant spectra, G the per-channel gains and ``o`` the
elementwise product. All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    DonaldsonMatrix,
    FloatArray,
    Spectrum,
    WavelengthGrid,
    _as_float_array,
)

#: Sentinel for add_noise meaning "no noise at all".
NOISELESS = math.inf


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Sensor quantum efficiency plus a bank of color filter transmissivities."""

    grid: WavelengthGrid
    quantum_efficiency: Spectrum
    filters: tuple[Spectrum, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "filters", tuple(self.filters))
        if self.quantum_efficiency.grid != self.grid:
            raise ValueError("quantum efficiency grid differs from camera grid")
        if self.quantum_efficiency.values.max() > 1.0 + 1e-12:
            raise ValueError("quantum efficiency must not exceed 1")
        if len(self.filters) == 0:
            raise ValueError("camera needs at least one filter")
        for f in self.filters:
            if f.grid != self.grid:
                raise ValueError("filter grid differs from camera grid")

    @property
    def n_filters(self) -> int:
        return len(self.filters)

    @property
    def responsivity(self) -> FloatArray:
        """d-by-i responsivity matrix: filters scaled by the quantum efficiency."""
        qe = self.quantum_efficiency.values
        return np.column_stack([qe * f.values for f in self.filters])


@dataclass(frozen=True, eq=False)
class IlluminantSet:
    """Spectral power distributions of the illuminants (columns of L)."""

    grid: WavelengthGrid
    illuminants: tuple[Spectrum, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "illuminants", tuple(self.illuminants))
        if len(self.illuminants) == 0:
            raise ValueError("need at least one illuminant")
        for l in self.illuminants:
            if l.grid != self.grid:
                raise ValueError("illuminant grid differs from set grid")
            if l.values.min() < 0:
                raise ValueError("illuminant power must be nonnegative")

    @property
    def n_illuminants(self) -> int:
        return len(self.illuminants)

    @property
    def matrix(self) -> FloatArray:
        """d-by-j matrix whose columns are the illuminant spectra."""
        return np.column_stack([l.values for l in self.illuminants])


@dataclass(frozen=True, eq=False)
class GainMatrix:
    """Per filter-illuminant camera gain factors, strictly positive."""

    values: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_float_array(self.values, "gains"))
        if self.values.ndim != 2:
            raise ValueError("gain matrix must be 2-D")
        if self.values.min() <= 0:
            raise ValueError("gains must be strictly positive")

    @classmethod
    def uniform(cls, n_filters: int, n_illuminants: int, gain: float = 1.0) -> "GainMatrix":
        return cls(values=np.full((n_filters, n_illuminants), float(gain)))


@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """A surface point: reflectance spectrum plus Donaldson matrix."""

    reflectance: Spectrum
    donaldson: DonaldsonMatrix

    def __post_init__(self) -> None:
        if self.reflectance.grid != self.donaldson.grid:
            raise ValueError("reflectance and Donaldson grids differ")
        if self.reflectance.role != "reflectance":
            raise ValueError("patch reflectance must carry the reflectance role")

    @property
    def grid(self) -> WavelengthGrid:
        return self.reflectance.grid


@dataclass(frozen=True, eq=False)
class MeasurementGrid:
    """Pixel values for every filter-illuminant pair, with the system that produced them."""

    values: FloatArray
    camera: CameraModel
    illuminants: IlluminantSet
    gains: GainMatrix

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_float_array(self.values, "pixel values"))
        shape = (self.camera.n_filters, self.illuminants.n_illuminants)
        if self.values.shape != shape:
            raise ValueError(f"pixel values must be {shape}, got {self.values.shape}")
        if self.gains.values.shape != shape:
            raise ValueError(f"gain matrix must be {shape}, got {self.gains.values.shape}")
        if self.camera.grid != self.illuminants.grid:
            raise ValueError("camera and illuminant grids differ")

    @property
    def grid(self) -> WavelengthGrid:
        return self.camera.grid

    def with_values(self, values: FloatArray) -> "MeasurementGrid":
        return MeasurementGrid(
            values=values, camera=self.camera, illuminants=self.illuminants, gains=self.gains
        )


def simulate(
    patch: SurfacePatch,
    camera: CameraModel,
    illuminants: IlluminantSet,
    gains: GainMatrix,
) -> MeasurementGrid:
    """Pixel values of a patch observed through every filter-illuminant pair.

    Computes ``M = G o C^T (diag(r) + D) L`` with the patch's Donaldson
    matrix D (already Stokes-masked by construction).
    """
    if patch.grid != camera.grid or camera.grid != illuminants.grid:
        raise ValueError("patch, camera and illuminants must share one grid")
    shape = (camera.n_filters, illuminants.n_illuminants)
    if gains.values.shape != shape:
        raise ValueError(f"gain matrix must be {shape}, got {gains.values.shape}")
    surface = np.diag(patch.reflectance.values) + patch.donaldson.entries
    values = gains.values * (camera.responsivity.T @ surface @ illuminants.matrix)
    return MeasurementGrid(values=values, camera=camera, illuminants=illuminants, gains=gains)


def decompose_radiance(patch: SurfacePatch, illuminant: Spectrum) -> tuple[Spectrum, Spectrum]:
    """Reflected and fluoresced radiance components of a patch under one illuminant.

    Reflected radiance is the elementwise product of illuminant and
    reflectance; fluoresced radiance is the Donaldson matrix applied to the
    illuminant.
    """
    if illuminant.grid != patch.grid:
        raise ValueError("illuminant grid differs from patch grid")
    reflected = illuminant.values * patch.reflectance.values
    fluoresced = patch.donaldson.entries @ illuminant.values
    grid = patch.grid
    return (
        Spectrum(grid=grid, values=reflected, role="generic"),
        Spectrum(grid=grid, values=fluoresced, role="generic"),
    )


def add_noise(m: MeasurementGrid, snr_db: float, seed: int) -> MeasurementGrid:
    """Add zero-mean Gaussian noise at the requested signal-to-noise ratio.

    The noise variance is chosen so that ``10*log10(signal/noise)`` equals
    ``snr_db``, where the signal power is the mean squared pixel value of the
    whole measurement matrix. ``snr_db = math.inf`` returns the input
    unchanged. Deterministic for a fixed seed.
    """
    if math.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    if m.values.size == 0:
        raise ValueError("empty measurement")
    if snr_db == NOISELESS:
        return m
    signal_power = float(np.mean(m.values**2))
    noise_std = math.sqrt(signal_power * 10.0 ** (-snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noisy = m.values + noise_std * rng.standard_normal(m.values.shape)
    return m.with_values(noisy)


def _balanced_edges(d: int, n: int) -> list[int]:
    # n+1 bin edges with widths differing by at most one bin
    return [round(c * d / n) for c in range(n + 1)]


def make_rect_system(
    n_filters: int,
    n_illuminants: int,
    grid: WavelengthGrid,
) -> tuple[CameraModel, IlluminantSet]:
    """Rectangular filter bank and illuminant set with a flat summed response.

    Channels are contiguous non-overlapping passbands covering the grid;
    widths differ by at most one bin so that the per-bin sum over channels is
    exactly one. The camera quantum efficiency is flat at one.
    """
    d = grid.count
    for n in (n_filters, n_illuminants):
        if not 1 <= n <= d:
            raise ValueError(f"channel count {n} must satisfy 1 <= n <= d={d}")

    def rect_bank(n: int, role: str) -> list[Spectrum]:
        edges = _balanced_edges(d, n)
        bank = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            values = np.zeros(d)
            values[lo:hi] = 1.0
            bank.append(Spectrum(grid=grid, values=values, role=role))
        return bank

    qe = Spectrum(grid=grid, values=np.ones(d), role="filter")
    camera = CameraModel(grid=grid, quantum_efficiency=qe, filters=tuple(rect_bank(n_filters, "filter")))
    illuminants = IlluminantSet(grid=grid, illuminants=tuple(rect_bank(n_illuminants, "illuminant")))
    return camera, illuminants


def bispectral_system(grid: WavelengthGrid) -> tuple[CameraModel, IlluminantSet]:
    """Ideal bispectral system: one-bin filters and illuminants (C = L = identity)."""
    return make_rect_system(grid.count, grid.count, grid)


def auto_gain(
    patch: SurfacePatch,
    camera: CameraModel,
    illuminants: IlluminantSet,
) -> GainMatrix:
    """Uniform gain scaling the brightest pixel of the patch to one."""
    ones = GainMatrix.uniform(camera.n_filters, illuminants.n_illuminants)
    raw = simulate(patch, camera, illuminants, ones)
    peak = float(raw.values.max())
    if peak <= 0:
        raise ValueError("patch produces no signal; cannot normalize gain")
    return GainMatrix.uniform(camera.n_filters, illuminants.n_illuminants, 1.0 / peak)
