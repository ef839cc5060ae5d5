"""Synthetic test patches: smooth reflectances paired with single fluorophores.

The shipped evaluation set has 24 patches. Reflectances are nonnegative
combinations of five fixed smooth templates, so a five-dimensional linear
model represents them exactly. Fluorophores are Gaussian excitation/emission
bumps with the excitation peak well below the emission peak and intensities
scaled so Donaldson entries stay near or below 1e-2. Everything is generated
deterministically from named seed streams and is grid-parametric; the default
grid set is also shipped as CSV data files.
"""

from __future__ import annotations

import numpy as np

from .core import (
    BasisSet,
    DEFAULT_GRID,
    LinearBasis,
    Spectrum,
    WavelengthGrid,
    derive_basis,
    donaldson_from_fluorophores,
)
from .forward import SurfacePatch
from .util import rng_stream

N_PATCHES = 24
N_TRAINING = 60

_FIXTURE_SEED = 20_240_380


def _gaussian(wavelengths: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((wavelengths - center) / width) ** 2)


def reflectance_templates(grid: WavelengthGrid) -> np.ndarray:
    """Five fixed smooth spectral shapes spanning the fixture reflectances."""
    w = grid.wavelengths
    lo, hi = w[0], w[-1]
    span = hi - lo
    ramp = (w - lo) / span
    templates = np.column_stack(
        [
            np.ones_like(w),
            ramp,
            _gaussian(w, lo + 0.25 * span, 0.12 * span),
            _gaussian(w, lo + 0.55 * span, 0.14 * span),
            _gaussian(w, lo + 0.85 * span, 0.16 * span),
        ]
    )
    return templates


def fixture_reflectances(grid: WavelengthGrid = DEFAULT_GRID, n: int = N_PATCHES) -> list[Spectrum]:
    """Smooth reflectances in [0.02, 0.98], exactly five-dimensional by construction."""
    rng = rng_stream(_FIXTURE_SEED, "reflectance")
    templates = reflectance_templates(grid)
    spectra = []
    for _ in range(n):
        coeffs = rng.uniform(0.0, 1.0, size=templates.shape[1])
        raw = templates @ coeffs
        # affinely map into [0.05, 0.95] so the box constraint never clips
        lo, hi = raw.min(), raw.max()
        scale = 0.9 / (hi - lo) if hi > lo else 0.0
        values = 0.05 + (raw - lo) * scale
        spectra.append(Spectrum(grid=grid, values=values, role="reflectance"))
    return spectra


def _fluorophore_params(rng: np.random.Generator, lo: float, hi: float) -> tuple[float, float, float, float]:
    # peaks confined to [400, 980] on the default grid; scaled to other ranges
    span = hi - lo
    em_center = rng.uniform(lo + 0.45 * span, lo + 0.88 * span)
    gap = rng.uniform(0.18 * span, 0.30 * span)
    ex_center = max(em_center - gap, lo + 0.06 * span)
    ex_width = rng.uniform(0.045 * span, 0.075 * span)
    em_width = rng.uniform(0.045 * span, 0.075 * span)
    return ex_center, ex_width, em_center, em_width


def _fluorophore_set(
    grid: WavelengthGrid, n: int, stream: str, intensity_range: tuple[float, float]
) -> list[tuple[Spectrum, Spectrum]]:
    rng = rng_stream(_FIXTURE_SEED, stream)
    w = grid.wavelengths
    lo, hi = w[0], w[-1]
    pairs = []
    for _ in range(n):
        ex_center, ex_width, em_center, em_width = _fluorophore_params(rng, lo, hi)
        intensity = rng.uniform(*intensity_range)
        excitation = Spectrum(
            grid=grid, values=intensity * _gaussian(w, ex_center, ex_width), role="excitation"
        )
        emission = Spectrum(grid=grid, values=_gaussian(w, em_center, em_width), role="emission")
        pairs.append((excitation, emission))
    return pairs


def fixture_fluorophores(
    grid: WavelengthGrid = DEFAULT_GRID, n: int = N_PATCHES
) -> list[tuple[Spectrum, Spectrum]]:
    """(excitation, emission) pairs for the evaluation patches.

    Emission peaks at one; the fluorescence intensity is carried by the
    excitation scale, chosen so Donaldson entries stay around 1e-2.
    """
    return _fluorophore_set(grid, n, "fluorophores", (0.004, 0.012))


def training_fluorophores(
    grid: WavelengthGrid = DEFAULT_GRID, n: int = N_TRAINING
) -> list[tuple[Spectrum, Spectrum]]:
    """Wider fluorophore family used to derive excitation/emission bases."""
    extra = _fluorophore_set(grid, max(n - N_PATCHES, 0), "training", (0.004, 0.012))
    return fixture_fluorophores(grid) + extra


def fixture_patches(grid: WavelengthGrid = DEFAULT_GRID, n: int = N_PATCHES) -> list[SurfacePatch]:
    """The synthetic evaluation set: single-fluorophore patches."""
    reflectances = fixture_reflectances(grid, n)
    fluorophores = fixture_fluorophores(grid, max(n, N_PATCHES))[:n]
    return [
        SurfacePatch(reflectance=r, donaldson=donaldson_from_fluorophores([f]))
        for r, f in zip(reflectances, fluorophores)
    ]


def default_bases(
    grid: WavelengthGrid = DEFAULT_GRID,
    n_reflectance: int = 5,
    n_excitation: int = 12,
    n_emission: int = 12,
) -> BasisSet:
    """Bases derived from the fixture reflectances and the fluorophore training family."""
    refl = derive_basis(fixture_reflectances(grid), n_reflectance, family="reflectance")
    train = training_fluorophores(grid)
    excitation = derive_basis([ex for ex, _ in train], n_excitation, family="excitation")
    emission = derive_basis([em for _, em in train], n_emission, family="emission")
    return BasisSet(reflectance=refl, excitation=excitation, emission=emission)


def data_dir():
    """Directory holding the shipped CSV copies of the fixture dataset."""
    from importlib.resources import files

    return files("fluorsep") / "data"
