"""Wavelength grids, sampled spectra, Donaldson matrices and linear basis models.

All spectral quantities live on a shared uniform wavelength grid and are
represented as plain float vectors/matrices. Weight vectors and weight
matrices are ordinary numpy arrays whose dimensions must match the paired
basis. Every type here is immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

# Deviation from orthonormality allowed for basis matrices (double-precision
# SVD residual scale).
ORTHONORMALITY_TOL = 1e-10

# Slack allowed on role bound checks so solver outputs (feasible only up to
# the constraint tolerance) can be wrapped without clipping.
ROLE_BOUND_TOL = 1e-6

SPECTRUM_ROLES = ("generic", "reflectance", "illuminant", "filter", "excitation", "emission")
BASIS_FAMILIES = ("reflectance", "excitation", "emission")


def _as_float_array(values, name: str) -> FloatArray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WavelengthGrid:
    """Uniform wavelength sampling: ``count`` bins from ``start`` nm spaced ``step`` nm."""

    start: float
    step: float
    count: int

    def __post_init__(self) -> None:
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if self.count < 2:
            raise ValueError("grid needs at least two bins")

    @property
    def wavelengths(self) -> FloatArray:
        w = self.start + self.step * np.arange(self.count, dtype=float)
        w.setflags(write=False)
        return w

    @property
    def stop(self) -> float:
        return self.start + self.step * (self.count - 1)

    def __len__(self) -> int:
        return self.count


#: 380 to 1000 nm sampled at 4 nm (156 bins), the default camera range.
DEFAULT_GRID = WavelengthGrid(start=380.0, step=4.0, count=156)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """A spectral function sampled on a wavelength grid.

    ``role`` selects the physical interpretation and its bound checks:
    reflectance values lie in [0, 1]; illuminant, filter, excitation and
    emission values are nonnegative; "generic" is unconstrained.
    """

    grid: WavelengthGrid
    values: FloatArray
    role: str = "generic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_float_array(self.values, "spectrum values"))
        if self.values.ndim != 1:
            raise ValueError("spectrum values must be 1-D")
        if self.values.size != self.grid.count:
            raise ValueError(
                f"spectrum has {self.values.size} values but grid has {self.grid.count} bins"
            )
        if self.role not in SPECTRUM_ROLES:
            raise ValueError(f"unknown spectrum role {self.role!r}")
        lo = float(self.values.min())
        hi = float(self.values.max())
        if self.role == "reflectance" and (lo < -ROLE_BOUND_TOL or hi > 1.0 + ROLE_BOUND_TOL):
            raise ValueError(f"reflectance values must lie in [0, 1], got [{lo:g}, {hi:g}]")
        if self.role in ("illuminant", "filter", "excitation", "emission") and lo < -ROLE_BOUND_TOL:
            raise ValueError(f"{self.role} values must be nonnegative, got minimum {lo:g}")
        if self.role == "filter" and hi > 1.0 + ROLE_BOUND_TOL:
            raise ValueError(f"filter transmissivity must not exceed 1, got maximum {hi:g}")


def resample(spectrum: Spectrum, grid: WavelengthGrid) -> Spectrum:
    """Linearly interpolate a spectrum onto another grid, zero outside its range."""
    if grid == spectrum.grid:
        return spectrum
    values = np.interp(
        grid.wavelengths, spectrum.grid.wavelengths, spectrum.values, left=0.0, right=0.0
    )
    return Spectrum(grid=grid, values=values, role=spectrum.role)


def stokes_mask(d: int) -> FloatArray:
    """d-by-d mask with ones strictly below the diagonal and zeros elsewhere.

    Encodes the Stokes rule: emitted photons have strictly longer wavelength
    than the exciting ones, so only entries with emission index > excitation
    index survive.
    """
    if d < 1:
        raise ValueError("mask size must be at least 1")
    return np.tril(np.ones((d, d)), k=-1)


@dataclass(frozen=True, eq=False)
class DonaldsonMatrix:
    """Bispectral emission matrix: rows index emission wavelength, columns excitation.

    Entries give emitted photons per unit of incident monochromatic light.
    Strict lower-triangularity (Stokes rule) is required exactly; entries may
    dip below zero only within the solver constraint tolerance.
    """

    grid: WavelengthGrid
    entries: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", _as_float_array(self.entries, "Donaldson entries"))
        d = self.grid.count
        if self.entries.shape != (d, d):
            raise ValueError(f"Donaldson matrix must be {d}x{d}, got {self.entries.shape}")
        upper = self.entries[np.triu_indices(d)]
        if upper.size and np.any(upper != 0.0):
            raise ValueError("Donaldson matrix must be strictly lower-triangular")
        lo = float(self.entries.min())
        if lo < -ROLE_BOUND_TOL:
            raise ValueError(f"Donaldson entries must be nonnegative, got minimum {lo:g}")

    @classmethod
    def zero(cls, grid: WavelengthGrid) -> "DonaldsonMatrix":
        return cls(grid=grid, entries=np.zeros((grid.count, grid.count)))


@dataclass(frozen=True, eq=False)
class LinearBasis:
    """Orthonormal basis functions (columns) approximating one spectral family."""

    grid: WavelengthGrid
    functions: FloatArray
    family: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "functions", _as_float_array(self.functions, "basis functions"))
        if self.functions.ndim != 2:
            raise ValueError("basis functions must form a 2-D matrix")
        d, k = self.functions.shape
        if d != self.grid.count:
            raise ValueError(f"basis rows ({d}) must match grid bins ({self.grid.count})")
        if not 1 <= k <= d:
            raise ValueError(f"basis size k={k} must satisfy 1 <= k <= d={d}")
        if self.family not in BASIS_FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        gram = self.functions.T @ self.functions
        if np.abs(gram - np.eye(k)).max() > ORTHONORMALITY_TOL:
            raise ValueError("basis columns must be orthonormal")

    @property
    def size(self) -> int:
        return self.functions.shape[1]


@dataclass(frozen=True, eq=False)
class BasisSet:
    """The three linear models used by the estimators, on one shared grid."""

    reflectance: LinearBasis
    excitation: LinearBasis
    emission: LinearBasis

    def __post_init__(self) -> None:
        if not (self.reflectance.grid == self.excitation.grid == self.emission.grid):
            raise ValueError("all bases must share one wavelength grid")
        for basis, family in (
            (self.reflectance, "reflectance"),
            (self.excitation, "excitation"),
            (self.emission, "emission"),
        ):
            if basis.family != family:
                raise ValueError(f"expected a {family} basis, got {basis.family}")

    @property
    def grid(self) -> WavelengthGrid:
        return self.reflectance.grid


def _sample_matrix(samples: Sequence[Spectrum]) -> FloatArray:
    if len(samples) == 0:
        raise ValueError("need at least one sample spectrum")
    grid = samples[0].grid
    for s in samples[1:]:
        if s.grid != grid:
            raise ValueError("all sample spectra must share one wavelength grid")
    return np.column_stack([s.values for s in samples])


def derive_basis(samples: Sequence[Spectrum], k: int, family: str | None = None) -> LinearBasis:
    """Derive a k-dimensional orthonormal basis from sample spectra.

    Takes the top-k left singular vectors of the raw (not mean-subtracted)
    d-by-n sample matrix. Spectra here are nonnegative and the linear models
    built on these bases carry no mean term, so the raw SVD is used.

    Parameters
    ----------
    samples : sequence of Spectrum
        Training spectra, all on the same grid.
    k : int
        Number of basis functions, ``1 <= k <= min(d, len(samples))``.
    family : str, optional
        One of "reflectance", "excitation", "emission". If omitted, taken
        from the shared role of the samples.

    Returns
    -------
    LinearBasis
    """
    X = _sample_matrix(samples)
    d, n = X.shape
    if not 1 <= k <= min(d, n):
        raise ValueError(f"k={k} out of range for {n} samples of length {d}")
    if family is None:
        roles = {s.role for s in samples}
        if len(roles) == 1 and next(iter(roles)) in BASIS_FAMILIES:
            family = next(iter(roles))
        else:
            raise ValueError("basis family is ambiguous; pass family= explicitly")
    U, _, _ = np.linalg.svd(X, full_matrices=False)
    return LinearBasis(grid=samples[0].grid, functions=U[:, :k], family=family)


def project(basis: LinearBasis, values: FloatArray | Spectrum) -> FloatArray:
    """Weights of the orthogonal projection of a spectrum onto the basis."""
    if isinstance(values, Spectrum):
        if values.grid != basis.grid:
            raise ValueError("spectrum and basis grids differ")
        values = values.values
    return basis.functions.T @ np.asarray(values, dtype=float)


def synthesize(basis: LinearBasis, weights: FloatArray) -> Spectrum:
    """Spectrum produced by the basis functions weighted by ``weights``."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} weights, got shape {w.shape}")
    return Spectrum(grid=basis.grid, values=basis.functions @ w, role="generic")


def variance_explained(basis: LinearBasis, samples: Sequence[Spectrum]) -> float:
    """Fraction of total squared norm of the samples captured by the basis.

    Ratio of the squared norm of the projections to the total squared norm;
    1.0 when the basis spans every sample, 0.0 when orthogonal to all.
    """
    X = _sample_matrix(samples)
    if samples[0].grid != basis.grid:
        raise ValueError("samples and basis grids differ")
    total = float(np.sum(X * X))
    if total == 0.0:
        raise ValueError("samples have zero total energy")
    proj = basis.functions.T @ X
    return float(np.sum(proj * proj) / total)


def donaldson_from_fluorophores(
    fluorophores: Sequence[tuple[Spectrum, Spectrum]],
) -> DonaldsonMatrix:
    """Donaldson matrix of additive fluorophores given as (excitation, emission) pairs.

    Sums the outer products emission times excitation-transposed and applies
    the Stokes mask, zeroing the diagonal and above.
    """
    if len(fluorophores) == 0:
        raise ValueError("need at least one fluorophore")
    grid = fluorophores[0][0].grid
    d = grid.count
    total = np.zeros((d, d))
    for excitation, emission in fluorophores:
        if excitation.grid != grid or emission.grid != grid:
            raise ValueError("all fluorophore spectra must share one wavelength grid")
        if excitation.values.min() < 0 or emission.values.min() < 0:
            raise ValueError("excitation and emission spectra must be nonnegative")
        total += np.outer(emission.values, excitation.values)
    total *= stokes_mask(d)
    return DonaldsonMatrix(grid=grid, entries=total)
