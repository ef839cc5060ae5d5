"""Accuracy metrics, bootstrap confidence intervals and simulation studies.

RMSE follows two conventions: "absolute" compares raw values, "normalized"
divides estimate and truth by their own maxima first, which puts reflectance
errors (values near 0.5) and Donaldson errors (entries near 1e-2) on
comparable scales.

The four sweep drivers rerun the estimators over a grid of system or solver
settings on the synthetic patch set: basis counts, channel counts, noise
levels and iteration budgets. Each returns a SweepResult whose mean/standard
error surfaces reproduce the structure of the corresponding simulation
study.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cim import estimate_cim
from .core import BasisSet, DEFAULT_GRID, Spectrum, WavelengthGrid
from .fixtures import default_bases, fixture_patches
from .forward import MeasurementGrid, add_noise, auto_gain, bispectral_system, make_rect_system, simulate
from .multi import MultiTuning, estimate_multi
from .single import SingleTuning, estimate_single
from .util import pool_map, rng_stream


def rmse(estimate, truth, normalized: bool = False) -> float:
    """Root-mean-square difference, optionally after per-argument max scaling.

    With ``normalized=True`` each argument is divided by its own maximum
    before comparing, so a uniform rescaling of either side drops out.
    """
    a = np.asarray(estimate, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if normalized:
        b_max = float(np.abs(b).max())
        if b_max == 0:
            raise ValueError("cannot normalize against an all-zero truth")
        a_max = float(np.abs(a).max())
        a = a / a_max if a_max > 0 else a
        b = b / b_max
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass(frozen=True)
class RmseReport:
    """Mean and spread of RMSE over a patch set for one quantity."""

    quantity: str
    absolute: float
    absolute_std: float
    normalized: float
    normalized_std: float
    count: int


def summarize_rmse(pairs: Sequence[tuple[np.ndarray, np.ndarray]], quantity: str) -> RmseReport:
    """RmseReport over (estimate, truth) pairs for one quantity tag."""
    if len(pairs) == 0:
        raise ValueError("need at least one estimate/truth pair")
    absolute = [rmse(a, b, normalized=False) for a, b in pairs]
    normalized = [rmse(a, b, normalized=True) for a, b in pairs]
    return RmseReport(
        quantity=quantity,
        absolute=float(np.mean(absolute)),
        absolute_std=float(np.std(absolute)),
        normalized=float(np.mean(normalized)),
        normalized_std=float(np.std(normalized)),
        count=len(pairs),
    )


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Per-wavelength percentile envelope of a resampled estimate."""

    lower: Spectrum
    upper: Spectrum
    replicates: int


def bootstrap_ci(
    pixel_samples: Sequence[MeasurementGrid],
    solver: Callable[[MeasurementGrid], Spectrum],
    replicates: int = 100,
    seed: int = 0,
) -> BootstrapResult:
    """95% confidence envelope of a spectral estimate by resampling pixels.

    Each replicate draws pixels from the sample list with replacement,
    averages them into one measurement and runs the solver; the envelope is
    the 2.5th and 97.5th percentile of the estimates at every wavelength.
    Deterministic for a fixed seed.

    Parameters
    ----------
    pixel_samples : measurement grids of individual pixels from one patch,
        all captured with the same system.
    solver : maps an averaged MeasurementGrid to the Spectrum of interest.
    replicates : number of bootstrap resamples.
    seed : root seed for the resampling streams.
    """
    if len(pixel_samples) == 0:
        raise ValueError("need at least one pixel sample")
    if replicates < 2:
        raise ValueError("need at least two replicates")
    reference = pixel_samples[0]
    stack = np.stack([m.values for m in pixel_samples])

    def one(r: int) -> np.ndarray:
        rng = rng_stream(seed, "bootstrap", r)
        idx = rng.integers(0, len(pixel_samples), size=len(pixel_samples))
        mean_values = stack[idx].mean(axis=0)
        return solver(reference.with_values(mean_values)).values

    estimates = np.stack(pool_map(one, list(range(replicates))))
    lower, upper = np.percentile(estimates, [2.5, 97.5], axis=0)
    grid = reference.grid
    return BootstrapResult(
        lower=Spectrum(grid=grid, values=lower, role="generic"),
        upper=Spectrum(grid=grid, values=upper, role="generic"),
        replicates=replicates,
    )


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Mean RMSE surface with standard errors over a sweep grid."""

    axis_names: tuple[str, ...]
    axis_values: tuple[tuple[float, ...], ...]
    mean_rmse: np.ndarray
    std_err: np.ndarray
    config: dict = field(default_factory=dict)

    def rows(self):
        """Long-form (axis values..., mean, std_err) rows for CSV export."""
        out = []
        if len(self.axis_names) == 1:
            for i, v in enumerate(self.axis_values[0]):
                out.append((v, self.mean_rmse[i], self.std_err[i]))
        else:
            for i, v1 in enumerate(self.axis_values[0]):
                for j, v2 in enumerate(self.axis_values[1]):
                    out.append((v1, v2, self.mean_rmse[i, j], self.std_err[i, j]))
        return out


def _donaldson_errors(patches, measurements, bases, solver, tuning) -> list[float]:
    errors = []
    for patch, m in zip(patches, measurements):
        if solver == "multi":
            est = estimate_multi(m, bases, tuning)
        else:
            est = estimate_single(m, bases, tuning)
        errors.append(rmse(est.donaldson.entries, patch.donaldson.entries, normalized=True))
    return errors


def _tuning_for(solver: str, value: float, max_iterations: int | None = None):
    if solver == "multi":
        kw = dict(alpha=value, beta=value, eta=value)
        if max_iterations is not None:
            kw["max_iterations"] = max_iterations
        return MultiTuning(**kw)
    if solver == "single":
        kw = dict(alpha=value, beta=value)
        if max_iterations is not None:
            kw["max_outer_iterations"] = max_iterations
        return SingleTuning(**kw)
    raise ValueError(f"unknown solver {solver!r}")


def sweep_bases(
    n_x_values: Sequence[int],
    n_m_values: Sequence[int],
    grid: WavelengthGrid = DEFAULT_GRID,
    n_patches: int = 24,
    solver: str = "multi",
    penalty: float = 0.001,
    seed: int = 0,
) -> SweepResult:
    """Donaldson estimation error versus excitation/emission basis counts.

    Runs the bispectral protocol: identity camera and illuminants, gain
    scaled to a peak pixel value of one, noise free.
    """
    if len(n_x_values) == 0 or len(n_m_values) == 0:
        raise ValueError("axis value lists must be nonempty")
    camera, illuminants = bispectral_system(grid)
    patches = fixture_patches(grid, n_patches)
    measurements = [simulate(p, camera, illuminants, auto_gain(p, camera, illuminants)) for p in patches]
    tuning = _tuning_for(solver, penalty)

    def run_point(point):
        n_x, n_m = point
        bases = default_bases(grid, n_excitation=n_x, n_emission=n_m)
        return _donaldson_errors(patches, measurements, bases, solver, tuning)

    points = [(nx, nm) for nx in n_x_values for nm in n_m_values]
    results = pool_map(run_point, points)
    mean = np.array([np.mean(r) for r in results]).reshape(len(n_x_values), len(n_m_values))
    err = np.array([np.std(r) / np.sqrt(len(r)) for r in results]).reshape(mean.shape)
    return SweepResult(
        axis_names=("n_excitation_bases", "n_emission_bases"),
        axis_values=(tuple(map(float, n_x_values)), tuple(map(float, n_m_values))),
        mean_rmse=mean,
        std_err=err,
        config=dict(kind="bases", solver=solver, penalty=penalty, d=grid.count, n_patches=n_patches, seed=seed),
    )


def sweep_channels(
    n_filter_values: Sequence[int],
    n_illuminant_values: Sequence[int],
    grid: WavelengthGrid = DEFAULT_GRID,
    n_patches: int = 24,
    n_bases: int = 12,
    solver: str = "multi",
    penalty: float = 0.001,
    seed: int = 0,
) -> SweepResult:
    """Donaldson estimation error versus rectangular filter/illuminant counts."""
    if len(n_filter_values) == 0 or len(n_illuminant_values) == 0:
        raise ValueError("axis value lists must be nonempty")
    patches = fixture_patches(grid, n_patches)
    bases = default_bases(grid, n_excitation=n_bases, n_emission=n_bases)
    tuning = _tuning_for(solver, penalty)

    def run_point(point):
        nf, ni = point
        camera, illuminants = make_rect_system(nf, ni, grid)
        measurements = [
            simulate(p, camera, illuminants, auto_gain(p, camera, illuminants)) for p in patches
        ]
        return _donaldson_errors(patches, measurements, bases, solver, tuning)

    points = [(nf, ni) for nf in n_filter_values for ni in n_illuminant_values]
    results = pool_map(run_point, points)
    mean = np.array([np.mean(r) for r in results]).reshape(len(n_filter_values), len(n_illuminant_values))
    err = np.array([np.std(r) / np.sqrt(len(r)) for r in results]).reshape(mean.shape)
    return SweepResult(
        axis_names=("n_filters", "n_illuminants"),
        axis_values=(tuple(map(float, n_filter_values)), tuple(map(float, n_illuminant_values))),
        mean_rmse=mean,
        std_err=err,
        config=dict(kind="channels", solver=solver, penalty=penalty, d=grid.count, n_patches=n_patches, n_bases=n_bases, seed=seed),
    )


def sweep_noise(
    snr_values_db: Sequence[float],
    instances_per_level: int = 10,
    grid: WavelengthGrid = DEFAULT_GRID,
    n_patches: int = 24,
    n_bases: int = 12,
    solver: str = "multi",
    penalty: float = 0.01,
    seed: int = 0,
) -> SweepResult:
    """Donaldson estimation error versus measurement signal-to-noise ratio.

    Each patch is re-estimated under ``instances_per_level`` independent
    noise draws; the standard error is computed over the noise instances per
    patch, then averaged over patches.
    """
    if len(snr_values_db) == 0:
        raise ValueError("need at least one SNR level")
    if instances_per_level < 1:
        raise ValueError("need at least one noise instance per level")
    camera, illuminants = bispectral_system(grid)
    patches = fixture_patches(grid, n_patches)
    measurements = [simulate(p, camera, illuminants, auto_gain(p, camera, illuminants)) for p in patches]
    bases = default_bases(grid, n_excitation=n_bases, n_emission=n_bases)
    tuning = _tuning_for(solver, penalty)

    def run_level(level_idx: int):
        snr = snr_values_db[level_idx]
        per_patch = np.empty((n_patches, instances_per_level))
        for p_idx, (patch, m) in enumerate(zip(patches, measurements)):
            for inst in range(instances_per_level):
                inst_seed = int(rng_stream(seed, "noise", level_idx, p_idx, inst).integers(2**31))
                noisy = add_noise(m, snr, inst_seed)
                if solver == "multi":
                    est = estimate_multi(noisy, bases, tuning)
                else:
                    est = estimate_single(noisy, bases, tuning)
                per_patch[p_idx, inst] = rmse(
                    est.donaldson.entries, patch.donaldson.entries, normalized=True
                )
        mean = float(per_patch.mean())
        std_err = float(np.mean(per_patch.std(axis=1) / np.sqrt(instances_per_level)))
        return mean, std_err

    results = pool_map(run_level, list(range(len(snr_values_db))))
    return SweepResult(
        axis_names=("snr_db",),
        axis_values=(tuple(map(float, snr_values_db)),),
        mean_rmse=np.array([r[0] for r in results]),
        std_err=np.array([r[1] for r in results]),
        config=dict(kind="noise", solver=solver, penalty=penalty, d=grid.count, n_patches=n_patches, instances=instances_per_level, n_bases=n_bases, seed=seed),
    )


def sweep_convergence(
    iteration_checkpoints: Sequence[int],
    grid: WavelengthGrid = DEFAULT_GRID,
    n_patches: int = 24,
    n_bases: int = 12,
    solver: str = "multi",
    penalty: float = 0.01,
    seed: int = 0,
) -> SweepResult:
    """Donaldson estimation error versus the solver iteration budget.

    Reruns the estimator with each iteration cap and residual tolerances
    disabled, so every checkpoint reflects exactly that many iterations of
    the same deterministic trajectory.
    """
    checkpoints = [int(k) for k in iteration_checkpoints]
    if len(checkpoints) == 0 or min(checkpoints) < 1:
        raise ValueError("iteration checkpoints must be positive")
    camera, illuminants = bispectral_system(grid)
    patches = fixture_patches(grid, n_patches)
    measurements = [simulate(p, camera, illuminants, auto_gain(p, camera, illuminants)) for p in patches]
    bases = default_bases(grid, n_excitation=n_bases, n_emission=n_bases)

    def run_point(k: int):
        if solver == "multi":
            tuning = MultiTuning(
                alpha=penalty, beta=penalty, eta=penalty,
                max_iterations=k, primal_tol=1e-300, dual_tol=1e-300,
            )
        else:
            tuning = SingleTuning(
                alpha=penalty, beta=penalty,
                max_outer_iterations=k, objective_tol=1e-300,
            )
        return _donaldson_errors(patches, measurements, bases, solver, tuning)

    results = pool_map(run_point, checkpoints)
    return SweepResult(
        axis_names=("iterations",),
        axis_values=(tuple(map(float, checkpoints)),),
        mean_rmse=np.array([np.mean(r) for r in results]),
        std_err=np.array([np.std(r) / np.sqrt(len(r)) for r in results]),
        config=dict(kind="convergence", solver=solver, penalty=penalty, d=grid.count, n_patches=n_patches, n_bases=n_bases, seed=seed),
    )
