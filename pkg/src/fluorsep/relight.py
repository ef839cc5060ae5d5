"""Scene relighting: predicted radiance and camera renders under new lights.

Given estimated surface properties (reflectance plus Donaldson matrix), the
radiance under any illuminant is the reflected component plus the fluoresced
component; rendering that radiance through a calibrated camera model
predicts pixel values under lights never used for estimation.
"""

from __future__ import annotations

import numpy as np

from .core import DonaldsonMatrix, FloatArray, Spectrum
from .forward import CameraModel, SurfacePatch, decompose_radiance


def _as_patch(estimate) -> SurfacePatch:
    if isinstance(estimate, SurfacePatch):
        return estimate
    reflectance = estimate.reflectance
    donaldson = estimate.donaldson
    if not isinstance(reflectance, Spectrum) or not isinstance(donaldson, DonaldsonMatrix):
        raise TypeError("estimate must provide reflectance and donaldson fields")
    if reflectance.role != "reflectance":
        reflectance = Spectrum(
            grid=reflectance.grid,
            values=np.clip(reflectance.values, 0.0, 1.0),
            role="reflectance",
        )
    return SurfacePatch(reflectance=reflectance, donaldson=donaldson)


def relight(estimate, illuminant: Spectrum) -> Spectrum:
    """Total radiance of an estimated surface under a novel illuminant.

    ``estimate`` is anything with reflectance and donaldson fields (a
    SurfacePatch or a solver estimate). Linear in the illuminant.
    """
    patch = _as_patch(estimate)
    reflected, fluoresced = decompose_radiance(patch, illuminant)
    return Spectrum(
        grid=patch.grid, values=reflected.values + fluoresced.values, role="generic"
    )


def render_camera(radiance: Spectrum, rgb_camera: CameraModel, gain: float = 1.0) -> FloatArray:
    """Three pixel values of a radiance spectrum through an RGB camera model."""
    if rgb_camera.n_filters != 3:
        raise ValueError(f"RGB rendering needs a 3-filter camera, got {rgb_camera.n_filters}")
    if radiance.grid != rgb_camera.grid:
        raise ValueError("radiance and camera grids differ")
    return gain * (rgb_camera.responsivity.T @ radiance.values)


def rgb_rmse_map(predicted: FloatArray, captured: FloatArray) -> tuple[FloatArray, float]:
    """Per-pixel RMSE over the three channels, plus its mean over the image.

    Both images are (height, width, 3) arrays with values in [0, 1].
    """
    pred = np.asarray(predicted, dtype=float)
    capt = np.asarray(captured, dtype=float)
    if pred.shape != capt.shape:
        raise ValueError(f"image shapes differ: {pred.shape} vs {capt.shape}")
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise ValueError(f"expected (height, width, 3) images, got {pred.shape}")
    for name, img in (("predicted", pred), ("captured", capt)):
        if img.min() < 0 or img.max() > 1:
            raise ValueError(f"{name} image values must lie in [0, 1]")
    diff = pred - capt
    per_pixel = np.sqrt(np.mean(diff * diff, axis=2))
    return per_pixel, float(per_pixel.mean())
