"""Joint reflectance and fluorescence estimation from multiplexed measurements."""

from .core import (
    BasisSet,
    DEFAULT_GRID,
    DonaldsonMatrix,
    LinearBasis,
    Spectrum,
    WavelengthGrid,
    derive_basis,
    donaldson_from_fluorophores,
    project,
    resample,
    stokes_mask,
    synthesize,
    variance_explained,
)
from .forward import (
    CameraModel,
    GainMatrix,
    IlluminantSet,
    MeasurementGrid,
    NOISELESS,
    SurfacePatch,
    add_noise,
    auto_gain,
    bispectral_system,
    decompose_radiance,
    make_rect_system,
    simulate,
)
from .multi import (
    MultiEstimate,
    MultiTuning,
    difference_penalty,
    estimate_multi,
    masked_surface,
    nuclear_norm,
    project_box,
    prox_nuclear,
    truncate_rank,
)
from .qp import QpError, solve_qp
from .single import SingleEstimate, SingleTuning, estimate_single, normalize_scaling
from .cim import CimEstimate, estimate_cim
from .evaluation import (
    BootstrapResult,
    RmseReport,
    SweepResult,
    bootstrap_ci,
    rmse,
    summarize_rmse,
    sweep_bases,
    sweep_channels,
    sweep_convergence,
    sweep_noise,
)
from .relight import relight, render_camera, rgb_rmse_map

__version__ = "0.1.0"
