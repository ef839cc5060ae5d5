import time

import numpy as np

from fluorsep import (
    DEFAULT_GRID,
    SingleTuning,
    auto_gain,
    bispectral_system,
    estimate_cim,
    estimate_single,
    simulate,
)
from fluorsep.fixtures import default_bases, fixture_patches, fixture_fluorophores


def norm_rmse(a, b):
    a = a / a.max() if a.max() > 0 else a
    b = b / b.max() if b.max() > 0 else b
    return float(np.sqrt(np.mean((a - b) ** 2)))


grid = DEFAULT_GRID
bases = default_bases(grid)
camera, ills = bispectral_system(grid)
patches = fixture_patches(grid)
fluors = fixture_fluorophores(grid)

tuning = SingleTuning(alpha=0.001, beta=0.001)
for idx in [0, 1, 2, 3]:
    p = patches[idx]
    ex_true, em_true = fluors[idx]
    g = auto_gain(p, camera, ills)
    m = simulate(p, camera, ills, g)
    t0 = time.time()
    est = estimate_single(m, bases, tuning)
    t1 = time.time()
    cim = estimate_cim(m, bases, tuning)
    t2 = time.time()
    mono = np.all(np.diff(est.history) <= 1e-10)
    print(
        f"patch %d: single em=%.4f ex=%.4f refl=%.4f don=%.5f outer=%d conv=%s mono=%s t=%.1fs"
        % (
            idx,
            norm_rmse(est.emission.values, em_true.values),
            norm_rmse(est.excitation.values, ex_true.values),
            norm_rmse(est.reflectance.values, p.reflectance.values),
            norm_rmse(est.donaldson.entries, p.donaldson.entries),
            est.outer_iterations,
            est.converged,
            mono,
            t1 - t0,
        )
    )
    mono_c = np.all(np.diff(cim.history) <= 1e-10)
    print(
        f"         cim    em=%.4f refl=%.4f outer=%d conv=%s mono=%s t=%.1fs"
        % (
            norm_rmse(cim.emission.values, em_true.values),
            norm_rmse(cim.reflectance.values, p.reflectance.values),
            cim.outer_iterations,
            cim.converged,
            mono_c,
            t2 - t1,
        )
    )
