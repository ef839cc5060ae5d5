import time

import numpy as np

from fluorsep import (
    DEFAULT_GRID,
    GainMatrix,
    MultiTuning,
    auto_gain,
    bispectral_system,
    estimate_multi,
    simulate,
    variance_explained,
)
from fluorsep.fixtures import (
    default_bases,
    fixture_fluorophores,
    fixture_patches,
    fixture_reflectances,
    training_fluorophores,
)

grid = DEFAULT_GRID
bases = default_bases(grid)
train = training_fluorophores(grid)
print("var explained: refl(5) =", variance_explained(bases.reflectance, fixture_reflectances(grid)))
print("var explained: ex(12)  =", variance_explained(bases.excitation, [ex for ex, _ in train]))
print("var explained: em(12)  =", variance_explained(bases.emission, [em for _, em in train]))

# how well do the 24 test fluorophores project onto the bases?
fl = fixture_fluorophores(grid)
ex_err = []
em_err = []
for ex, em in fl:
    pex = bases.excitation.functions @ (bases.excitation.functions.T @ ex.values)
    pem = bases.emission.functions @ (bases.emission.functions.T @ em.values)
    ex_err.append(np.sqrt(np.mean((pex - ex.values) ** 2)) / ex.values.max())
    em_err.append(np.sqrt(np.mean((pem - em.values) ** 2)) / em.values.max())
print("normalized projection RMSE: ex mean/max = %.4g / %.4g" % (np.mean(ex_err), np.max(ex_err)))
print("normalized projection RMSE: em mean/max = %.4g / %.4g" % (np.mean(em_err), np.max(em_err)))

# round trip on a few patches, bispectral
camera, ills = bispectral_system(grid)
patches = fixture_patches(grid)


def norm_rmse(a, b):
    a = a / a.max() if a.max() > 0 else a
    b = b / b.max() if b.max() > 0 else b
    return float(np.sqrt(np.mean((a - b) ** 2)))


tuning = MultiTuning(alpha=0.001, beta=0.001, eta=0.001)
t0 = time.time()
for idx in [0, 1, 2]:
    p = patches[idx]
    g = auto_gain(p, camera, ills)
    m = simulate(p, camera, ills, g)
    t1 = time.time()
    est = estimate_multi(m, bases, tuning)
    dt = time.time() - t1
    d_rmse = norm_rmse(est.donaldson.entries, p.donaldson.entries)
    r_rmse = norm_rmse(est.reflectance.values, p.reflectance.values)
    print(
        f"patch {idx}: iters={est.iterations_run} conv={est.converged} "
        f"donRMSE={d_rmse:.5f} reflRMSE={r_rmse:.5f} time={dt:.2f}s "
        f"obj_final={est.history.objective[-1]:.3e}"
    )
print("total", time.time() - t0)
