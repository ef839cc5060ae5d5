"""Single-fluorophore estimation by biconvex alternating quadratic programs.

With exactly one fluorophore the Donaldson matrix is the masked outer
product of an emission and an excitation spectrum, so the inverse problem

    ||M - G o C^T (diag(Br wr) + T o (em ex^T)) L||_F^2
      + beta (||grad ex||^2 + ||grad em||^2) + alpha ||grad(Br wr)||^2
    subject to 0 <= Br wr <= 1,  ex >= 0,  em >= 0

is quadratic in (wr, wm) with the excitation fixed and in (wr, wx) with the
emission fixed. Alternating those two QPs decreases the objective at every
step; a safeguard rejects any step the inner solver fails to improve, so the
recorded history is strictly non-increasing.

The recovered pair is only determined up to a reciprocal scale; estimates
are reported with the emission peak at one and the whole fluorescence
intensity carried by the excitation spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    BasisSet,
    DonaldsonMatrix,
    FloatArray,
    ROLE_BOUND_TOL,
    Spectrum,
    stokes_mask,
)
from .forward import MeasurementGrid
from .multi import _ForwardOperator, difference_penalty, project_box, roughness
from .qp import _qp_admm, solve_qp

# fitted fluorescence below this fraction of the measurement norm is treated
# as "no fluorophore present" instead of normalizing a vanishing emission
NEGLIGIBLE_FLUORESCENCE = 1e-8


@dataclass(frozen=True)
class SingleTuning:
    """Penalty weights and iteration controls for the biconvex solver."""

    alpha: float = 0.01
    beta: float = 0.1
    max_outer_iterations: int = 200
    objective_tol: float = 1e-6
    qp_tolerance: float = 1e-8
    qp_max_iterations: int = 50000

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.objective_tol <= 0 or self.qp_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class SingleEstimate:
    """Single-fluorophore solver output.

    ``normalization`` is the factor the emission was divided by (and the
    excitation multiplied by) to put the emission peak at one.
    """

    reflectance_weights: FloatArray
    excitation_weights: FloatArray
    emission_weights: FloatArray
    reflectance: Spectrum
    excitation: Spectrum
    emission: Spectrum
    donaldson: DonaldsonMatrix
    bases: BasisSet
    history: FloatArray
    outer_iterations: int
    converged: bool
    normalization: float
    fluorescence_negligible: bool


def _as_role(grid, values: FloatArray, role: str) -> Spectrum:
    try:
        return Spectrum(grid=grid, values=values, role=role)
    except ValueError:
        return Spectrum(grid=grid, values=values, role="generic")


def _reflectance_fit(op: _ForwardOperator, m_vec: FloatArray, alpha: float, smooth_r, tol, iters):
    a_r = op.design_reflectance
    hess = 2.0 * (a_r.T @ a_r + alpha * smooth_r)
    lin = -2.0 * (a_r.T @ m_vec)
    d = op.grid.count
    return solve_qp(
        hess,
        lin,
        op.br,
        np.zeros(d),
        np.ones(d),
        tolerance=tol,
        max_iterations=iters,
    )


def _initial_emission(op: _ForwardOperator, m_vec: FloatArray, wr: FloatArray) -> FloatArray:
    # mean emission profile of the fluorescence left over by the
    # reflectance-only fit, pulled back through the system adjoint
    residual = m_vec - op.design_reflectance @ wr
    back = op.mask * op.measure_adjoint(residual)
    profile = back.mean(axis=1)
    wm = op.bm.T @ profile
    em = op.bm @ wm
    peak = float(em.max())
    if peak <= 0:
        wm = op.bm.T @ np.ones(op.grid.count)
        peak = float((op.bm @ wm).max())
    return wm / peak


def estimate_single(
    m: MeasurementGrid, bases: BasisSet, tuning: SingleTuning | None = None
) -> SingleEstimate:
    """Estimate reflectance plus one fluorophore's excitation and emission spectra.

    Alternates two quadratic programs: (reflectance, emission) with the
    excitation held fixed, then (reflectance, excitation) with the emission
    held fixed, until the objective stops improving.

    Returns
    -------
    SingleEstimate
        Weights and spectra with the emission peak normalized to one; the
        per-outer-iteration objective history is strictly non-increasing.
    """
    tuning = tuning or SingleTuning()
    if not np.all(np.isfinite(m.values)):
        raise ValueError("measurement contains non-finite pixel values")

    op = _ForwardOperator(m, bases, fluorophore_columns=False)
    d = op.grid.count
    grad = difference_penalty(d)
    gram = grad.T @ grad
    smooth_r = op.br.T @ gram @ op.br
    smooth_x = op.bx.T @ gram @ op.bx
    smooth_m = op.bm.T @ gram @ op.bm
    m_vec = m.values.ravel()
    qp_kw = dict(tolerance=tuning.qp_tolerance, max_iterations=tuning.qp_max_iterations)

    wr = _reflectance_fit(op, m_vec, tuning.alpha, smooth_r, tuning.qp_tolerance, tuning.qp_max_iterations)
    wm = _initial_emission(op, m_vec, wr)
    # small flat excitation seed; the first QP rescales the emission against it
    wx = 0.01 * (op.bx.T @ np.ones(d))

    def objective(wr_, wx_, wm_) -> float:
        ex = op.bx @ wx_
        em = op.bm @ wm_
        model = op.design_reflectance @ wr_ + op.measure(op.mask * np.outer(em, ex))
        resid = model - m_vec
        return (
            float(resid @ resid)
            + tuning.alpha * roughness(op.br @ wr_)
            + tuning.beta * (roughness(ex) + roughness(em))
        )

    obj = objective(wr, wx, wm)
    history = [obj]
    zeros_d = np.zeros(d)
    ones_d = np.ones(d)
    inf_d = np.full(d, np.inf)
    converged = False
    outer = 0
    state_m = (None, None)
    state_x = (None, None)

    con_m = np.zeros((2 * d, op.n_r + op.n_e))
    con_m[:d, : op.n_r] = op.br
    con_m[d:, op.n_r :] = op.bm
    con_x = np.zeros((2 * d, op.n_r + op.n_x))
    con_x[:d, : op.n_r] = op.br
    con_x[d:, op.n_r :] = op.bx
    box_lo = np.concatenate([zeros_d, zeros_d])
    box_hi = np.concatenate([ones_d, inf_d])

    for outer in range(1, tuning.max_outer_iterations + 1):
        prev_obj = obj

        # QP over (wr, wm) with the excitation fixed
        ex = op.bx @ wx
        cols_m = op.emission_columns(ex)
        a1 = np.hstack([op.design_reflectance, cols_m])
        hess = 2.0 * (a1.T @ a1)
        hess[: op.n_r, : op.n_r] += 2.0 * tuning.alpha * smooth_r
        hess[op.n_r :, op.n_r :] += 2.0 * tuning.beta * smooth_m
        lin = -2.0 * (a1.T @ m_vec)
        sol, y_m, z_m = _qp_admm(
            hess, lin, con_m, box_lo, box_hi,
            x0=np.concatenate([wr, wm]), y0=state_m[0], z0=state_m[1], **qp_kw,
        )
        state_m = (y_m, z_m)
        cand = objective(sol[: op.n_r], wx, sol[op.n_r :])
        if cand <= obj:
            wr, wm = sol[: op.n_r], sol[op.n_r :]
            obj = cand

        # QP over (wr, wx) with the emission fixed
        em = op.bm @ wm
        cols_x = op.excitation_columns(em)
        a2 = np.hstack([op.design_reflectance, cols_x])
        hess = 2.0 * (a2.T @ a2)
        hess[: op.n_r, : op.n_r] += 2.0 * tuning.alpha * smooth_r
        hess[op.n_r :, op.n_r :] += 2.0 * tuning.beta * smooth_x
        lin = -2.0 * (a2.T @ m_vec)
        sol, y_x, z_x = _qp_admm(
            hess, lin, con_x, box_lo, box_hi,
            x0=np.concatenate([wr, wx]), y0=state_x[0], z0=state_x[1], **qp_kw,
        )
        state_x = (y_x, z_x)
        cand = objective(sol[: op.n_r], sol[op.n_r :], wm)
        if cand <= obj:
            wr, wx = sol[: op.n_r], sol[op.n_r :]
            obj = cand

        # exact minimization over the reciprocal-scale direction: the data
        # term is invariant, so pick the scale balancing the two roughness
        # penalties instead of letting the alternation creep along the valley
        rough_x = roughness(op.bx @ wx)
        rough_m = roughness(op.bm @ wm)
        if rough_x > 0 and rough_m > 0:
            delta = (rough_m / rough_x) ** 0.25
            cand = objective(wr, wx * delta, wm / delta)
            if cand < obj:
                wx = wx * delta
                wm = wm / delta
                obj = cand

        history.append(obj)
        if prev_obj - obj <= tuning.objective_tol * max(abs(prev_obj), 1e-12):
            converged = True
            break

    return _finalize(op, bases, m_vec, wr, wx, wm, np.asarray(history), outer, converged)


def _finalize(
    op: _ForwardOperator,
    bases: BasisSet,
    m_vec: FloatArray,
    wr: FloatArray,
    wx: FloatArray,
    wm: FloatArray,
    history: FloatArray,
    outer: int,
    converged: bool,
) -> SingleEstimate:
    grid = op.grid
    ex = op.bx @ wx
    em = op.bm @ wm
    surface = op.mask * np.outer(em, ex)
    fluor_energy = float(np.linalg.norm(op.measure(surface)))
    m_norm = float(np.linalg.norm(m_vec))
    negligible = fluor_energy < NEGLIGIBLE_FLUORESCENCE * max(m_norm, 1e-300)
    if negligible:
        wx = np.zeros_like(wx)
        wm = np.zeros_like(wm)
        ex = np.zeros(grid.count)
        em = np.zeros(grid.count)
        surface = np.zeros((grid.count, grid.count))
        scale = 1.0
    else:
        scale = float(em.max())
        wm = wm / scale
        wx = wx * scale
        ex = ex * scale
        em = em / scale

    estimate = SingleEstimate(
        reflectance_weights=wr,
        excitation_weights=wx,
        emission_weights=wm,
        reflectance=_as_role(grid, op.br @ wr, "reflectance"),
        excitation=_as_role(grid, ex, "excitation"),
        emission=_as_role(grid, em, "emission"),
        donaldson=DonaldsonMatrix(grid=grid, entries=np.maximum(surface, -ROLE_BOUND_TOL)),
        bases=bases,
        history=history,
        outer_iterations=outer,
        converged=converged,
        normalization=scale,
        fluorescence_negligible=negligible,
    )
    return estimate


def single_objective(
    m: MeasurementGrid, bases: BasisSet, wr, wx, wm, alpha: float, beta: float
) -> float:
    """Objective of the biconvex problem at the given weights.

    Exposed for invariance checks: the masked outer product, and hence the
    data term, is unchanged under the reciprocal rescaling
    ``(wx, wm) -> (delta wx, wm / delta)``.
    """
    op = _ForwardOperator(m, bases, fluorophore_columns=False)
    ex = op.bx @ np.asarray(wx, dtype=float)
    em = op.bm @ np.asarray(wm, dtype=float)
    model = op.design_reflectance @ np.asarray(wr, dtype=float) + op.measure(
        op.mask * np.outer(em, ex)
    )
    resid = model - m.values.ravel()
    return (
        float(resid @ resid)
        + alpha * roughness(op.br @ np.asarray(wr, dtype=float))
        + beta * (roughness(ex) + roughness(em))
    )


def normalize_scaling(estimate: SingleEstimate) -> SingleEstimate:
    """Rescale so the emission peaks at one, excitation absorbing the factor.

    The masked outer product, and therefore the Donaldson matrix, is
    unchanged. Raises for an identically zero emission.
    """
    em = estimate.emission.values
    peak = float(em.max())
    if peak <= 0:
        raise ValueError("cannot normalize a zero emission spectrum")
    grid = estimate.emission.grid
    return replace(
        estimate,
        emission_weights=estimate.emission_weights / peak,
        excitation_weights=estimate.excitation_weights * peak,
        emission=_as_role(grid, em / peak, "emission"),
        excitation=_as_role(grid, estimate.excitation.values * peak, "excitation"),
        normalization=estimate.normalization * peak,
    )
