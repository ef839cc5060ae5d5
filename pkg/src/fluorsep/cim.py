"""Chromaticity-invariant single-fluorophore estimation.

When a fluorophore's excitation band lies entirely below its emission band,
the emitted spectrum keeps one shape and only its intensity varies with the
illuminant. The model then needs just the emission shape and one intensity
scalar per illuminant:

    ||M - G o C^T (diag(Br wr) L + em p^T)||_F^2
      + beta ||grad em||^2 + alpha ||grad(Br wr)||^2
    subject to 0 <= Br wr <= 1,  em >= 0,  p >= 0.

No excitation spectrum is recovered and no Stokes mask applies. The problem
is biconvex in (wr, wm) against p and solved by the same alternating-QP
scheme as the single-fluorophore estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BasisSet, FloatArray, Spectrum
from .forward import MeasurementGrid
from .multi import _ForwardOperator, difference_penalty, roughness
from .qp import _qp_admm
from .single import (
    NEGLIGIBLE_FLUORESCENCE,
    SingleTuning,
    _as_role,
    _initial_emission,
    _reflectance_fit,
)


@dataclass(frozen=True, eq=False)
class CimEstimate:
    """Chromaticity-invariant solver output.

    ``p`` holds one fluorescence intensity per illuminant; the emission is
    peak-normalized with its scale folded into ``p``.
    """

    reflectance_weights: FloatArray
    emission_weights: FloatArray
    p: FloatArray
    reflectance: Spectrum
    emission: Spectrum
    bases: BasisSet
    history: FloatArray
    outer_iterations: int
    converged: bool
    normalization: float
    fluorescence_negligible: bool


def estimate_cim(
    m: MeasurementGrid, bases: BasisSet, tuning: SingleTuning | None = None
) -> CimEstimate:
    """Estimate reflectance, emission shape and per-illuminant fluorescence scales.

    Alternates a QP over (reflectance, emission) with the intensity vector
    fixed and a QP over (reflectance, intensities) with the emission fixed.
    The objective history is strictly non-increasing.
    """
    tuning = tuning or SingleTuning()
    if not np.all(np.isfinite(m.values)):
        raise ValueError("measurement contains non-finite pixel values")

    op = _ForwardOperator(m, bases, fluorophore_columns=False)
    d = op.grid.count
    i, j = op.shape
    grad = difference_penalty(d)
    gram = grad.T @ grad
    smooth_r = op.br.T @ gram @ op.br
    smooth_m = op.bm.T @ gram @ op.bm
    m_vec = m.values.ravel()
    qp_kw = dict(tolerance=tuning.qp_tolerance, max_iterations=tuning.qp_max_iterations)

    wr = _reflectance_fit(op, m_vec, tuning.alpha, smooth_r, tuning.qp_tolerance, tuning.qp_max_iterations)
    wm = _initial_emission(op, m_vec, wr)
    p = np.full(j, 0.01 * max(float(m.values.max()), 1e-6))

    def fluor_vec(em: FloatArray, p_: FloatArray) -> FloatArray:
        return (op.g * np.outer(op.c.T @ em, p_)).ravel()

    def model_vec(wr_, wm_, p_) -> FloatArray:
        return op.design_reflectance @ wr_ + fluor_vec(op.bm @ wm_, p_)

    def objective(wr_, wm_, p_) -> float:
        em = op.bm @ wm_
        resid = model_vec(wr_, wm_, p_) - m_vec
        return (
            float(resid @ resid)
            + tuning.alpha * roughness(op.br @ wr_)
            + tuning.beta * roughness(em)
        )

    obj = objective(wr, wm, p)
    history = [obj]
    zeros_d = np.zeros(d)
    ones_d = np.ones(d)
    converged = False
    outer = 0
    state_m = (None, None)
    state_p = (None, None)

    con_m = np.zeros((2 * d, op.n_r + op.n_e))
    con_m[:d, : op.n_r] = op.br
    con_m[d:, op.n_r :] = op.bm
    con_p = np.zeros((d + j, op.n_r + j))
    con_p[:d, : op.n_r] = op.br
    con_p[d:, op.n_r :] = np.eye(j)

    for outer in range(1, tuning.max_outer_iterations + 1):
        prev_obj = obj

        # QP over (wr, wm) with intensities fixed
        cols_m = np.empty((i * j, op.n_e))
        for a in range(op.n_e):
            cols_m[:, a] = fluor_vec(op.bm[:, a], p)
        a1 = np.hstack([op.design_reflectance, cols_m])
        hess = 2.0 * (a1.T @ a1)
        hess[: op.n_r, : op.n_r] += 2.0 * tuning.alpha * smooth_r
        hess[op.n_r :, op.n_r :] += 2.0 * tuning.beta * smooth_m
        lin = -2.0 * (a1.T @ m_vec)
        sol, y_m, z_m = _qp_admm(
            hess, lin, con_m,
            np.concatenate([zeros_d, zeros_d]),
            np.concatenate([ones_d, np.full(d, np.inf)]),
            x0=np.concatenate([wr, wm]), y0=state_m[0], z0=state_m[1], **qp_kw,
        )
        state_m = (y_m, z_m)
        cand = objective(sol[: op.n_r], sol[op.n_r :], p)
        if cand <= obj:
            wr, wm = sol[: op.n_r], sol[op.n_r :]
            obj = cand

        # QP over (wr, p) with the emission fixed; the p block is diagonal
        # because each intensity touches only its illuminant's column
        em = op.bm @ wm
        cm = op.g * (op.c.T @ em)[:, None]  # i x j, column q scales p_q
        n2 = op.n_r + j
        hess = np.zeros((n2, n2))
        a_r = op.design_reflectance
        hess[: op.n_r, : op.n_r] = 2.0 * (a_r.T @ a_r + tuning.alpha * smooth_r)
        hess[op.n_r :, op.n_r :] = 2.0 * np.diag(np.sum(cm * cm, axis=0))
        cross = np.empty((op.n_r, j))
        for k in range(op.n_r):
            cross[k] = np.sum(a_r[:, k].reshape(i, j) * cm, axis=0)
        hess[: op.n_r, op.n_r :] = 2.0 * cross
        hess[op.n_r :, : op.n_r] = 2.0 * cross.T
        lin = np.concatenate([-2.0 * (a_r.T @ m_vec), -2.0 * np.sum(cm * m.values, axis=0)])
        sol, y_p, z_p = _qp_admm(
            hess, lin, con_p,
            np.concatenate([zeros_d, np.zeros(j)]),
            np.concatenate([ones_d, np.full(j, np.inf)]),
            x0=np.concatenate([wr, p]), y0=state_p[0], z0=state_p[1], **qp_kw,
        )
        state_p = (y_p, z_p)
        cand = objective(sol[: op.n_r], wm, sol[op.n_r :])
        if cand <= obj:
            wr, p = sol[: op.n_r], sol[op.n_r :]
            obj = cand

        history.append(obj)
        if prev_obj - obj <= tuning.objective_tol * max(abs(prev_obj), 1e-12):
            converged = True
            break
        # the objective keeps creeping along the scale ray (em down, p up)
        # without changing the fit; stop once the fitted model is stationary
        model = model_vec(wr, wm, p)
        if outer > 1:
            delta = float(np.linalg.norm(model - prev_model))
            if delta <= tuning.objective_tol * max(float(np.linalg.norm(prev_model)), 1e-12):
                converged = True
                break
        prev_model = model

    grid = op.grid
    em = op.bm @ wm
    fluor_energy = float(np.linalg.norm(fluor_vec(em, p)))
    negligible = fluor_energy < NEGLIGIBLE_FLUORESCENCE * max(float(np.linalg.norm(m_vec)), 1e-300)
    if negligible:
        wm = np.zeros_like(wm)
        p = np.zeros_like(p)
        em = np.zeros(d)
        scale = 1.0
    else:
        scale = float(em.max())
        wm = wm / scale
        em = em / scale
        p = p * scale

    return CimEstimate(
        reflectance_weights=wr,
        emission_weights=wm,
        p=p,
        reflectance=_as_role(grid, op.br @ wr, "reflectance"),
        emission=_as_role(grid, em, "emission"),
        bases=bases,
        history=np.asarray(history),
        outer_iterations=outer,
        converged=converged,
        normalization=scale,
        fluorescence_negligible=negligible,
    )
