"""Multi-fluorophore estimation: nuclear-norm relaxed inverse problem via ADMM.

Jointly recovers reflectance weights and a fluorophore weight matrix from one
measurement grid by minimizing

    ||M - G o C^T (diag(Br wr) + T o (Bm W Bx^T)) L||_F^2
      + alpha ||grad(Br wr)||^2
      + beta (row roughness + column roughness of the masked surface)
      + eta ||W||_*
    subject to 0 <= Br wr <= 1 and T o (Bm W Bx^T) >= 0,

where the nuclear norm stands in for a fluorophore-count rank constraint.
The quadratic terms (data plus both roughness penalties) form the smooth
block over (wr, W), solved by cached normal equations; the box constraint,
the nonnegativity constraint and the nuclear penalty each get a consensus
copy with a closed-form prox.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import (
    BasisSet,
    DonaldsonMatrix,
    FloatArray,
    ROLE_BOUND_TOL,
    Spectrum,
    stokes_mask,
)
from .forward import MeasurementGrid


@dataclass(frozen=True)
class MultiTuning:
    """Penalty weights and ADMM controls for the multi-fluorophore solver."""

    alpha: float = 0.001
    beta: float = 0.001
    eta: float = 0.001
    rho: float = 0.1
    max_iterations: int = 2000
    primal_tol: float = 1e-5
    dual_tol: float = 1e-5
    adapt_rho: bool = False

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.eta) < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.primal_tol <= 0 or self.dual_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class ConvergenceHistory:
    """Per-iteration objective and ADMM residual norms."""

    objective: FloatArray
    primal_residual: FloatArray
    dual_residual: FloatArray


@dataclass(frozen=True, eq=False)
class MultiEstimate:
    """Multi-fluorophore solver output."""

    reflectance_weights: FloatArray
    fluorophore_weights: FloatArray
    reflectance: Spectrum
    donaldson: DonaldsonMatrix
    bases: BasisSet
    history: ConvergenceHistory
    iterations_run: int
    converged: bool


def difference_penalty(d: int) -> FloatArray:
    """(d-1)-by-d first-difference operator with rows (..., 1, -1, ...).

    Applied to a vector it returns adjacent-entry differences; its squared
    norm is the roughness penalty used throughout the solvers. The last bin
    is not penalized against an implicit zero.
    """
    if d < 2:
        raise ValueError("difference operator needs d >= 2")
    grad = np.zeros((d - 1, d))
    idx = np.arange(d - 1)
    grad[idx, idx] = 1.0
    grad[idx, idx + 1] = -1.0
    return grad


def project_box(x: FloatArray, lo: float, hi: float) -> FloatArray:
    """Elementwise clamp of ``x`` into [lo, hi]."""
    if lo > hi:
        raise ValueError(f"empty box: lo={lo} > hi={hi}")
    return np.clip(np.asarray(x, dtype=float), lo, hi)


def nuclear_norm(w: FloatArray) -> float:
    """Sum of singular values."""
    return float(np.linalg.svd(np.asarray(w, dtype=float), compute_uv=False).sum())


def prox_nuclear(w: FloatArray, threshold: float) -> FloatArray:
    """Singular-value soft thresholding.

    Exact minimizer of ``(1/2)||X - w||_F^2 + threshold ||X||_*``: the SVD of
    ``w`` with every singular value shrunk by ``threshold`` and floored at
    zero.
    """
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("prox_nuclear input must be finite")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if threshold == 0:
        return w.copy()
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    shrunk = np.maximum(s - threshold, 0.0)
    return (u * shrunk) @ vt


def masked_surface(bases: BasisSet, w: FloatArray) -> FloatArray:
    """Stokes-masked Donaldson surface T o (Bm W Bx^T) for a weight matrix."""
    d = bases.grid.count
    surface = bases.emission.functions @ w @ bases.excitation.functions.T
    return stokes_mask(d) * surface


class _ForwardOperator:
    """Linear measurement model pieces shared by the solvers.

    Holds the system matrices, the reflectance design block and, on demand,
    the full fluorophore design block plus helpers for the rank-one models.
    """

    def __init__(self, m: MeasurementGrid, bases: BasisSet, fluorophore_columns: bool = True):
        if bases.grid != m.grid:
            raise ValueError("bases must live on the measurement grid")
        self.grid = m.grid
        d = self.grid.count
        self.mask = stokes_mask(d)
        self.br = bases.reflectance.functions
        self.bx = bases.excitation.functions
        self.bm = bases.emission.functions
        self.n_r = self.br.shape[1]
        self.n_x = self.bx.shape[1]
        self.n_e = self.bm.shape[1]
        self.n_w = self.n_e * self.n_x

        self.c = m.camera.responsivity
        self.l = m.illuminants.matrix
        self.g = m.gains.values
        i, j = self.g.shape
        self.shape = (i, j)

        # reflectance columns: G o (C^T diag(br_k) L), raveled
        self.design_reflectance = np.empty((i * j, self.n_r))
        for k in range(self.n_r):
            self.design_reflectance[:, k] = (
                self.g * (self.c.T @ (self.br[:, k][:, None] * self.l))
            ).ravel()

        # emission rows C^T (T o bm_a 1^T) and excitation-scaled illuminants,
        # reused by the rank-one column builders
        self._emission_rows = [
            self.c.T @ (self.mask * self.bm[:, a][:, None]) for a in range(self.n_e)
        ]
        self._scaled_l = [self.bx[:, b][:, None] * self.l for b in range(self.n_x)]

        self.design = None
        if fluorophore_columns:
            # fluorophore columns: G o (C^T (T o (bm_a bx_b^T)) L), raveled
            a_f = np.empty((i * j, self.n_w))
            stacked = np.concatenate(self._scaled_l, axis=1)
            for a in range(self.n_e):
                block = self._emission_rows[a] @ stacked  # i x (n_x * j)
                for b in range(self.n_x):
                    a_f[:, a * self.n_x + b] = (self.g * block[:, b * j : (b + 1) * j]).ravel()
            self.design = np.hstack([self.design_reflectance, a_f])

    def fluor_matrix(self, w: FloatArray) -> FloatArray:
        """Masked Donaldson surface for a weight matrix (or its raveled form)."""
        return self.mask * (self.bm @ w.reshape(self.n_e, self.n_x) @ self.bx.T)

    def fluor_adjoint(self, v: FloatArray) -> FloatArray:
        """Adjoint of fluor_matrix applied to a d-by-d matrix."""
        return self.bm.T @ (self.mask * v) @ self.bx

    def fluor_gram(self) -> FloatArray:
        """Gram matrix of the W -> T o (Bm W Bx^T) map, (n_e n_x) square."""
        # <T o (bm_a bx_b^T), T o (bm_c bx_d^T)> = (bm_a * bm_c)^T T (bx_b * bx_d)
        d = self.grid.count
        em_pairs = np.einsum("da,dc->dac", self.bm, self.bm).reshape(d, -1)
        ex_pairs = np.einsum("db,dc->dbc", self.bx, self.bx).reshape(d, -1)
        mid = em_pairs.T @ self.mask @ ex_pairs  # (n_e*n_e) x (n_x*n_x)
        mid = mid.reshape(self.n_e, self.n_e, self.n_x, self.n_x)
        return mid.transpose(0, 2, 1, 3).reshape(self.n_w, self.n_w)

    def roughness_gram(self) -> FloatArray:
        """Gram of row plus column first differences of the masked surface map."""
        d = self.grid.count
        phi = np.einsum("op,oa,pb->opab", self.mask, self.bm, self.bx).reshape(d, d, self.n_w)
        drow = np.diff(phi, axis=0).reshape(-1, self.n_w)
        dcol = np.diff(phi, axis=1).reshape(-1, self.n_w)
        return drow.T @ drow + dcol.T @ dcol

    def measure(self, surface: FloatArray) -> FloatArray:
        """Raveled pixel values G o (C^T surface L) of a d-by-d radiance surface."""
        return (self.g * (self.c.T @ surface @ self.l)).ravel()

    def measure_adjoint(self, m_vec: FloatArray) -> FloatArray:
        """d-by-d adjoint of measure applied to raveled pixel values."""
        return self.c @ (self.g * m_vec.reshape(self.shape)) @ self.l.T

    def emission_columns(self, excitation: FloatArray) -> FloatArray:
        """Design block for emission weights with the excitation spectrum fixed."""
        i, j = self.shape
        cols = np.empty((i * j, self.n_e))
        scaled = excitation[:, None] * self.l
        for a in range(self.n_e):
            cols[:, a] = (self.g * (self._emission_rows[a] @ scaled)).ravel()
        return cols

    def excitation_columns(self, emission: FloatArray) -> FloatArray:
        """Design block for excitation weights with the emission spectrum fixed."""
        i, j = self.shape
        rows = self.c.T @ (self.mask * emission[:, None])
        cols = np.empty((i * j, self.n_x))
        for b in range(self.n_x):
            cols[:, b] = (self.g * (rows @ self._scaled_l[b])).ravel()
        return cols


def roughness(values: FloatArray) -> float:
    """Sum of squared adjacent differences; rows and columns for matrices."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return float(np.sum(np.diff(values) ** 2))
    return float(np.sum(np.diff(values, axis=0) ** 2) + np.sum(np.diff(values, axis=1) ** 2))


def estimate_multi(
    m: MeasurementGrid, bases: BasisSet, tuning: MultiTuning | None = None
) -> MultiEstimate:
    """Estimate reflectance and a Donaldson matrix allowing several fluorophores.

    Parameters
    ----------
    m : MeasurementGrid
        Pixel values with the camera, illuminant and gain description.
    bases : BasisSet
        Linear models for reflectance, excitation and emission spectra.
    tuning : MultiTuning, optional
        Penalty weights and stopping controls.

    Returns
    -------
    MultiEstimate
        Weights, reconstructed spectra, per-iteration history and a
        convergence flag. Failure to converge is reported through the flag,
        not raised.
    """
    tuning = tuning or MultiTuning()
    if not np.all(np.isfinite(m.values)):
        raise ValueError("measurement contains non-finite pixel values")

    op = _ForwardOperator(m, bases)
    d = op.grid.count
    n_r, n_w = op.n_r, op.n_w
    n = n_r + n_w
    rho = tuning.rho

    grad = difference_penalty(d)
    smooth_r = op.br.T @ (grad.T @ grad) @ op.br

    a = op.design
    m_vec = m.values.ravel()
    atm = a.T @ m_vec

    h_base = 2.0 * (a.T @ a)
    h_base[:n_r, :n_r] += 2.0 * tuning.alpha * smooth_r
    h_base[n_r:, n_r:] += 2.0 * tuning.beta * op.roughness_gram()
    h_rho = np.zeros((n, n))
    h_rho[:n_r, :n_r] = op.br.T @ op.br
    h_rho[n_r:, n_r:] = op.fluor_gram() + np.eye(n_w)
    chol = cho_factor(h_base + rho * h_rho, lower=True)

    # init: box-projected least-squares reflectance-only fit, no fluorescence
    wr0 = np.linalg.lstsq(
        h_base[:n_r, :n_r] + 1e-12 * np.eye(n_r), 2.0 * atm[:n_r], rcond=None
    )[0]
    wr = op.br.T @ project_box(op.br @ wr0, 0.0, 1.0)
    w = np.zeros((op.n_e, op.n_x))

    refl = op.br @ wr
    fluor = op.fluor_matrix(w)
    z1 = project_box(refl, 0.0, 1.0)
    z2 = np.maximum(fluor, 0.0)
    z3 = w.copy()
    u1 = np.zeros(d)
    u2 = np.zeros((d, d))
    u3 = np.zeros((op.n_e, op.n_x))

    obj_hist: list[float] = []
    pri_hist: list[float] = []
    dual_hist: list[float] = []
    converged = False
    iterations = 0
    # absolute residual floor; pixel values are gain-normalized to order one
    abs_tol = 1e-8
    consensus_dim = d + d * d + n_w

    for it in range(tuning.max_iterations):
        iterations = it + 1

        rhs = 2.0 * atm.copy()
        rhs[:n_r] += rho * (op.br.T @ (z1 - u1))
        rhs[n_r:] += rho * (op.fluor_adjoint(z2 - u2) + (z3 - u3)).ravel()
        x = cho_solve(chol, rhs)
        wr = x[:n_r]
        w = x[n_r:].reshape(op.n_e, op.n_x)
        refl = op.br @ wr
        fluor = op.fluor_matrix(w)

        z1_old, z2_old, z3_old = z1, z2, z3
        z1 = project_box(refl + u1, 0.0, 1.0)
        z2 = np.maximum(fluor + u2, 0.0)
        z3 = prox_nuclear(w + u3, tuning.eta / rho)

        u1 = u1 + refl - z1
        u2 = u2 + fluor - z2
        u3 = u3 + w - z3

        resid = a @ x - m_vec
        obj = (
            float(resid @ resid)
            + tuning.alpha * roughness(refl)
            + tuning.beta * roughness(fluor)
            + tuning.eta * nuclear_norm(w)
        )
        primal = np.sqrt(
            np.sum((refl - z1) ** 2) + np.sum((fluor - z2) ** 2) + np.sum((w - z3) ** 2)
        )
        dual_vec = np.concatenate(
            [
                op.br.T @ (z1 - z1_old),
                (op.fluor_adjoint(z2 - z2_old) + (z3 - z3_old)).ravel(),
            ]
        )
        dual = rho * float(np.linalg.norm(dual_vec))

        obj_hist.append(obj)
        pri_hist.append(float(primal))
        dual_hist.append(dual)

        ax_norm = np.sqrt(np.sum(refl**2) + np.sum(fluor**2) + np.sum(w**2))
        z_norm = np.sqrt(np.sum(z1**2) + np.sum(z2**2) + np.sum(z3**2))
        dual_ref = rho * np.linalg.norm(
            np.concatenate([op.br.T @ u1, (op.fluor_adjoint(u2) + u3).ravel()])
        )
        eps_pri = abs_tol * np.sqrt(consensus_dim) + tuning.primal_tol * max(ax_norm, z_norm)
        eps_dual = abs_tol * np.sqrt(n) + tuning.dual_tol * dual_ref

        if it >= 1 and primal <= eps_pri and dual <= eps_dual:
            converged = True
            break

        if tuning.adapt_rho and (it + 1) % 10 == 0 and dual > 0 and primal > 0:
            # compare residuals on their tolerance scales so the d^2-sized
            # consensus block does not drown out the weight-space dual
            ratio = (primal / max(eps_pri, 1e-300)) / (dual / max(eps_dual, 1e-300))
            new_rho = rho
            if ratio > 10.0:
                new_rho = rho * 2.0
            elif ratio < 0.1:
                new_rho = rho / 2.0
            if new_rho != rho:
                shrink = rho / new_rho
                u1 *= shrink
                u2 *= shrink
                u3 *= shrink
                rho = new_rho
                chol = cho_factor(h_base + rho * h_rho, lower=True)

    fluor = op.fluor_matrix(w)
    # unconverged iterates may dip further below zero; floor at the reporting tolerance
    entries = np.maximum(fluor, -ROLE_BOUND_TOL)
    history = ConvergenceHistory(
        objective=np.asarray(obj_hist),
        primal_residual=np.asarray(pri_hist),
        dual_residual=np.asarray(dual_hist),
    )
    refl_values = op.br @ wr
    try:
        reflectance = Spectrum(grid=op.grid, values=refl_values, role="reflectance")
    except ValueError:
        reflectance = Spectrum(grid=op.grid, values=refl_values, role="generic")
    return MultiEstimate(
        reflectance_weights=wr,
        fluorophore_weights=w,
        reflectance=reflectance,
        donaldson=DonaldsonMatrix(grid=op.grid, entries=entries),
        bases=bases,
        history=history,
        iterations_run=iterations,
        converged=converged,
    )


def truncate_rank(estimate: MultiEstimate, n: int) -> MultiEstimate:
    """Replace the fluorophore weight matrix by its best rank-n approximation.

    Used to force the relaxed solution back onto an exact fluorophore count.
    The Donaldson matrix is recomputed from the truncated weights.
    """
    w = estimate.fluorophore_weights
    if not 1 <= n <= min(w.shape):
        raise ValueError(f"rank {n} out of range for weight matrix {w.shape}")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    w_trunc = (u[:, :n] * s[:n]) @ vt[:n]
    entries = np.maximum(masked_surface(estimate.bases, w_trunc), -ROLE_BOUND_TOL)
    donaldson = DonaldsonMatrix(grid=estimate.donaldson.grid, entries=entries)
    return replace(estimate, fluorophore_weights=w_trunc, donaldson=donaldson)
