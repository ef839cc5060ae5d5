"""Box-constrained quadratic programming by operator splitting.

Solves ``minimize (1/2) x^T P x + q^T x  subject to  lower <= A x <= upper``
with an ADMM scheme that alternates a cached linear solve with a projection
onto the constraint interval, then polishes the active set by a direct KKT
solve. One-sided inequalities use infinite bounds.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import FloatArray


class QpError(ValueError):
    """Raised for ill-posed quadratic programs (bad shapes, non-PSD, infeasible)."""


def solve_qp(
    hessian: FloatArray,
    linear: FloatArray,
    constraints: FloatArray,
    lower: FloatArray,
    upper: FloatArray,
    x0: FloatArray | None = None,
    tolerance: float = 1e-8,
    max_iterations: int = 50000,
) -> FloatArray:
    """Minimize ``(1/2) x^T P x + q^T x`` subject to ``lower <= A x <= upper``.

    Parameters
    ----------
    hessian : (n, n) symmetric positive semidefinite matrix P.
    linear : (n,) vector q.
    constraints : (m, n) matrix A of linear functionals.
    lower, upper : (m,) interval bounds; use -inf/inf for one-sided rows.
    x0 : optional warm start.
    tolerance : absolute and relative KKT residual target.
    max_iterations : iteration cap before giving up.

    Returns
    -------
    (n,) solution vector.
    """
    x, _, _ = _qp_admm(
        hessian, linear, constraints, lower, upper,
        x0=x0, tolerance=tolerance, max_iterations=max_iterations,
    )
    return x


def _qp_admm(
    hessian,
    linear,
    constraints,
    lower,
    upper,
    x0=None,
    y0=None,
    z0=None,
    tolerance=1e-8,
    max_iterations=50000,
):
    """Full splitting iteration; returns (x, y, z) for warm-starting."""
    p = np.asarray(hessian, dtype=float)
    q = np.asarray(linear, dtype=float)
    a = np.asarray(constraints, dtype=float)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)

    n = q.shape[0]
    if p.shape != (n, n):
        raise QpError(f"Hessian shape {p.shape} does not match {n} variables")
    if a.ndim != 2 or a.shape[1] != n:
        raise QpError(f"constraint matrix shape {a.shape} does not match {n} variables")
    m = a.shape[0]
    if lo.shape != (m,) or hi.shape != (m,):
        raise QpError("bound vectors must match the constraint row count")
    if np.any(lo > hi):
        raise QpError("infeasible constraints: lower bound exceeds upper bound")
    if np.abs(p - p.T).max() > 1e-10 * max(1.0, np.abs(p).max()):
        raise QpError("Hessian must be symmetric")
    eigs = np.linalg.eigvalsh(p)
    if eigs.min() < -1e-8 * max(1.0, eigs.max()):
        raise QpError(f"Hessian is not positive semidefinite (min eig {eigs.min():g})")

    sigma = 1e-6
    rho = 0.1
    relax = 1.6
    q_scale = np.abs(q).max()

    ata = a.T @ a
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    z = np.clip(a @ x, lo, hi) if z0 is None else np.asarray(z0, dtype=float).copy()
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float).copy()

    def factor(rho_now: float):
        return cho_factor(p + sigma * np.eye(n) + rho_now * ata, lower=True)

    def residuals(x_, z_, y_):
        ax_ = a @ x_
        r_prim = np.abs(ax_ - z_).max() if m else 0.0
        r_dual = np.abs(p @ x_ + q + a.T @ y_).max()
        eps_prim = tolerance + tolerance * max(
            np.abs(ax_).max() if m else 0.0, np.abs(z_).max() if m else 0.0
        )
        eps_dual = tolerance + tolerance * max(
            np.abs(p @ x_).max(), np.abs(a.T @ y_).max() if m else 0.0, q_scale
        )
        return r_prim, r_dual, eps_prim, eps_dual

    chol = factor(rho)

    for it in range(max_iterations):
        rhs = sigma * x - q + a.T @ (rho * z - y)
        x = cho_solve(chol, rhs)
        ax = a @ x
        ax_rel = relax * ax + (1.0 - relax) * z
        z = np.clip(ax_rel + y / rho, lo, hi)
        y = y + rho * (ax_rel - z)

        r_prim, r_dual, eps_prim, eps_dual = residuals(x, z, y)
        if r_prim <= eps_prim and r_dual <= eps_dual:
            return x, y, z

        # polish once the iterate is roughly settled; the strict KKT check
        # below decides whether the polished point is accepted
        rough_ok = r_prim <= 1e-4 * (1.0 + (np.abs(ax).max() if m else 0.0))
        if rough_ok and (it < 20 or (it + 1) % 25 == 0):
            polished = _polish(p, q, a, lo, hi, y)
            if polished is not None:
                xp, yp = polished
                zp = np.clip(a @ xp, lo, hi)
                rp, rd, ep, ed = residuals(xp, zp, yp)
                if rp <= ep and rd <= ed:
                    return xp, yp, zp

        if (it + 1) % 100 == 0 and r_dual > 0 and r_prim > 0:
            ratio = (r_prim / max(eps_prim, 1e-300)) / (r_dual / max(eps_dual, 1e-300))
            if ratio > 5.0 or ratio < 0.2:
                rho = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
                chol = factor(rho)

    # tolerate a slightly loose dual residual; a large primal gap means the
    # iterate cannot satisfy the constraints and the problem is likely infeasible
    ax = a @ x
    scale = max(np.abs(ax).max() if m else 0.0, np.abs(z).max() if m else 0.0, 1.0)
    if m and np.abs(ax - z).max() > 1e-3 * scale:
        raise QpError("QP did not reach feasibility; constraints may be infeasible")
    return x, y, z


def _polish(p, q, a, lo, hi, y):
    """Solve the KKT system on the active set guessed from the dual signs.

    Returns a refined (x, y) pair, or None when the reduced system is
    singular or the guess turns out inconsistent.
    """
    n = q.shape[0]
    ytol = 1e-10 * max(1.0, np.abs(y).max() if y.size else 0.0)
    active_lo = y < -ytol
    active_hi = y > ytol
    active = active_lo | active_hi
    n_act = int(active.sum())
    a_act = a[active]
    b_act = np.where(active_lo, lo, hi)[active]

    delta = 1e-9
    kkt = np.zeros((n + n_act, n + n_act))
    kkt[:n, :n] = p + delta * np.eye(n)
    kkt[:n, n:] = a_act.T
    kkt[n:, :n] = a_act
    kkt[n:, n:] = -delta * np.eye(n_act)
    rhs = np.concatenate([-q, b_act])
    try:
        sol = np.linalg.solve(kkt, rhs)
        # one refinement step against the unregularized system
        kkt0 = kkt.copy()
        kkt0[:n, :n] -= delta * np.eye(n)
        kkt0[n:, n:] += delta * np.eye(n_act)
        sol = sol + np.linalg.solve(kkt, rhs - kkt0 @ sol)
    except np.linalg.LinAlgError:
        return None
    x_new = sol[:n]
    y_new = np.zeros_like(y)
    y_new[active] = sol[n:]
    ax_new = a @ x_new
    margin = 1e-9 * max(1.0, np.abs(ax_new).max() if ax_new.size else 0.0)
    if np.any(ax_new < lo - margin) or np.any(ax_new > hi + margin):
        return None
    if np.any(y_new[active_lo] > ytol) or np.any(y_new[active_hi] < -ytol):
        return None
    return x_new, y_new
