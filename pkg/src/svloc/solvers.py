"""Batched 2D damped Gauss-Newton (Levenberg) used by the localizers.

All solvers in this package minimize sums of squared scaled residuals over a
2D position. This helper runs many independent problems at once as stacked
numpy arrays, which keeps Monte-Carlo studies fast without threads.
"""

from __future__ import annotations

import numpy as np

LAMBDA0 = 1e-3
STEP_TOL = 1e-7
MAX_ITER = 100


def lm_minimize(residual_jacobian, starts: np.ndarray, max_iter: int = MAX_ITER,
                step_tol: float = STEP_TOL, lambda0: float = LAMBDA0,
                bounds=None):
    """Minimize ||r(p)||^2 for a batch of independent 2D problems.

    residual_jacobian(p) maps positions (B, 2) to residuals (B, M) and
    Jacobians (B, M, 2). Damping is per problem with a x10 / /10 schedule.
    `bounds` = ((x_lo, y_lo), (x_hi, y_hi)) projects every trial into a box,
    which keeps flat-valley problems from running off to infinity. Returns
    (positions (B, 2), cost (B,), converged (B,) bool).
    """
    p = np.array(starts, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    B = p.shape[0]
    lo = hi = None
    if bounds is not None:
        lo = np.asarray(bounds[0], dtype=float)
        hi = np.asarray(bounds[1], dtype=float)
        p = np.clip(p, lo, hi)
    lam = np.full(B, lambda0)
    r, J = residual_jacobian(p)
    cost = np.einsum("bm,bm->b", r, r)
    converged = np.zeros(B, dtype=bool)

    for _ in range(max_iter):
        active = ~converged
        if not active.any():
            break
        # normal equations with Levenberg damping, 2x2 closed-form solve
        a11 = np.einsum("bm,bm->b", J[..., 0], J[..., 0]) + lam
        a22 = np.einsum("bm,bm->b", J[..., 1], J[..., 1]) + lam
        a12 = np.einsum("bm,bm->b", J[..., 0], J[..., 1])
        g1 = np.einsum("bm,bm->b", J[..., 0], r)
        g2 = np.einsum("bm,bm->b", J[..., 1], r)
        det = a11 * a22 - a12 * a12
        det = np.where(np.abs(det) < 1e-30, 1e-30, det)
        step = np.stack([-(a22 * g1 - a12 * g2) / det,
                         -(a11 * g2 - a12 * g1) / det], axis=-1)

        trial = p + np.where(active[:, None], step, 0.0)
        if bounds is not None:
            trial = np.clip(trial, lo, hi)
            step = trial - p
        r_t, J_t = residual_jacobian(trial)
        cost_t = np.einsum("bm,bm->b", r_t, r_t)
        better = (cost_t < cost) & active
        # flat-valley stall: accepted step no longer buys measurable cost
        stalled = better & (cost - cost_t < 1e-10 * (cost + 1e-30))

        p = np.where(better[:, None], trial, p)
        r = np.where(better[:, None], r_t, r)
        J = np.where(better[:, None, None], J_t, J)
        cost = np.where(better, cost_t, cost)
        lam = np.where(better, np.maximum(lam * 0.1, 1e-12),
                       np.where(active, np.minimum(lam * 10.0, 1e9), lam))

        step_len = np.hypot(step[:, 0], step[:, 1])
        converged |= better & (step_len < step_tol)
        converged |= stalled
        # damping saturated: no progress possible, stop touching this row
        converged |= active & (lam >= 1e9)

    return p, cost, converged
