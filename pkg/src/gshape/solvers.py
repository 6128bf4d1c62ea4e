"""Preconditioned conjugate gradients for the field-space Gauss-Newton systems."""

from __future__ import annotations

import numpy as np


def _dot(x, y) -> float:
    return float(np.sum(x * y))


def pcg(apply_a, b: np.ndarray, precond=None, tol: float = 1e-6, max_iter: int = 64):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Parameters
    ----------
    apply_a : callable
        Matrix-vector product ``x -> A x`` on arrays shaped like ``b``.
    b : ndarray
        Right-hand side.
    precond : callable, optional
        Approximate inverse of ``A`` (identity if omitted).
    tol : float
        Relative residual target ``||r|| <= tol * ||b||``.
    max_iter : int
        Iteration cap.

    Returns
    -------
    (x, rel_residual, n_iter, converged)
    """
    b_norm = np.sqrt(_dot(b, b))
    if b_norm == 0.0:
        return np.zeros_like(b), 0.0, 0, True
    if precond is None:
        precond = lambda r: r

    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = _dot(r, z)
    rel = 1.0
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        pap = _dot(p, ap)
        if pap <= 0:
            # loss of positive definiteness from rounding; bail with current x
            return x, rel, it, False
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rel = np.sqrt(_dot(r, r)) / b_norm
        if rel <= tol:
            return x, rel, it, True
        z = precond(r)
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, rel, max_iter, False
