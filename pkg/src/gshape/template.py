"""Log-odds template, categorical data term and its Gauss-Newton derivatives.

The template is stored as per-voxel log-odds ``a`` with ``K`` classes.  It is
deformed towards a subject by interpolating the log-odds at the subject's
inverse transform and passing them through a softmax, so every warped voxel
is a strictly positive probability vector.

The data term is the negative categorical log-likelihood of per-voxel class
responsibilities ``f`` (sub-stochastic sums encode missing data).  Its
voxelwise gradient and Hessian are pushed back to template space through the
transpose of the interpolation operator and contracted with the template's
spatial gradients, giving the gradient and a voxelwise d-by-d Gauss-Newton
Hessian with respect to the initial velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .interp import pull, push, spatial_gradient
from .shooting import ShootingResult

LOG_ODDS_CLAMP = 30.0


def softmax(a: np.ndarray) -> np.ndarray:
    """Stable per-voxel softmax over the trailing class axis.

    Log-odds are clamped to +/-30 beforehand; the output therefore lies
    strictly inside the simplex and sums to one to rounding error.
    """
    a = np.clip(a, -LOG_ODDS_CLAMP, LOG_ODDS_CLAMP)
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def log_odds_from_probabilities(p: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Softmax-inverse of (possibly degenerate) probabilities, recentred."""
    p = np.asarray(p, dtype=np.float64) + floor
    p = p / p.sum(axis=-1, keepdims=True)
    a = np.log(p)
    return a - a.mean(axis=-1, keepdims=True)


def warp_template(a: np.ndarray, deformation) -> np.ndarray:
    """Deform the template: interpolate log-odds, then softmax.

    ``deformation`` is the transform whose coordinates the template is
    sampled at (the inverse map of a shooting result).
    """
    mapping = deformation.map if hasattr(deformation, "map") else deformation
    return softmax(pull(a, mapping))


def data_energy(f: np.ndarray, mu: np.ndarray) -> float:
    """Negative categorical log-likelihood ``-sum f * ln(mu)``."""
    if f.shape != mu.shape:
        raise DataError(f"class shape mismatch: {f.shape} vs {mu.shape}")
    return float(-np.sum(f * np.log(mu)))


def _categorical_grad_hess(f: np.ndarray, mu: np.ndarray):
    """Voxelwise gradient and Hessian of the data term w.r.t. log-odds.

    g_k = mu_k * (sum_l f_l) - f_k ;  H_km = mu_k (delta_km - mu_m) sum_l f_l
    """
    mass = f.sum(axis=-1)
    g = mu * mass[..., None] - f
    h = -mu[..., :, None] * mu[..., None, :]
    diag = np.arange(mu.shape[-1])
    h[..., diag, diag] += mu
    h *= mass[..., None, None]
    return g, h


@dataclass
class DataTermDerivs:
    """Data-term value and its velocity-space Gauss-Newton derivatives."""

    energy: float
    grad_v: np.ndarray    # (*dims, d), template space
    hess_v: np.ndarray    # (*dims, d, d), symmetric PSD voxel blocks


def data_derivs(f: np.ndarray, a: np.ndarray, result: ShootingResult,
                grad_a: np.ndarray | None = None,
                contraction: str = "subject") -> DataTermDerivs:
    """Energy, gradient and Hessian of the data term w.r.t. the velocity.

    The template is warped by the inverse map of ``result``; the categorical
    gradient and Hessian are contracted with the template's lattice
    gradients and carried to template space through the transpose of the
    interpolation.  With ``contraction="subject"`` the template gradients
    are sampled at the warped points so gradient and residual stay
    co-located (more accurate at multi-voxel warps); ``"template"`` pushes
    the categorical terms first and contracts afterwards.  Both coincide at
    the identity warp, where the returned gradient is exact; elsewhere this
    is the standard at-the-warp approximation.
    """
    if not np.all(np.isfinite(a)):
        raise DataError("template contains non-finite values")
    mapping = result.inverse.map
    mu = softmax(pull(a, mapping))
    g_cat, h_cat = _categorical_grad_hess(f, mu)
    energy = data_energy(f, mu)
    if grad_a is None:
        grad_a = spatial_gradient(a, result.inverse.lattice.voxel_size, channel_axes=1)
    # warping with the inverse flow means increasing v moves samples backward,
    # hence the sign flip relative to the raw chain rule
    if contraction == "subject":
        ga_warp = pull(grad_a, mapping)
        g_sub = np.einsum("...k,...ka->...a", g_cat, ga_warp)
        h_sub = np.einsum("...km,...ka,...mb->...ab", h_cat, ga_warp, ga_warp)
        grad_v = -push(g_sub, mapping)
        hess_v = push(h_sub, mapping)
    else:
        g_push = push(g_cat, mapping)
        h_push = push(h_cat, mapping)
        grad_v = -np.einsum("...k,...ka->...a", g_push, grad_a)
        hess_v = np.einsum("...km,...ka,...mb->...ab", h_push, grad_a, grad_a)
    return DataTermDerivs(energy=energy, grad_v=grad_v, hess_v=hess_v)


def template_objective(a: np.ndarray, subjects, dirichlet_eps: float) -> float:
    """Penalised template objective: data terms plus log-Dirichlet penalty."""
    obj = 0.0
    for f, result in subjects:
        obj += data_energy(f, warp_template(a, result.inverse))
    mu0 = softmax(a)
    obj -= dirichlet_eps * float(np.sum(np.log(mu0)))
    return obj


def update_template(a: np.ndarray, subjects, dirichlet_eps: float = 1e-3,
                    max_backtracks: int = 6):
    """One Gauss-Newton step on the maximum a posteriori template.

    Subject gradients/Hessians are pushed through each subject's inverse
    transform and accumulated in template space; the log-Dirichlet penalty
    acts as ``dirichlet_eps`` pseudo-counts of every class at every voxel,
    which keeps probabilities away from zero.  The K-by-K system is solved
    per voxel and the step is backtracked until the objective does not
    increase.

    Returns ``(new_log_odds, objective)`` where the objective is the accepted
    penalised value.
    """
    if not subjects:
        raise DataError("template update needs at least one subject")
    n_classes = a.shape[-1]
    grad = np.zeros_like(a)
    hess = np.zeros(a.shape + (n_classes,))
    for f, result in subjects:
        mapping = result.inverse.map
        mu = softmax(pull(a, mapping))
        g_cat, h_cat = _categorical_grad_hess(f, mu)
        grad += push(g_cat, mapping)
        hess += push(h_cat, mapping)
    # log-Dirichlet prior = eps pseudo-counts of every class at identity warp
    mu0 = softmax(a)
    pseudo = np.full_like(a, dirichlet_eps)
    g0, h0 = _categorical_grad_hess(pseudo, mu0)
    grad += g0
    hess += h0
    # the categorical Hessian is singular along the per-voxel constant
    # direction (softmax shift invariance); a small ridge fixes the solve
    trace = np.einsum("...kk->...", hess)
    ridge = 1e-6 * trace / n_classes + 1e-12
    diag = np.arange(n_classes)
    hess[..., diag, diag] += ridge[..., None]
    delta = -np.linalg.solve(hess, grad[..., None])[..., 0]
    # at consensus voxels the curvature vanishes with the gradient, and the
    # quotient proposes huge log-odds jumps the line search cannot see; cap
    # the per-voxel move so saturation approaches its fixed point gently
    np.clip(delta, -4.0, 4.0, out=delta)

    obj0 = template_objective(a, subjects, dirichlet_eps)
    step = 1.0
    for _ in range(max_backtracks + 1):
        trial = a + step * delta
        trial -= trial.mean(axis=-1, keepdims=True)
        obj = template_objective(trial, subjects, dirichlet_eps)
        if obj <= obj0:
            return trial, obj
        step *= 0.5
    return a, obj0
