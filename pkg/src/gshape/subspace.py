"""Principal-subspace update, orthogonalisation and diagonal rescaling.

The subspace is an array of ``M`` velocity-shaped mode fields.  One outer
update performs a per-mode Gauss-Newton step (the modes decouple once the
latent second moments are near-diagonal, which the orthogonalisation step
maintains) followed by a joint backtracking line search on the full
objective.

Orthogonalisation finds the invertible latent-space transform that makes the
summed latent second moments diagonal and the metric Gram matrix of the
modes the identity, while leaving every reconstructed velocity untouched.
The subsequent rescale loop alternates the latent-precision update with a
closed-form diagonal scaling that optimally distributes magnitude between
the two Gram matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularSystem, SolverNotConverged
from .inference import (
    LatentPosterior,
    MixtureWeights,
    evaluate_subject,
    gram_matrix,
    reconstruct,
    update_latent_precision,
    _energy_only,
)
from .metric import SpectralKernel
from .solvers import pcg


@dataclass
class OrthoTransform:
    """Latent-space change of basis: rotation/scaling ``T`` and diagonal ``Q``."""

    t: np.ndarray             # (M, M) invertible
    q: np.ndarray             # (M,) positive diagonal entries

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.t))


def subspace_objective(modes, images, template, latents, residuals, weights,
                       kern, steps, energies=None):
    """Objective the subspace line search descends on.

    Plug-in data terms plus the subspace prior energy and the expected
    whole-velocity prior energy (including latent-covariance traces).
    """
    g1, g2 = weights.gamma1, weights.gamma2
    gram = gram_matrix(modes, kern)
    cov_sum = np.sum([lp.cov for lp in latents], axis=0)
    obj = 0.5 * g1 * float(np.trace(gram))
    obj += 0.5 * g2 * float(np.sum(gram * cov_sum))
    for n, f in enumerate(images):
        v = reconstruct(modes, latents[n].mean) + residuals[n].mean
        if energies is not None and energies[n] is not None:
            e = energies[n]
        else:
            e = _energy_only(f, template, v, kern, steps)
        obj += e + 0.5 * g2 * kern.inner(v, v)
    return obj


def update_subspace(modes, images, template, latents, residuals,
                    weights: MixtureWeights, kern: SpectralKernel, steps: int,
                    evals=None, grad_a=None,
                    pcg_tol: float = 1e-6, pcg_max_iter: int = 64,
                    max_backtracks: int = 12, step_cap_voxels: float = 0.5):
    """One Gauss-Newton step on all mode fields with a joint line search.

    The raw Gauss-Newton direction can propose multi-voxel velocity changes
    along weakly penalised low frequencies, far outside the quadratic
    model's validity, so the initial trial is scaled to change no subject's
    velocity by more than ``step_cap_voxels``.  ``evals`` may carry
    per-subject :class:`SubjectEval` objects at the current velocities to
    avoid re-shooting.  Returns ``(modes, evals_at_accepted_point)``.
    """
    g1, g2 = weights.gamma1, weights.gamma2
    m = modes.shape[0]
    if evals is None:
        evals = [None] * len(images)
    evals = [
        ev if ev is not None else evaluate_subject(
            images[n], template,
            reconstruct(modes, latents[n].mean) + residuals[n].mean,
            kern, steps, grad_a)
        for n, ev in enumerate(evals)
    ]

    # sufficient statistics over subjects
    z_means = np.stack([lp.mean for lp in latents])              # (N, M)
    e_second = np.stack([np.diag(lp.second_moment()) for lp in latents])  # (N, M)
    cov_sum = np.sum([lp.cov for lp in latents], axis=0)          # (M, M)

    data_grad = np.zeros_like(modes)
    hess_sum = np.zeros(modes.shape + (modes.shape[-1],))
    recon_weighted = np.zeros_like(modes)
    for n, ev in enumerate(evals):
        z_bc = z_means[n].reshape((m,) + (1,) * ev.derivs.grad_v.ndim)
        e2_bc = e_second[n].reshape((m,) + (1,) * ev.derivs.hess_v.ndim)
        data_grad += z_bc * ev.derivs.grad_v[None]
        hess_sum += e2_bc * ev.derivs.hess_v[None]
        recon_weighted += z_bc * ev.velocity[None]

    # prior part of the gradient: L (g1 W + g2 [sum_n v_n z_n^T + W cov_sum])
    prior_fields = g1 * modes + g2 * (
        recon_weighted + np.tensordot(cov_sum, modes, axes=(0, 0))
    )
    new_modes = modes.copy()
    deltas = np.zeros_like(modes)
    for i in range(m):
        grad_i = data_grad[i] + kern.apply_l(prior_fields[i])
        c_i = g1 + g2 * float(e_second[:, i].sum())
        hess_i = hess_sum[i]
        h_bar = np.einsum("...aa->...a", hess_i).reshape(-1, hess_i.shape[-1]).mean(axis=0)
        pre_mats = kern.shifted_inverse(scale=c_i, shift=h_bar)
        axes = tuple(range(kern.ndim))

        def apply_a(x, hess_i=hess_i, c_i=c_i):
            return np.einsum("...ab,...b->...a", hess_i, x) + c_i * kern.apply_l(x)

        def precond(x, pre_mats=pre_mats):
            xhat = np.fft.fftn(x, axes=axes)
            return np.fft.ifftn(
                np.einsum("...ab,...b->...a", pre_mats, xhat), axes=axes).real

        delta, rel, n_it, converged = pcg(
            apply_a, -grad_i, precond, tol=pcg_tol, max_iter=pcg_max_iter)
        if not converged and rel > 1e-2:
            raise SolverNotConverged(
                f"subspace solve for mode {i} stalled at relative residual "
                f"{rel:.3e} after {n_it} iterations", residual=rel)
        deltas[i] = delta

    obj0 = subspace_objective(modes, images, template, latents, residuals,
                              weights, kern, steps,
                              energies=[ev.energy for ev in evals])
    velocity_change = max(
        float(np.abs(np.tensordot(lp.mean, deltas, axes=1)).max())
        for lp in latents
    )
    step = min(1.0, step_cap_voxels / max(velocity_change, 1e-12))
    for _ in range(max_backtracks + 1):
        trial = modes + step * deltas
        obj = subspace_objective(trial, images, template, latents, residuals,
                                 weights, kern, steps)
        if obj < obj0:
            new_modes = trial
            evals = [
                evaluate_subject(
                    images[n], template,
                    reconstruct(new_modes, latents[n].mean) + residuals[n].mean,
                    kern, steps, grad_a)
                for n in range(len(images))
            ]
            return new_modes, evals
        step *= 0.5
    return modes, evals


def orthogonalise(modes, latents, kern: SpectralKernel,
                  rank_rtol: float = 1e-12):
    """Diagonalise the latent second moments and metric-orthonormalise modes.

    Returns ``(modes, transform, latents)`` where ``transform.t`` satisfies
    ``T E[Z Z^T] T^T`` diagonal (non-increasing) and
    ``T^-T W^T L W T^-1 = I``; reconstructions ``W z`` are preserved.

    Raises
    ------
    SingularSystem
        If the Gram matrix of the modes is (numerically) rank deficient,
        which signals a collapsed mode the caller should reinitialise.
    """
    m = modes.shape[0]
    gram = gram_matrix(modes, kern)
    gram = 0.5 * (gram + gram.T)
    moments = np.sum([lp.second_moment() for lp in latents], axis=0)
    moments = 0.5 * (moments + moments.T)

    lw, e_l = np.linalg.eigh(gram)
    if lw.min() <= rank_rtol * max(lw.max(), 1e-300):
        raise SingularSystem("mode Gram matrix is rank deficient (collapsed mode)")
    root = np.sqrt(lw)
    rotated = (root[:, None] * e_l.T) @ moments @ (e_l * root[None, :])
    rotated = 0.5 * (rotated + rotated.T)
    zw, e_z = np.linalg.eigh(rotated)
    order = np.argsort(zw)[::-1]
    zw, e_z = zw[order], e_z[:, order]

    t = e_z.T @ (root[:, None] * e_l.T)
    t_inv = (e_l / root[None, :]) @ e_z
    new_modes = np.tensordot(t_inv, modes, axes=(0, 0))
    new_latents = [
        LatentPosterior(mean=t @ lp.mean, cov=t @ lp.cov @ t.T)
        for lp in latents
    ]
    return new_modes, OrthoTransform(t=t, q=np.ones(m)), new_latents


def rescale(modes, latents, weights: MixtureWeights, kern: SpectralKernel,
            tol: float = 1e-6, max_iter: int = 32,
            q_floor: float = 1e-8, q_cap: float = 1e8):
    """Optimal diagonal magnitude split after orthogonalisation.

    Alternates the conjugate latent-precision update with the closed-form
    per-mode scaling ``q^4 = gram_mm / (moment_mm * A_mm)`` until the scaling
    stabilises, then applies the accumulated diagonal to the modes and
    latents.  Returns ``(modes, q, latents, latent_precision)``.
    """
    m = modes.shape[0]
    d_diag = np.diag(np.sum([lp.second_moment() for lp in latents], axis=0)).copy()
    g_diag = np.diag(gram_matrix(modes, kern)).copy()
    q_total = np.ones(m)
    scaled = [LatentPosterior(lp.mean.copy(), lp.cov.copy()) for lp in latents]

    precision = update_latent_precision(scaled, weights, m)
    for _ in range(max_iter):
        a_diag = np.diag(precision.mean)
        u = (g_diag / (d_diag * a_diag)) ** 0.25
        u = np.clip(u, q_floor, q_cap)
        q_total *= u
        d_diag *= u ** 2
        g_diag /= u ** 2
        scaled = [
            LatentPosterior(mean=u * lp.mean, cov=lp.cov * np.outer(u, u))
            for lp in scaled
        ]
        precision = update_latent_precision(scaled, weights, m)
        if np.max(np.abs(u - 1.0)) < tol:
            break
    q_total = np.clip(q_total, q_floor, q_cap)
    new_modes = modes / q_total.reshape((m,) + (1,) * (modes.ndim - 1))
    return new_modes, q_total, scaled, precision


def sort_modes(modes, latents, precision):
    """Order modes by non-increasing summed latent second moment."""
    d_diag = np.diag(np.sum([lp.second_moment() for lp in latents], axis=0))
    order = np.argsort(d_diag)[::-1]
    if np.array_equal(order, np.arange(len(order))):
        return modes, latents, precision
    new_modes = modes[order]
    new_latents = [
        LatentPosterior(mean=lp.mean[order], cov=lp.cov[np.ix_(order, order)])
        for lp in latents
    ]
    new_precision = type(precision)(
        scale=precision.scale[np.ix_(order, order)], dof=precision.dof
    )
    return new_modes, new_latents, new_precision
