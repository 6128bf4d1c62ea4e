"""Per-subject posteriors and global conjugate updates.

Each subject carries a Gaussian (Laplace) posterior over its latent
coordinates and a mode-plus-diagonal-uncertainty approximation of the
posterior over its residual velocity field.  Both are found by Gauss-Newton
with backtracking on the penalised data term; the residual system is solved
with preconditioned conjugate gradients where the metric operator supplies
the preconditioner.

The anatomical-noise precision keeps a Gamma posterior and the latent
precision matrix a Wishart posterior; both conjugate updates are weighted
averages between the prior and the (tempered) likelihood statistics.  The
variational objective assembled in :func:`lower_bound` is the quantity every
update is monotone against, up to the Laplace/Gauss-Newton approximations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, multigammaln

from .errors import SingularSystem, SolverNotConverged
from .metric import SpectralKernel
from .shooting import ShootingResult, shoot
from .solvers import pcg
from .template import DataTermDerivs, data_derivs, data_energy, softmax, warp_template
from .interp import spatial_gradient

LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# posterior state containers


@dataclass
class MixtureWeights:
    """Relative weights of the factored prior and the whole-velocity prior."""

    gamma1: float = 1.0
    gamma2: float = 1.0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0 or self.gamma1 + self.gamma2 <= 0:
            raise ValueError("mixture weights must be nonnegative and not both zero")


@dataclass
class LatentPosterior:
    mean: np.ndarray          # (M,)
    cov: np.ndarray           # (M, M) SPD

    def second_moment(self) -> np.ndarray:
        return np.outer(self.mean, self.mean) + self.cov


@dataclass
class ResidualPosterior:
    mean: np.ndarray                      # (*dims, d)
    uncertainty: np.ndarray | None        # (*dims, d) diagonal variances, or None
    expected_prior_energy: float          # E[r^T L r]


@dataclass
class NoisePrecisionPosterior:
    """Gamma posterior (shape ``alpha``, rate ``beta``) over the residual precision."""

    alpha: float
    beta: float
    lambda0: float
    nu0: float

    @classmethod
    def from_prior(cls, lambda0: float, nu0: float, n_field: int):
        alpha = nu0 * n_field / 2.0
        beta = nu0 * n_field / (2.0 * lambda0)
        return cls(alpha=alpha, beta=beta, lambda0=lambda0, nu0=nu0)

    @property
    def mean(self) -> float:
        return self.alpha / self.beta

    @property
    def expected_log(self) -> float:
        return float(digamma(self.alpha) - np.log(self.beta))


@dataclass
class LatentPrecisionPosterior:
    """Wishart posterior (scale ``scale``, degrees of freedom ``dof``)."""

    scale: np.ndarray         # (M, M) SPD
    dof: float

    @classmethod
    def from_prior(cls, n_modes: int):
        return cls(scale=np.eye(n_modes) / n_modes, dof=float(n_modes))

    @property
    def mean(self) -> np.ndarray:
        return self.dof * self.scale

    @property
    def expected_logdet(self) -> float:
        m = self.scale.shape[0]
        dig = sum(digamma((self.dof + 1 - i) / 2.0) for i in range(1, m + 1))
        sign, logdet = np.linalg.slogdet(self.scale)
        return float(dig + m * np.log(2.0) + logdet)


# ---------------------------------------------------------------------------
# subspace helpers (arrays of modes, shape (M, *dims, d))


def reconstruct(modes: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Velocity encoded by latent coordinates: ``W z``."""
    return np.tensordot(z, modes, axes=1)


def gram_matrix(modes: np.ndarray, kern: SpectralKernel) -> np.ndarray:
    """Metric Gram matrix ``W^T L W`` of the mode fields."""
    m = modes.shape[0]
    l_modes = np.stack([kern.apply_l(modes[i]) for i in range(m)])
    gram = modes.reshape(m, -1) @ l_modes.reshape(m, -1).T
    return 0.5 * (gram + gram.T)


def project_modes(modes: np.ndarray, field_: np.ndarray) -> np.ndarray:
    """Mode-space projection ``W^T x`` of a velocity-shaped field."""
    return modes.reshape(modes.shape[0], -1) @ field_.ravel()


# ---------------------------------------------------------------------------
# data-term evaluation shared by all Gauss-Newton updates


@dataclass
class SubjectEval:
    """Shooting result and data-term derivatives at one velocity."""

    velocity: np.ndarray
    shoot: ShootingResult
    derivs: DataTermDerivs

    @property
    def energy(self) -> float:
        return self.derivs.energy


def evaluate_subject(f: np.ndarray, a: np.ndarray, v: np.ndarray,
                     kern: SpectralKernel, steps: int,
                     grad_a: np.ndarray | None = None) -> SubjectEval:
    """Shoot a velocity and differentiate the data term there."""
    result = shoot(v, kern, steps)
    derivs = data_derivs(f, a, result, grad_a=grad_a)
    return SubjectEval(velocity=v, shoot=result, derivs=derivs)


def _energy_only(f, a, v, kern, steps):
    result = shoot(v, kern, steps)
    mu = warp_template(a, result.inverse)
    return data_energy(f, mu)


def latent_hessian_data(modes: np.ndarray, hess_v: np.ndarray) -> np.ndarray:
    """Latent-space data Hessian ``W^T H_v W`` from voxelwise blocks."""
    m = modes.shape[0]
    h_modes = np.einsum("...ab,n...b->n...a", hess_v, modes)
    out = modes.reshape(m, -1) @ h_modes.reshape(m, -1).T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# per-subject Gauss-Newton updates


def update_latent(f, a, modes, latent: LatentPosterior, r_mean, precision_mean,
                  weights: MixtureWeights, kern: SpectralKernel, steps: int,
                  gram: np.ndarray | None = None,
                  grad_a: np.ndarray | None = None,
                  eval_start: SubjectEval | None = None,
                  n_steps: int = 1, max_backtracks: int = 6):
    """Gauss-Newton update of one subject's latent-coordinate posterior.

    Minimises the data term plus ``0.5 z^T (g1 A + g2 W^T L W) z +
    g2 z^T W^T L r``; the posterior covariance is the inverse curvature
    (data Hessian plus prior precision) at the accepted mode.

    Returns ``(LatentPosterior, SubjectEval)`` with the evaluation at the
    accepted point, reusable by the caller.
    """
    g1, g2 = weights.gamma1, weights.gamma2
    if gram is None:
        gram = gram_matrix(modes, kern)
    prior_prec = g1 * precision_mean + g2 * gram
    w_l_r = g2 * project_modes(modes, kern.apply_l(r_mean))

    z = latent.mean.copy()
    ev = eval_start
    if ev is None:
        ev = evaluate_subject(f, a, reconstruct(modes, z) + r_mean, kern, steps, grad_a)
    obj = ev.energy + 0.5 * z @ prior_prec @ z + z @ w_l_r

    for _ in range(n_steps):
        grad = project_modes(modes, ev.derivs.grad_v) + prior_prec @ z + w_l_r
        h_data = latent_hessian_data(modes, ev.derivs.hess_v)
        try:
            delta = -np.linalg.solve(h_data + prior_prec, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("degenerate latent system; re-orthogonalise") from exc
        # keep the first trial within the quadratic model's validity: no
        # more than half a voxel of velocity change per step
        vel_change = float(np.abs(reconstruct(modes, delta)).max())
        step = min(1.0, 0.5 / max(vel_change, 1e-12))
        accepted = False
        for _ in range(max_backtracks + 1):
            z_try = z + step * delta
            v_try = reconstruct(modes, z_try) + r_mean
            e_try = _energy_only(f, a, v_try, kern, steps)
            obj_try = e_try + 0.5 * z_try @ prior_prec @ z_try + z_try @ w_l_r
            if obj_try < obj:
                z, obj, accepted = z_try, obj_try, True
                ev = evaluate_subject(f, a, v_try, kern, steps, grad_a)
                break
            step *= 0.5
        if not accepted:
            break

    h_data = latent_hessian_data(modes, ev.derivs.hess_v)
    precision = h_data + prior_prec
    try:
        cov = np.linalg.inv(precision)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("latent posterior precision not invertible") from exc
    cov = 0.5 * (cov + cov.T)
    return LatentPosterior(mean=z, cov=cov), ev


def residual_uncertainty_diag(hess_v: np.ndarray, prior_scale: float,
                              kern: SpectralKernel) -> np.ndarray:
    """Diagonal of the inverted voxelwise residual curvature blocks.

    Blocks are the data Hessian plus ``prior_scale`` times the diagonal of
    the metric stencil's centre tap.
    """
    d = hess_v.shape[-1]
    blocks = hess_v.copy()
    centre_diag = np.diag(kern.centre)
    idx = np.arange(d)
    blocks[..., idx, idx] += prior_scale * centre_diag
    inv = np.linalg.inv(blocks)
    return inv[..., idx, idx]


def update_residual(f, a, modes, z_mean, residual: ResidualPosterior, lam_mean,
                    weights: MixtureWeights, kern: SpectralKernel, steps: int,
                    grad_a=None, eval_start: SubjectEval | None = None,
                    uncertainty: str = "diagonal",
                    pcg_tol: float = 1e-6, pcg_max_iter: int = 64,
                    n_steps: int = 1, max_backtracks: int = 6):
    """Gauss-Newton update of one subject's residual-field posterior.

    The linear system ``(H_v + c L) delta = -g`` with ``c = g1 lam + g2`` is
    solved by conjugate gradients preconditioned with the shifted spectral
    inverse of the metric operator.

    Returns ``(ResidualPosterior, SubjectEval)``.
    """
    g1, g2 = weights.gamma1, weights.gamma2
    c = g1 * lam_mean + g2
    wz = reconstruct(modes, z_mean)
    l_wz = kern.apply_l(wz)

    r = residual.mean.copy()
    ev = eval_start
    if ev is None:
        ev = evaluate_subject(f, a, wz + r, kern, steps, grad_a)
    l_r = kern.apply_l(r)
    obj = ev.energy + 0.5 * c * np.sum(r * l_r) + g2 * np.sum(r * l_wz)

    rel_res = 0.0
    for _ in range(n_steps):
        grad = ev.derivs.grad_v + c * l_r + g2 * l_wz
        hess_v = ev.derivs.hess_v
        # mean data curvature per channel stabilises the spectral preconditioner
        h_bar = np.einsum("...aa->...a", hess_v).reshape(-1, hess_v.shape[-1]).mean(axis=0)
        pre_mats = kern.shifted_inverse(scale=c, shift=h_bar)

        def apply_a(x):
            return np.einsum("...ab,...b->...a", hess_v, x) + c * kern.apply_l(x)

        def precond(x):
            axes = tuple(range(kern.ndim))
            xhat = np.fft.fftn(x, axes=axes)
            yhat = np.einsum("...ab,...b->...a", pre_mats, xhat)
            return np.fft.ifftn(yhat, axes=axes).real

        delta, rel_res, n_it, converged = pcg(
            apply_a, -grad, precond, tol=pcg_tol, max_iter=pcg_max_iter
        )
        # an inexact solve still yields a descent direction that the line
        # search can use; only a genuinely stalled solve is an error
        if not converged and rel_res > 1e-2:
            raise SolverNotConverged(
                f"residual solve stalled at relative residual {rel_res:.3e} "
                f"after {n_it} iterations",
                residual=rel_res,
            )
        step = 1.0
        accepted = False
        for _ in range(max_backtracks + 1):
            r_try = r + step * delta
            e_try = _energy_only(f, a, wz + r_try, kern, steps)
            l_r_try = kern.apply_l(r_try)
            obj_try = (e_try + 0.5 * c * np.sum(r_try * l_r_try)
                       + g2 * np.sum(r_try * l_wz))
            if obj_try < obj:
                r, l_r, obj, accepted = r_try, l_r_try, obj_try, True
                ev = evaluate_subject(f, a, wz + r, kern, steps, grad_a)
                break
            step *= 0.5
        if not accepted:
            break

    prior_energy = float(np.sum(r * l_r))
    if uncertainty == "diagonal":
        s_diag = residual_uncertainty_diag(ev.derivs.hess_v, c, kern)
        trace_term = float(np.sum(s_diag * np.diag(kern.centre)))
        post = ResidualPosterior(mean=r, uncertainty=s_diag,
                                 expected_prior_energy=prior_energy + trace_term)
    else:
        post = ResidualPosterior(mean=r, uncertainty=None,
                                 expected_prior_energy=prior_energy)
    return post, ev


# ---------------------------------------------------------------------------
# conjugate global updates


def update_noise_precision(post: NoisePrecisionPosterior, residuals,
                           weights: MixtureWeights, n_field: int) -> NoisePrecisionPosterior:
    """Gamma posterior over the residual precision from all subjects.

    ``n_field`` is the number of scalar degrees of freedom of one residual
    field (spatial dimension times voxel count).
    """
    g1 = weights.gamma1
    n = len(residuals)
    alpha = post.nu0 * n_field / 2.0 + g1 * n * n_field / 2.0
    beta = post.nu0 * n_field / (2.0 * post.lambda0) + 0.5 * g1 * sum(
        r.expected_prior_energy for r in residuals
    )
    return NoisePrecisionPosterior(alpha=alpha, beta=beta,
                                   lambda0=post.lambda0, nu0=post.nu0)


def update_latent_precision(latents, weights: MixtureWeights,
                            n_modes: int) -> LatentPrecisionPosterior:
    """Wishart posterior over the latent precision matrix."""
    g1 = weights.gamma1
    moment = sum((lp.second_moment() for lp in latents),
                 start=np.zeros((n_modes, n_modes)))
    dof = n_modes + g1 * len(latents)
    scale = np.linalg.inv(n_modes * np.eye(n_modes) + g1 * moment)
    scale = 0.5 * (scale + scale.T)
    return LatentPrecisionPosterior(scale=scale, dof=dof)


# ---------------------------------------------------------------------------
# divergences and the variational objective


def gamma_kl(q: NoisePrecisionPosterior, alpha0: float, beta0: float) -> float:
    """KL divergence between two Gamma densities (shape/rate)."""
    a_q, b_q = q.alpha, q.beta
    return float(
        (a_q - alpha0) * digamma(a_q) - gammaln(a_q) + gammaln(alpha0)
        + alpha0 * (np.log(b_q) - np.log(beta0)) + a_q * (beta0 - b_q) / b_q
    )


def wishart_kl(q: LatentPrecisionPosterior, scale0: np.ndarray, dof0: float) -> float:
    """KL divergence between two Wishart densities."""
    m = q.scale.shape[0]
    e_logdet = q.expected_logdet

    def log_norm(scale, dof):
        sign, logdet = np.linalg.slogdet(scale)
        return -0.5 * dof * logdet - 0.5 * dof * m * np.log(2.0) - multigammaln(dof / 2.0, m)

    trace = float(np.trace(np.linalg.solve(scale0, q.scale))) * q.dof
    return float(
        0.5 * (q.dof - dof0) * e_logdet - 0.5 * q.dof * m + 0.5 * trace
        + log_norm(q.scale, q.dof) - log_norm(scale0, dof0)
    )


@dataclass
class ModelState:
    """Everything the outer loop owns, bundled for bound evaluation."""

    template: np.ndarray                 # (*dims, K) log-odds
    modes: np.ndarray                    # (M, *dims, d)
    latents: list                        # LatentPosterior per subject
    residuals: list                      # ResidualPosterior per subject
    noise: NoisePrecisionPosterior
    latent_precision: LatentPrecisionPosterior
    weights: MixtureWeights
    kern: SpectralKernel
    steps: int
    dirichlet_eps: float = 1e-3


def lower_bound(state: ModelState, images, evals=None) -> float:
    """Variational objective of the current state (monitoring quantity).

    Data terms are plugged in at the Laplace modes (the same approximation
    every Gauss-Newton update descends on), prior cross terms carry the
    Gaussian expectations that the conjugate updates are exact for, and the
    Gamma/Wishart factors contribute their divergences from the priors.
    Non-decreasing across outer iterations up to the Laplace/Gauss-Newton
    approximations.
    """
    g1, g2 = state.weights.gamma1, state.weights.gamma2
    kern = state.kern
    d = kern.ndim
    n_field = d * kern.lattice.n_voxels
    n_modes = state.modes.shape[0]
    gram = gram_matrix(state.modes, kern)
    a_mean = state.latent_precision.mean
    lam_mean = state.noise.mean
    e_logdet_a = state.latent_precision.expected_logdet
    e_log_lam = state.noise.expected_log
    grad_a = spatial_gradient(state.template, kern.lattice.voxel_size, channel_axes=1)

    bound = 0.0
    for n, f in enumerate(images):
        zp, rp = state.latents[n], state.residuals[n]
        v = reconstruct(state.modes, zp.mean) + rp.mean
        if evals is not None and evals[n] is not None and np.array_equal(evals[n].velocity, v):
            ev = evals[n]
        else:
            ev = evaluate_subject(f, state.template, v, kern, state.steps, grad_a)
        # plug-in data term at the posterior modes
        bound -= ev.energy
        # factored prior on latent coordinates
        ezz = zp.second_moment()
        bound += 0.5 * g1 * (e_logdet_a - float(np.sum(a_mean * ezz))
                             - n_modes * LOG_2PI)
        # factored prior on the residual field (expected energy includes the
        # diagonal-uncertainty trace when that approximation is kept)
        bound += 0.5 * g1 * (n_field * e_log_lam + kern.logdet
                             - lam_mean * rp.expected_prior_energy
                             - n_field * LOG_2PI)
        # whole-velocity prior
        recon_energy = kern.inner(v, v) + float(np.sum(gram * zp.cov))
        bound += 0.5 * g2 * (kern.logdet - recon_energy - n_field * LOG_2PI)
        # latent Gaussian entropy
        sign, logdet_sz = np.linalg.slogdet(zp.cov)
        bound += 0.5 * logdet_sz + 0.5 * n_modes * (1.0 + LOG_2PI)

    # prior on the principal subspace
    bound += 0.5 * g1 * (n_modes * kern.logdet - float(np.trace(gram))
                         - n_modes * n_field * LOG_2PI)
    # log-Dirichlet template prior
    bound += state.dirichlet_eps * float(np.sum(np.log(softmax(state.template))))
    # conjugate-factor divergences
    alpha0 = state.noise.nu0 * n_field / 2.0
    beta0 = state.noise.nu0 * n_field / (2.0 * state.noise.lambda0)
    bound -= gamma_kl(state.noise, alpha0, beta0)
    bound -= wishart_kl(state.latent_precision,
                        np.eye(n_modes) / n_modes, float(n_modes))
    return float(bound)
