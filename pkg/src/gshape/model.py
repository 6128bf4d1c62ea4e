"""Population shape model with a scikit-learn style estimator surface.

``ShapeModel.fit`` learns, from a stack of categorical images on one
lattice, a probabilistic template, a low-dimensional principal subspace of
initial velocity fields and an explicit residual ("anatomical noise") field
per subject, together with posteriors over the residual precision and the
latent precision matrix.  ``transform`` registers images under the frozen
model and returns their latent coordinates; ``score_samples`` returns their
categorical log-likelihoods.

One outer iteration updates, in turn: every subject's latent/residual
posteriors (parallelisable, order-independent reductions), the noise
precision, the latent precision, the subspace, the template, and finally the
orthogonalisation/rescaling of the latent basis.  The variational objective
is recorded once per iteration and drives the stopping rule.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import fileio
from .config import PipelineConfig
from .errors import DataError, NonFiniteState
from .inference import (
    LatentPosterior,
    LatentPrecisionPosterior,
    MixtureWeights,
    ModelState,
    NoisePrecisionPosterior,
    ResidualPosterior,
    evaluate_subject,
    gram_matrix,
    lower_bound,
    reconstruct,
    residual_uncertainty_diag,
    update_latent,
    update_latent_precision,
    update_noise_precision,
    update_residual,
)
from .interp import spatial_gradient
from .lattice import Lattice, check_categorical
from .metric import MetricParams, build_kernel
from .subspace import orthogonalise, rescale, sort_modes, update_subspace
from .template import log_odds_from_probabilities, update_template
from .errors import SingularSystem


@dataclass
class RegistrationResult:
    """Frozen-model fit of one image."""

    latent: LatentPosterior
    residual: ResidualPosterior
    log_likelihood: float
    rounds: int


class ShapeModel(BaseEstimator):
    """Generative diffeomorphic shape model over categorical images.

    Parameters
    ----------
    n_modes : int
        Number of principal velocity modes.
    membrane, bending, elastic_div, elastic_shear, absolute : float
        Weights of the metric operator's energy terms.
    gamma1, gamma2 : float
        Mixture weights of the factored prior (explicit latent covariance
        and noise precision) and of the whole-velocity smoothness prior.
    lambda0, nu0 : float
        Prior mean and strength of the residual ("anatomical noise")
        precision.
    dirichlet_eps : float
        Pseudo-counts of the template's log-Dirichlet prior.
    shoot_steps : int
        Euler steps of the geodesic integrator.
    outer_iterations : int
        Total outer-iteration budget (a warm-started fit continues up to
        this count).
    tolerance : float
        Relative change of the variational objective that stops training.
    subject_rounds : int
        Latent/residual Gauss-Newton alternations per subject per iteration.
    register_rounds : int
        Alternation cap when registering unseen images.
    pcg_tolerance, pcg_max_iterations : float, int
        Conjugate-gradient settings of the field-space solves.
    residual_uncertainty : {"diagonal", "none"}
        Keep a diagonal posterior-variance field for the residual (used for
        the precision update's trace correction) or a point estimate only.
    voxel_size : tuple or None
        Physical voxel size (isotropic 1 if omitted).
    seed : int
        Seed of the deterministic initialisation.
    workers : int
        Thread count of the per-subject phase; results do not depend on it.
    warm_start : bool
        Continue from the current fitted state instead of reinitialising.
    verbose : int
        Print one line per outer iteration when positive.
    """

    def __init__(self, n_modes=32, membrane=0.001, bending=0.02,
                 elastic_div=0.0025, elastic_shear=0.005, absolute=1e-4,
                 gamma1=1.0, gamma2=1.0, lambda0=17.0, nu0=10.0,
                 dirichlet_eps=1e-3, shoot_steps=8, outer_iterations=32,
                 tolerance=1e-6, subject_rounds=2, register_rounds=16,
                 pcg_tolerance=1e-6, pcg_max_iterations=64,
                 residual_uncertainty="diagonal", voxel_size=None, seed=0,
                 workers=1, warm_start=False, verbose=0):
        self.n_modes = n_modes
        self.membrane = membrane
        self.bending = bending
        self.elastic_div = elastic_div
        self.elastic_shear = elastic_shear
        self.absolute = absolute
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.lambda0 = lambda0
        self.nu0 = nu0
        self.dirichlet_eps = dirichlet_eps
        self.shoot_steps = shoot_steps
        self.outer_iterations = outer_iterations
        self.tolerance = tolerance
        self.subject_rounds = subject_rounds
        self.register_rounds = register_rounds
        self.pcg_tolerance = pcg_tolerance
        self.pcg_max_iterations = pcg_max_iterations
        self.residual_uncertainty = residual_uncertainty
        self.voxel_size = voxel_size
        self.seed = seed
        self.workers = workers
        self.warm_start = warm_start
        self.verbose = verbose

    @classmethod
    def from_config(cls, cfg: PipelineConfig, workers=None, seed=None):
        return cls(
            n_modes=cfg.modes, membrane=cfg.membrane, bending=cfg.bending,
            elastic_div=cfg.elastic_div, elastic_shear=cfg.elastic_shear,
            absolute=cfg.absolute, gamma1=cfg.gamma1, gamma2=cfg.gamma2,
            lambda0=cfg.lambda0, nu0=cfg.nu0, dirichlet_eps=cfg.dirichlet_eps,
            shoot_steps=cfg.steps, outer_iterations=cfg.outer_iterations,
            tolerance=cfg.tolerance, subject_rounds=cfg.subject_rounds,
            register_rounds=cfg.register_rounds,
            pcg_tolerance=cfg.pcg_tolerance,
            pcg_max_iterations=cfg.pcg_max_iterations,
            residual_uncertainty=cfg.residual_uncertainty,
            voxel_size=cfg.voxel_size or None,
            seed=cfg.seed if seed is None else seed,
            workers=cfg.workers if workers is None else workers,
        )

    # ------------------------------------------------------------------
    # plumbing

    def _weights(self) -> MixtureWeights:
        return MixtureWeights(self.gamma1, self.gamma2)

    def _metric_params(self) -> MetricParams:
        return MetricParams(membrane=self.membrane, bending=self.bending,
                            elastic=(self.elastic_div, self.elastic_shear),
                            absolute=self.absolute)

    def _validate_images(self, X, fitted=False):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim < 4:
            raise DataError(
                "expected a stack of categorical images shaped "
                "(n_subjects, *dims, n_classes)"
            )
        images = [X[i] for i in range(X.shape[0])]
        k = check_categorical(images[0])
        lattice = Lattice(images[0].shape[:-1],
                          self.voxel_size or ())
        for f in images[1:]:
            check_categorical(f, n_classes=k)
            if f.shape != images[0].shape:
                raise DataError("all images must live on one lattice")
        if fitted:
            if lattice.dims != self.lattice_.dims:
                raise DataError("image lattice does not match the fitted model")
            if k != self.n_classes_:
                raise DataError("class count does not match the fitted model")
        return images, lattice, k

    @property
    def _n_field(self) -> int:
        return self.lattice_.ndim * self.lattice_.n_voxels

    def _initialise(self, images, lattice, k):
        rng = np.random.default_rng(self.seed)
        self.lattice_ = lattice
        self.n_classes_ = k
        self.kern_ = build_kernel(lattice, self._metric_params())
        m = self.n_modes
        d = lattice.ndim
        g1, g2 = self.gamma1, self.gamma2

        mean_image = np.mean(images, axis=0)
        self.template_ = log_odds_from_probabilities(mean_image,
                                                     floor=self.dirichlet_eps)

        # warm start: register every subject to the initial template with a
        # residual field alone, then seed the subspace with the leading
        # metric-space principal directions of those fields (random smooth
        # fields take over where the population rank runs out)
        fields = self._warmup_fields(images)
        raw = []
        if fields is not None:
            n = len(fields)
            flat = np.stack([f.ravel() for f in fields])
            l_flat = np.stack([self.kern_.apply_l(f).ravel() for f in fields])
            cross = flat @ l_flat.T
            cross = 0.5 * (cross + cross.T)
            eigval, eigvec = np.linalg.eigh(cross)
            order = np.argsort(eigval)[::-1]
            for j in order[: min(m, n)]:
                if eigval[j] <= 1e-10 * max(eigval.max(), 1e-300):
                    break
                combo = np.tensordot(eigvec[:, j], np.stack(fields), axes=1)
                raw.append(combo)
        while len(raw) < m:
            raw.append(self.kern_.apply_k(
                rng.standard_normal((*lattice.dims, d))))
        dummy = [LatentPosterior(np.zeros(m), np.eye(m))]
        self.modes_, _, _ = orthogonalise(np.stack(raw), dummy, self.kern_)

        gram = gram_matrix(self.modes_, self.kern_)
        cov0 = np.linalg.inv(g1 * np.eye(m) + g2 * gram)
        c0 = g1 * self.lambda0 + g2
        zero_hess = np.zeros((*lattice.dims, d, d))
        if self.residual_uncertainty == "diagonal":
            s0 = residual_uncertainty_diag(zero_hess, c0, self.kern_)
            epe0 = float(np.sum(s0 * np.diag(self.kern_.centre)))
        else:
            s0, epe0 = None, 0.0
        self.latents_, self.residuals_ = [], []
        for i in range(len(images)):
            if fields is not None:
                # project the warm-start field onto the modes; the metric
                # Gram is the identity right after orthogonalisation
                z0 = np.linalg.solve(
                    gram, self.modes_.reshape(m, -1)
                    @ self.kern_.apply_l(fields[i]).ravel())
                r0 = fields[i] - np.tensordot(z0, self.modes_, axes=1)
            else:
                z0 = np.zeros(m)
                r0 = np.zeros((*lattice.dims, d))
            self.latents_.append(LatentPosterior(z0, cov0.copy()))
            self.residuals_.append(ResidualPosterior(
                r0, None if s0 is None else s0.copy(),
                epe0 + self.kern_.inner(r0, r0)))
        self.noise_precision_ = NoisePrecisionPosterior.from_prior(
            self.lambda0, self.nu0, self._n_field)
        self.latent_precision_ = LatentPrecisionPosterior.from_prior(m)
        self.lower_bounds_ = []
        self.n_iter_ = 0

    def _warmup_fields(self, images, passes: int = 2):
        """Residual-only registration of every subject to the mean template.

        A second pass re-registers against the template re-estimated from
        the first-pass warps, which sharpens the fields the subspace is
        seeded from.
        """
        d = self.lattice_.ndim
        weights = self._weights()
        dummy_modes = np.zeros((1, *self.lattice_.dims, d))
        fields = [np.zeros((*self.lattice_.dims, d)) for _ in images]
        shoots = [None] * len(images)

        for pass_no in range(passes):
            grad_a = spatial_gradient(self.template_,
                                      self.lattice_.voxel_size, channel_axes=1)

            def work(item):
                f, field = item
                post = ResidualPosterior(field.copy(), None, 0.0)
                post, ev = update_residual(
                    f, self.template_, dummy_modes, np.zeros(1), post,
                    self.lambda0, weights, self.kern_, self.shoot_steps,
                    grad_a=grad_a, uncertainty="none", n_steps=6,
                    pcg_tol=self.pcg_tolerance,
                    pcg_max_iter=self.pcg_max_iterations)
                return post.mean, ev.shoot

            items = list(zip(images, fields))
            if self.workers and self.workers > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    results = list(pool.map(work, items))
            else:
                results = [work(item) for item in items]
            fields = [mean for mean, _ in results]
            shoots = [sh for _, sh in results]
            if pass_no + 1 < passes:
                self.template_, _ = update_template(
                    self.template_,
                    list(zip(images, shoots)), self.dirichlet_eps)
        return fields

    def _subject_pass(self, images, gram, grad_a):
        """Update every subject's posteriors against the global snapshot."""
        weights = self._weights()
        a_mean = self.latent_precision_.mean
        lam_mean = self.noise_precision_.mean

        def work(n):
            latent = self.latents_[n]
            residual = self.residuals_[n]
            ev = None
            for _ in range(self.subject_rounds):
                latent, ev = update_latent(
                    images[n], self.template_, self.modes_, latent,
                    residual.mean, a_mean, weights, self.kern_,
                    self.shoot_steps, gram=gram, grad_a=grad_a,
                    eval_start=ev)
                residual, ev = update_residual(
                    images[n], self.template_, self.modes_, latent.mean,
                    residual, lam_mean, weights, self.kern_,
                    self.shoot_steps, grad_a=grad_a, eval_start=ev,
                    uncertainty=self.residual_uncertainty,
                    pcg_tol=self.pcg_tolerance,
                    pcg_max_iter=self.pcg_max_iterations)
            return latent, residual, ev

        indices = range(len(images))
        if self.workers and self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(work, indices))
        else:
            results = [work(n) for n in indices]
        # write back in subject order so reductions are worker-independent
        for n, (latent, residual, ev) in enumerate(results):
            self.latents_[n] = latent
            self.residuals_[n] = residual
        return [ev for (_, _, ev) in results]

    def _orthogonalise_rescale(self):
        weights = self._weights()
        for attempt in range(2):
            try:
                self.modes_, transform, self.latents_ = orthogonalise(
                    self.modes_, self.latents_, self.kern_)
                break
            except SingularSystem:
                if attempt:
                    raise
                self._reinitialise_collapsed_modes()
        self.modes_, q, self.latents_, self.latent_precision_ = rescale(
            self.modes_, self.latents_, weights, self.kern_)
        self.modes_, self.latents_, self.latent_precision_ = sort_modes(
            self.modes_, self.latents_, self.latent_precision_)

    def _reinitialise_collapsed_modes(self):
        """Replace numerically collapsed modes with faint smooth noise."""
        gram = gram_matrix(self.modes_, self.kern_)
        diag = np.diag(gram)
        top = float(diag.max())
        rng = np.random.default_rng((self.seed, self.n_iter_, 7))
        for i in np.where(diag <= 1e-12 * max(top, 1e-300))[0]:
            noise = self.kern_.apply_k(
                rng.standard_normal((*self.lattice_.dims, self.lattice_.ndim)))
            norm = np.sqrt(self.kern_.inner(noise, noise))
            self.modes_[i] = noise * (1e-3 * np.sqrt(top) / max(norm, 1e-300))

    # ------------------------------------------------------------------
    # estimator surface

    def fit(self, X, y=None):
        """Learn template, subspace and posteriors from a population.

        ``X`` is an array of shape (n_subjects, *dims, n_classes) holding
        per-voxel class responsibilities (all-zero voxels encode missing
        data).  At least two subjects are required.
        """
        images, lattice, k = self._validate_images(X)
        if len(images) < 2:
            raise DataError("training needs at least two images")
        resuming = self.warm_start and hasattr(self, "template_")
        if resuming:
            if lattice.dims != self.lattice_.dims or k != self.n_classes_:
                raise DataError("warm start with incompatible data")
        else:
            self._initialise(images, lattice, k)

        weights = self._weights()
        while self.n_iter_ < self.outer_iterations:
            gram = gram_matrix(self.modes_, self.kern_)
            grad_a = spatial_gradient(self.template_,
                                      self.lattice_.voxel_size, channel_axes=1)
            evals = self._subject_pass(images, gram, grad_a)
            self.noise_precision_ = update_noise_precision(
                self.noise_precision_, self.residuals_, weights, self._n_field)
            self.latent_precision_ = update_latent_precision(
                self.latents_, weights, self.n_modes)
            self.modes_, evals = update_subspace(
                self.modes_, images, self.template_, self.latents_,
                self.residuals_, weights, self.kern_, self.shoot_steps,
                evals=evals, grad_a=grad_a, pcg_tol=self.pcg_tolerance,
                pcg_max_iter=self.pcg_max_iterations)
            self.template_, _ = update_template(
                self.template_,
                [(images[n], evals[n].shoot) for n in range(len(images))],
                self.dirichlet_eps)
            if not np.all(np.isfinite(self.template_)):
                raise NonFiniteState("template diverged")

            state = ModelState(
                template=self.template_, modes=self.modes_,
                latents=self.latents_, residuals=self.residuals_,
                noise=self.noise_precision_,
                latent_precision=self.latent_precision_,
                weights=weights, kern=self.kern_, steps=self.shoot_steps,
                dirichlet_eps=self.dirichlet_eps)
            bound = lower_bound(state, images)
            self.lower_bounds_.append(bound)
            self.n_iter_ += 1
            if self.verbose:
                print(f"[iter {self.n_iter_:3d}] bound {bound:.6f} "
                      f"lambda {self.noise_precision_.mean:.3f}")
            if len(self.lower_bounds_) >= 2:
                prev = self.lower_bounds_[-2]
                if abs(bound - prev) <= self.tolerance * max(1.0, abs(bound)):
                    break
            self._orthogonalise_rescale()
        return self

    def register(self, f, init=None, rounds=None, gram=None, grad_a=None):
        """Fit one image under the frozen model; template and subspace stay
        fixed and only the subject posteriors are inferred.

        ``init`` may carry a ``(LatentPosterior, ResidualPosterior)`` pair to
        warm-start (e.g. a training subject's converged posteriors).
        """
        self._check_fitted()
        check_categorical(f, n_classes=self.n_classes_)
        if f.shape[:-1] != self.lattice_.dims:
            raise DataError("image lattice does not match the fitted model")
        weights = self._weights()
        if gram is None:
            gram = gram_matrix(self.modes_, self.kern_)
        if grad_a is None:
            grad_a = spatial_gradient(self.template_,
                                      self.lattice_.voxel_size, channel_axes=1)
        m = self.n_modes
        d = self.lattice_.ndim
        a_mean = self.latent_precision_.mean
        lam_mean = self.noise_precision_.mean
        if init is not None:
            latent, residual = init
        else:
            cov0 = np.linalg.inv(self.gamma1 * a_mean + self.gamma2 * gram)
            latent = LatentPosterior(np.zeros(m), cov0)
            c0 = self.gamma1 * lam_mean + self.gamma2
            zero_hess = np.zeros((*self.lattice_.dims, d, d))
            if self.residual_uncertainty == "diagonal":
                s0 = residual_uncertainty_diag(zero_hess, c0, self.kern_)
                epe0 = float(np.sum(s0 * np.diag(self.kern_.centre)))
            else:
                s0, epe0 = None, 0.0
            residual = ResidualPosterior(
                np.zeros((*self.lattice_.dims, d)), s0, epe0)

        rounds = rounds or self.register_rounds
        ev = None
        objective = np.inf
        done = 0
        for it in range(rounds):
            latent, ev = update_latent(
                f, self.template_, self.modes_, latent, residual.mean,
                a_mean, weights, self.kern_, self.shoot_steps, gram=gram,
                grad_a=grad_a, eval_start=ev)
            residual, ev = update_residual(
                f, self.template_, self.modes_, latent.mean, residual,
                lam_mean, weights, self.kern_, self.shoot_steps,
                grad_a=grad_a, eval_start=ev,
                uncertainty=self.residual_uncertainty,
                pcg_tol=self.pcg_tolerance,
                pcg_max_iter=self.pcg_max_iterations)
            done = it + 1
            new_obj = self._subject_objective(latent, residual, ev, gram)
            if objective - new_obj <= self.tolerance * max(1.0, abs(new_obj)):
                objective = new_obj
                break
            objective = new_obj
        return RegistrationResult(latent=latent, residual=residual,
                                  log_likelihood=-ev.energy, rounds=done)

    def _subject_objective(self, latent, residual, ev, gram):
        g1, g2 = self.gamma1, self.gamma2
        z, r = latent.mean, residual.mean
        l_r = self.kern_.apply_l(r)
        wz = reconstruct(self.modes_, z)
        return float(
            ev.energy
            + 0.5 * g1 * z @ self.latent_precision_.mean @ z
            + 0.5 * g1 * self.noise_precision_.mean * np.sum(r * l_r)
            + 0.5 * g2 * self.kern_.inner(wz + r, wz + r)
        )

    def transform(self, X) -> np.ndarray:
        """Latent coordinates of images under the frozen model, (N, M)."""
        self._check_fitted()
        images, _, _ = self._validate_images(X, fitted=True)
        gram = gram_matrix(self.modes_, self.kern_)
        grad_a = spatial_gradient(self.template_, self.lattice_.voxel_size,
                                  channel_axes=1)
        out = [self.register(f, gram=gram, grad_a=grad_a).latent.mean
               for f in images]
        return np.stack(out)

    def fit_transform(self, X, y=None) -> np.ndarray:
        """Fit, then return the training subjects' latent means."""
        self.fit(X)
        return np.stack([lp.mean for lp in self.latents_])

    def score_samples(self, X) -> np.ndarray:
        """Categorical log-likelihood of each image under the frozen model."""
        self._check_fitted()
        images, _, _ = self._validate_images(X, fitted=True)
        gram = gram_matrix(self.modes_, self.kern_)
        grad_a = spatial_gradient(self.template_, self.lattice_.voxel_size,
                                  channel_axes=1)
        return np.asarray([
            self.register(f, gram=gram, grad_a=grad_a).log_likelihood
            for f in images
        ])

    def score(self, X, y=None) -> float:
        return float(self.score_samples(X).mean())

    def training_log_likelihoods(self, X) -> np.ndarray:
        """Data log-likelihood of training images at their stored posteriors."""
        self._check_fitted()
        images, _, _ = self._validate_images(X, fitted=True)
        out = []
        for n, f in enumerate(images):
            v = reconstruct(self.modes_, self.latents_[n].mean) \
                + self.residuals_[n].mean
            ev = evaluate_subject(f, self.template_, v, self.kern_,
                                  self.shoot_steps)
            out.append(-ev.energy)
        return np.asarray(out)

    def _check_fitted(self):
        if not hasattr(self, "template_"):
            raise DataError("model is not fitted")

    # ------------------------------------------------------------------
    # persistence

    def save(self, path):
        """Write a checkpoint that round-trips the full training state."""
        self._check_fitted()
        n = len(self.latents_)
        arrays = {
            "template": self.template_,
            "modes": self.modes_,
            "latent_mean": np.stack([lp.mean for lp in self.latents_]),
            "latent_cov": np.stack([lp.cov for lp in self.latents_]),
            "residual_mean": np.stack([rp.mean for rp in self.residuals_]),
            "residual_energy": np.asarray(
                [rp.expected_prior_energy for rp in self.residuals_]),
            "noise_alpha_beta": np.asarray(
                [self.noise_precision_.alpha, self.noise_precision_.beta]),
            "latent_precision_scale": self.latent_precision_.scale,
            "latent_precision_dof": np.asarray(self.latent_precision_.dof),
            "lower_bounds": np.asarray(self.lower_bounds_),
        }
        if self.residual_uncertainty == "diagonal":
            arrays["residual_uncertainty"] = np.stack(
                [rp.uncertainty for rp in self.residuals_])
        params = {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in self.get_params().items()}
        # execution-only knobs are not model state; a checkpoint must not
        # depend on how many workers produced it
        for key in ("workers", "verbose", "warm_start"):
            params.pop(key, None)
        meta = {
            "params": params,
            "dims": list(self.lattice_.dims),
            "voxel_size": list(self.lattice_.voxel_size),
            "n_classes": int(self.n_classes_),
            "n_subjects": int(n),
            "n_iter": int(self.n_iter_),
        }
        fileio.save_container(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "ShapeModel":
        arrays, meta = fileio.load_container(path)
        params = dict(meta["params"])
        if params.get("voxel_size"):
            params["voxel_size"] = tuple(params["voxel_size"])
        model = cls(**params)
        model.lattice_ = Lattice(tuple(meta["dims"]),
                                 tuple(meta["voxel_size"]))
        model.n_classes_ = int(meta["n_classes"])
        model.kern_ = build_kernel(model.lattice_, model._metric_params())
        model.template_ = arrays["template"]
        model.modes_ = arrays["modes"]
        n = int(meta["n_subjects"])
        model.latents_ = [
            LatentPosterior(arrays["latent_mean"][i], arrays["latent_cov"][i])
            for i in range(n)
        ]
        unc = arrays.get("residual_uncertainty")
        model.residuals_ = [
            ResidualPosterior(
                arrays["residual_mean"][i],
                None if unc is None else unc[i],
                float(arrays["residual_energy"][i]))
            for i in range(n)
        ]
        alpha, beta = arrays["noise_alpha_beta"]
        model.noise_precision_ = NoisePrecisionPosterior(
            alpha=alpha.item(), beta=beta.item(),
            lambda0=model.lambda0, nu0=model.nu0)
        model.latent_precision_ = LatentPrecisionPosterior(
            scale=arrays["latent_precision_scale"],
            dof=arrays["latent_precision_dof"].item())
        model.lower_bounds_ = list(arrays["lower_bounds"])
        model.n_iter_ = int(meta["n_iter"])
        return model
