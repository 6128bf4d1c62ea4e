"""Riemannian metric operator on velocity fields and its Green's function.

The operator is a weighted sum of absolute-displacement, membrane, bending
and linear-elastic (divergence + shear) energies, discretised with standard
second-order stencils under circulant boundaries.  Circulant boundaries make
the operator block-diagonal in Fourier space: one small symmetric positive
definite d-by-d matrix per frequency.  Applying the operator, its inverse,
shifted inverses (for preconditioning) and Gaussian colouring all reduce to
per-frequency matrix products between FFTs.

Conventions: a velocity field ``v`` has shape ``(*dims, d)`` in voxel units;
the energy of the metric is ``0.5 * <v, L v>`` with ``<.,.>`` the plain sum
inner product.  Voxel sizes enter through the difference quotients and
through a per-channel scaling that measures displacement in physical units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularSystem
from .lattice import Lattice, check_same_lattice, field_lattice


@dataclass(frozen=True)
class MetricParams:
    """Weights of the energy terms making up the metric operator.

    ``elastic`` holds the (divergence, shear) pair of linear-elastic weights.
    ``absolute`` is a small zeroth-order penalty that keeps the operator
    strictly positive definite so the Green's function exists.
    """

    membrane: float = 0.001
    bending: float = 0.02
    elastic: tuple = (0.0025, 0.005)
    absolute: float = 1e-4

    def __post_init__(self):
        div, shear = self.elastic
        weights = (self.membrane, self.bending, div, shear, self.absolute)
        if any(w < 0 for w in weights):
            raise ConfigError("metric weights must be nonnegative")
        if all(w == 0 for w in weights):
            raise ConfigError("all metric weights are zero: operator is singular")
        object.__setattr__(self, "elastic", (float(div), float(shear)))


class SpectralKernel:
    """Frequency-domain representation of the metric operator and its inverse.

    Immutable once built; safe to share across concurrent per-subject workers
    (FFT scratch is allocated per call).
    """

    def __init__(self, lattice: Lattice, params: MetricParams):
        self.lattice = lattice
        self.params = params
        d = lattice.ndim
        h = np.asarray(lattice.voxel_size)

        omegas = np.meshgrid(
            *[2.0 * np.pi * np.fft.fftfreq(n) for n in lattice.dims],
            indexing="ij",
        )
        # |forward difference|^2 and side-averaged cross symbols per axis
        s = np.stack([(2.0 - 2.0 * np.cos(w)) / h[a] ** 2
                      for a, w in enumerate(omegas)], axis=-1)
        sn = np.stack([np.sin(w) / h[a] for a, w in enumerate(omegas)], axis=-1)
        s_sum = s.sum(axis=-1)

        div_w, shear_w = params.elastic
        scalar = (params.absolute
                  + params.membrane * s_sum
                  + params.bending * s_sum ** 2)

        lhat = np.zeros((*lattice.dims, d, d))
        for a in range(d):
            lhat[..., a, a] = (scalar
                               + div_w * s[..., a]
                               + shear_w * (s[..., a] + s_sum))
            for b in range(a + 1, d):
                cross = (div_w + shear_w) * sn[..., a] * sn[..., b]
                lhat[..., a, b] = cross
                lhat[..., b, a] = cross
        # measure displacements in physical units: L <- H L H with H = diag(h)
        lhat *= h[:, None] * h[None, :]

        self.lhat = lhat
        eigvals = np.linalg.eigvalsh(lhat)
        self._min_eig = float(eigvals.min())
        if self._min_eig > 0:
            self.khat = np.linalg.inv(lhat)
            self.logdet = float(np.log(eigvals).sum())
        else:
            self.khat = None
            self.logdet = -np.inf
        # centre tap of the matrix-valued stencil (inverse DFT at lag zero)
        self.centre = lhat.mean(axis=tuple(range(d)))

    @property
    def ndim(self) -> int:
        return self.lattice.ndim

    def _spatial_axes(self):
        return tuple(range(self.ndim))

    def _apply(self, field: np.ndarray, mats: np.ndarray) -> np.ndarray:
        check_same_lattice(self.lattice, field_lattice(field, channels=field.shape[-1]))
        axes = self._spatial_axes()
        fhat = np.fft.fftn(field, axes=axes)
        out = np.einsum("...ab,...b->...a", mats, fhat)
        return np.fft.ifftn(out, axes=axes).real

    def apply_l(self, v: np.ndarray) -> np.ndarray:
        """Momentum of a velocity field: ``u = L v``."""
        return self._apply(v, self.lhat)

    def apply_k(self, u: np.ndarray) -> np.ndarray:
        """Velocity of a momentum field: ``v = K u`` with ``K = L^-1``."""
        if self.khat is None:
            raise SingularSystem(
                "operator has a null space (absolute weight is zero); "
                "no Green's function"
            )
        return self._apply(u, self.khat)

    def inner(self, v: np.ndarray, w: np.ndarray) -> float:
        """Metric inner product ``<v, L w>``."""
        return float(np.sum(v * self.apply_l(w)))

    def shifted_inverse(self, scale: float, shift) -> np.ndarray:
        """Per-frequency inverse of ``scale * Lhat + diag(shift)``.

        ``shift`` may be a scalar or a length-d vector; used to build
        preconditioners for systems of the form ``H + scale * L``.
        """
        d = self.ndim
        shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (d,))
        mats = scale * self.lhat + np.diag(shift)
        return np.linalg.inv(mats)

    def solve_shifted(self, rhs: np.ndarray, scale: float, shift) -> np.ndarray:
        """Solve ``(scale * L + diag(shift)) x = rhs`` spectrally."""
        return self._apply(rhs, self.shifted_inverse(scale, shift))

    def sample_gaussian(self, rng: np.random.Generator, precision_scale: float = 1.0) -> np.ndarray:
        """Draw one field with covariance ``(precision_scale * L)^-1``.

        White noise is coloured by the inverse matrix square root of the
        per-frequency operator; the symbols are even in frequency, so the
        output is exactly real.
        """
        if self.khat is None:
            raise SingularSystem("cannot sample from a singular operator")
        d = self.ndim
        w, vecs = np.linalg.eigh(self.lhat)
        filt = np.einsum("...ab,...b,...cb->...ac", vecs, w ** -0.5, vecs)
        white = rng.standard_normal((*self.lattice.dims, d))
        axes = self._spatial_axes()
        what = np.fft.fftn(white, axes=axes, norm="ortho")
        coloured = np.einsum("...ab,...b->...a", filt, what)
        out = np.fft.ifftn(coloured, axes=axes, norm="ortho").real
        return out / np.sqrt(precision_scale)


def build_kernel(lattice: Lattice, params: MetricParams) -> SpectralKernel:
    """Build the spectral representation of the metric operator."""
    return SpectralKernel(lattice, params)
