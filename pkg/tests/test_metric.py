"""Spectral metric operator against an independent dense assembly."""

import numpy as np
import pytest

from gshape import Lattice, MetricParams, build_kernel
from gshape.errors import ConfigError, SingularSystem


def dense_operator(lattice, params):
    """Assemble the operator as an explicit matrix from difference stencils.

    Independent of the FFT path: circulant shift matrices are built from
    permutations, energies from their products, and channels interleaved in
    voxel-major/channel-innermost order to match the package's flattening.
    """
    dims = lattice.dims
    d = lattice.ndim
    h = np.asarray(lattice.voxel_size)
    n = lattice.n_voxels
    eye = np.eye(n)

    def shift(ax, step):
        idx = np.arange(n).reshape(dims)
        target = np.roll(idx, -step, axis=ax).ravel()
        mat = np.zeros((n, n))
        mat[np.arange(n), target] = 1.0
        return mat

    fwd = [(shift(ax, 1) - eye) / h[ax] for ax in range(d)]
    cen = [(shift(ax, 1) - shift(ax, -1)) / (2.0 * h[ax]) for ax in range(d)]
    lap = sum(f.T @ f for f in fwd)
    div_w, shear_w = params.elastic

    full = np.zeros((n * d, n * d))
    for i in range(d):
        for j in range(d):
            if i == j:
                block = (params.absolute * eye
                         + params.membrane * lap
                         + params.bending * (lap @ lap)
                         + div_w * (fwd[i].T @ fwd[i])
                         + shear_w * (fwd[i].T @ fwd[i] + lap))
            else:
                block = (div_w + shear_w) * (cen[i].T @ cen[j])
            full[i::d, j::d] = h[i] * h[j] * block
    return full


class TestSpectrumAgainstDense:
    @pytest.mark.parametrize("params", [
        MetricParams(membrane=1.0, bending=0.0, elastic=(0.0, 0.0), absolute=0.0),
        MetricParams(membrane=0.0, bending=1.0, elastic=(0.0, 0.0), absolute=0.0),
        MetricParams(membrane=0.0, bending=0.0, elastic=(1.0, 0.0), absolute=0.0),
        MetricParams(membrane=0.0, bending=0.0, elastic=(0.0, 1.0), absolute=0.0),
        MetricParams(),  # defaults: the full mixture
    ])
    def test_eigenvalues_match(self, params):
        lat = Lattice((8, 8))
        kern = build_kernel(lat, params)
        dense = dense_operator(lat, params)
        dense_eigs = np.sort(np.linalg.eigvalsh(dense))
        spectral_eigs = np.sort(np.linalg.eigvalsh(kern.lhat).ravel())
        assert np.abs(dense_eigs - spectral_eigs).max() <= 1e-10

    def test_eigenvalues_match_anisotropic(self):
        lat = Lattice((8, 6), (1.5, 0.75))
        params = MetricParams()
        kern = build_kernel(lat, params)
        dense = dense_operator(lat, params)
        dense_eigs = np.sort(np.linalg.eigvalsh(dense))
        spectral_eigs = np.sort(np.linalg.eigvalsh(kern.lhat).ravel())
        assert np.abs(dense_eigs - spectral_eigs).max() <= 1e-10

    def test_apply_matches_dense_matvec(self, rng):
        lat = Lattice((8, 8))
        params = MetricParams()
        kern = build_kernel(lat, params)
        dense = dense_operator(lat, params)
        v = rng.standard_normal((*lat.dims, 2))
        out = kern.apply_l(v)
        expected = (dense @ v.reshape(-1)).reshape(v.shape)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_membrane_symbol_classic_laplacian(self):
        # one-frequency modes along an 8-voxel axis reproduce the classic
        # discrete Laplacian eigenvalues 2 - 2 cos(2 pi k / 8)
        lat = Lattice((8, 8))
        params = MetricParams(membrane=1.0, bending=0.0, elastic=(0.0, 0.0),
                              absolute=0.0)
        kern = build_kernel(lat, params)
        for k in range(8):
            expected = 2.0 - 2.0 * np.cos(2.0 * np.pi * k / 8.0)
            assert kern.lhat[k, 0, 0, 0] == pytest.approx(expected, abs=1e-12)

    def test_zero_frequency_eigenvalue_is_absolute(self):
        lat = Lattice((8, 8))
        kern = build_kernel(lat, MetricParams(absolute=3e-3))
        np.testing.assert_allclose(kern.lhat[0, 0], 3e-3 * np.eye(2), atol=1e-15)


class TestOperatorProperties:
    def test_default_weights_build(self):
        lat = Lattice((16, 16))
        kern = build_kernel(lat, MetricParams(membrane=0.001, bending=0.02,
                                              elastic=(0.0025, 0.005)))
        assert np.all(np.isfinite(kern.lhat))
        assert kern.khat is not None

    def test_zero_maps_to_zero(self, kern16):
        z = np.zeros((16, 16, 2))
        np.testing.assert_array_equal(kern16.apply_l(z), z)
        np.testing.assert_array_equal(kern16.apply_k(z), z)

    def test_self_adjoint(self, kern16, rng):
        v = rng.standard_normal((16, 16, 2))
        w = rng.standard_normal((16, 16, 2))
        lhs = np.sum(kern16.apply_l(v) * w)
        rhs = np.sum(v * kern16.apply_l(w))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(v) * np.linalg.norm(w)

    def test_positive_definite(self, kern16, rng):
        for _ in range(10):
            v = rng.standard_normal((16, 16, 2))
            assert np.sum(v * kern16.apply_l(v)) > 0

    def test_inverse_round_trips(self, kern16, rng):
        v = rng.standard_normal((16, 16, 2))
        back = kern16.apply_k(kern16.apply_l(v))
        assert np.linalg.norm(back - v) <= 1e-8 * np.linalg.norm(v)
        u = rng.standard_normal((16, 16, 2))
        back_u = kern16.apply_l(kern16.apply_k(u))
        assert np.linalg.norm(back_u - u) <= 1e-8 * np.linalg.norm(u)

    def test_impulse_response_symmetric_and_smooth(self, kern16):
        u = np.zeros((16, 16, 2))
        u[8, 8, 0] = 1.0
        v = kern16.apply_k(u)
        # symmetric in the axis aligned with the impulse
        np.testing.assert_allclose(v[..., 0], np.roll(v[::-1, :, 0], 17, axis=0),
                                   atol=1e-12)
        np.testing.assert_allclose(v[..., 0], np.roll(v[:, ::-1, 0], 17, axis=1),
                                   atol=1e-12)
        # energy concentrates at the impulse
        assert np.abs(v[..., 0]).max() == pytest.approx(abs(v[8, 8, 0]))

    def test_energy_decreases_under_spectral_truncation(self, kern16, rng):
        v = rng.standard_normal((16, 16, 2))
        freqs = [np.fft.fftfreq(n) for n in (16, 16)]
        kk = np.meshgrid(*freqs, indexing="ij")
        energies = []
        for cutoff in (0.5, 0.3, 0.2, 0.1, 0.05):
            mask = ((np.abs(kk[0]) <= cutoff) & (np.abs(kk[1]) <= cutoff))
            vhat = np.fft.fftn(v, axes=(0, 1)) * mask[..., None]
            vs = np.fft.ifftn(vhat, axes=(0, 1)).real
            energies.append(0.5 * np.sum(vs * kern16.apply_l(vs)))
        assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(energies, energies[1:]))

    def test_solve_shifted_inverts_shifted_operator(self, kern16, rng):
        rhs = rng.standard_normal((16, 16, 2))
        x = kern16.solve_shifted(rhs, scale=2.5, shift=0.75)
        back = 2.5 * kern16.apply_l(x) + 0.75 * x
        np.testing.assert_allclose(back, rhs, atol=1e-10)


class TestValidation:
    def test_all_zero_weights_rejected(self):
        with pytest.raises(ConfigError):
            MetricParams(membrane=0.0, bending=0.0, elastic=(0.0, 0.0),
                         absolute=0.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            MetricParams(membrane=-1.0)

    def test_green_function_needs_absolute_term(self):
        lat = Lattice((8, 8))
        kern = build_kernel(lat, MetricParams(membrane=1.0, bending=0.0,
                                              elastic=(0.0, 0.0), absolute=0.0))
        with pytest.raises(SingularSystem):
            kern.apply_k(np.zeros((8, 8, 2)))


class TestGaussianColouring:
    def test_sample_energy_matches_precision(self, rng):
        # E[r^T L r] for r ~ N(0, (lam L)^-1) equals (field size) / lam
        lat = Lattice((16, 16))
        kern = build_kernel(lat, MetricParams())
        lam = 4.0
        n_field = 2 * lat.n_voxels
        energies = [
            kern.inner(s, s)
            for s in (kern.sample_gaussian(rng, lam) for _ in range(400))
        ]
        assert np.mean(energies) == pytest.approx(n_field / lam, rel=0.05)
