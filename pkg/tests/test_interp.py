"""Sampling, its adjoint and lattice gradients."""

import numpy as np
import pytest

from gshape import Lattice, pull, push, spatial_gradient
from gshape.errors import DataError, LatticeMismatch


class TestPull:
    def test_identity_is_exact(self, lat16, rng):
        f = rng.standard_normal((*lat16.dims, 3))
        out = pull(f, lat16.identity_grid())
        np.testing.assert_array_equal(out, f)

    def test_constant_preserved_by_any_transform(self, lat16, rng):
        f = np.full(lat16.dims, 3.25)
        phi = lat16.identity_grid() + rng.uniform(-5, 5, (*lat16.dims, 2))
        out = pull(f, phi)
        np.testing.assert_allclose(out, 3.25, rtol=0, atol=1e-13)

    def test_half_voxel_shift_hand_values(self):
        # ramp along axis 0 on a 4x4 grid, shifted by half a voxel: the last
        # row interpolates circulantly between 3 and 0
        lat = Lattice((4, 4))
        src = np.tile(np.arange(4.0)[:, None], (1, 4))
        phi = lat.identity_grid()
        phi[..., 0] += 0.5
        out = pull(src, phi)
        expected = np.tile(np.array([0.5, 1.5, 2.5, 1.5])[:, None], (1, 4))
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_linearity(self, lat16, rng):
        x = rng.standard_normal((*lat16.dims, 2))
        y = rng.standard_normal((*lat16.dims, 2))
        phi = lat16.identity_grid() + rng.uniform(-3, 3, (*lat16.dims, 2))
        lhs = pull(2.5 * x - 1.25 * y, phi)
        rhs = 2.5 * pull(x, phi) - 1.25 * pull(y, phi)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_dimension_mismatch_raises(self, lat16, rng):
        f = rng.standard_normal(lat16.dims)
        bad = rng.standard_normal((*lat16.dims, 3))
        with pytest.raises(LatticeMismatch):
            pull(f, bad)


class TestPush:
    def test_identity_is_exact(self, lat16, rng):
        f = rng.standard_normal((*lat16.dims, 2))
        out = push(f, lat16.identity_grid())
        np.testing.assert_allclose(out, f, atol=1e-14)

    def test_adjoint_identity(self, lat16, rng):
        for _ in range(20):
            x = rng.standard_normal(lat16.dims)
            y = rng.standard_normal(lat16.dims)
            phi = lat16.identity_grid() + rng.uniform(-6, 6, (*lat16.dims, 2))
            lhs = float(np.sum(push(x, phi) * y))
            rhs = float(np.sum(x * pull(y, phi)))
            bound = 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)
            assert abs(lhs - rhs) <= bound

    def test_impulse_under_half_voxel_shift(self):
        # pushing a unit impulse deposits the interpolation weights on the
        # two neighbours sampled by the shifted transform
        lat = Lattice((6, 6))
        src = np.zeros(lat.dims)
        src[2, 2] = 1.0
        phi = lat.identity_grid()
        phi[..., 0] += 0.5
        out = push(src, phi)
        expected = np.zeros(lat.dims)
        expected[2, 2] = 0.5
        expected[3, 2] = 0.5
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_mass_conservation(self, lat32, rng):
        ones = np.ones(lat32.dims)
        phi = lat32.identity_grid() + rng.uniform(-8, 8, (*lat32.dims, 2))
        total = push(ones, phi).sum()
        assert abs(total - lat32.n_voxels) <= 1e-8 * lat32.n_voxels


class TestSpatialGradient:
    def test_constant_field_zero(self, lat16):
        g = spatial_gradient(np.full(lat16.dims, 7.0))
        np.testing.assert_array_equal(g, np.zeros((*lat16.dims, 2)))

    def test_linear_ramp_exact_in_interior(self, lat16):
        ramp = 2.0 * lat16.identity_grid()[..., 0]
        g = spatial_gradient(ramp)
        interior = g[1:-1, :, 0]
        np.testing.assert_allclose(interior, 2.0, atol=1e-12)
        np.testing.assert_allclose(g[..., 1], 0.0, atol=1e-12)

    def test_matches_interpolant_finite_differences(self, lat16, rng):
        # the multilinear interpolant is linear inside a cell, so central
        # differences of pulled values at +/- eps reproduce the lattice
        # central difference exactly for any 0 < eps < 1
        f = rng.standard_normal(lat16.dims)
        eps = 0.25
        grid = lat16.identity_grid()
        g = spatial_gradient(f)
        for ax in range(2):
            step = np.zeros((*lat16.dims, 2))
            step[..., ax] = eps
            fd = (pull(f, grid + step) - pull(f, grid - step)) / (2 * eps)
            np.testing.assert_allclose(fd, g[..., ax], atol=1e-10)

    def test_voxel_size_scaling(self, rng):
        lat = Lattice((8, 8), (2.0, 0.5))
        ramp = lat.identity_grid()[..., 0]  # increases 1 per voxel
        g = spatial_gradient(ramp, lat.voxel_size)
        np.testing.assert_allclose(g[1:-1, :, 0], 0.5, atol=1e-12)


class TestLatticeValidation:
    def test_small_extent_rejected(self):
        with pytest.raises(DataError):
            Lattice((3, 8))

    def test_wrong_rank_rejected(self):
        with pytest.raises(DataError):
            Lattice((8,))

    def test_voxel_size_checked(self):
        with pytest.raises(DataError):
            Lattice((8, 8), (1.0,))
