"""Geodesic integration: identity, translations, conservation, consistency."""

import numpy as np
import pytest

from gshape import Lattice, jacobian, pull, shoot
from gshape.errors import NonFiniteState
from gshape.interp import wrapped_offset
from gshape.shooting import Deformation

from conftest import smooth_field


def composition_error(result):
    """Mean |phi(phi^-1(x)) - x| in voxels, wrap-aware."""
    lat = result.forward.lattice
    grid = lat.identity_grid()
    fwd_disp = result.forward.displacement
    composed = pull(fwd_disp, result.inverse.map) + result.inverse.map
    delta = wrapped_offset(composed - grid, lat.dims)
    return float(np.sqrt((delta ** 2).sum(axis=-1)).mean())


class TestIdentityAndTranslation:
    def test_zero_velocity_gives_identity(self, kern32):
        res = shoot(np.zeros((32, 32, 2)), kern32, steps=8)
        grid = kern32.lattice.identity_grid()
        assert np.abs(res.forward.map - grid).max() <= 1e-12
        assert np.abs(res.inverse.map - grid).max() <= 1e-12
        assert np.abs(res.energies).max() == 0.0

    def test_constant_velocity_translates(self, kern32):
        # constant fields are fixed points of the momentum transport under
        # wrap-around, so shooting reproduces an exact translation
        c = np.array([1.5, -0.75])
        v0 = np.broadcast_to(c, (32, 32, 2)).copy()
        res = shoot(v0, kern32, steps=8)
        fwd = res.forward.displacement
        inv = res.inverse.displacement
        assert np.abs(fwd - c).max() <= 1e-3
        assert np.abs(inv + c).max() <= 1e-3

    def test_steps_validated(self, kern32):
        with pytest.raises(ValueError):
            shoot(np.zeros((32, 32, 2)), kern32, steps=0)

    def test_non_finite_velocity_rejected(self, kern32):
        v = np.zeros((32, 32, 2))
        v[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteState):
            shoot(v, kern32, steps=4)


class TestConservation:
    def test_energy_drift_first_order(self, kern32, rng):
        # smooth velocity with smooth momentum, displacements up to 4 voxels
        v0 = smooth_field(kern32, rng, max_abs=4.0)
        res8 = shoot(v0, kern32, steps=8)
        drift8 = np.abs(res8.energies - res8.energies[0]).max() / res8.energies[0]
        assert drift8 <= 0.01
        res32 = shoot(v0, kern32, steps=32)
        drift32 = np.abs(res32.energies - res32.energies[0]).max() / res32.energies[0]
        assert drift32 <= 0.0025

    def test_inverse_consistency(self, kern32, rng):
        v0 = smooth_field(kern32, rng, max_abs=4.0)
        res = shoot(v0, kern32, steps=8)
        assert composition_error(res) <= 0.1

    def test_time_rescaling_is_exact(self, kern32, rng):
        # half velocity integrated over twice the horizon with the same
        # number of steps retraces the same discrete trajectory
        v0 = smooth_field(kern32, rng, max_abs=2.0)
        a = shoot(v0, kern32, steps=16, total_time=1.0)
        b = shoot(0.5 * v0, kern32, steps=16, total_time=2.0)
        np.testing.assert_allclose(a.forward.map, b.forward.map, atol=1e-12)
        np.testing.assert_allclose(a.inverse.map, b.inverse.map, atol=1e-12)

    def test_step_doubling_converges_first_order(self, kern32, rng):
        v0 = smooth_field(kern32, rng, max_abs=2.0)
        ref = shoot(v0, kern32, steps=128)
        errs = []
        for steps in (8, 16, 32):
            res = shoot(v0, kern32, steps=steps)
            errs.append(np.abs(res.forward.map - ref.forward.map).max())
        # halving the step size should roughly halve the error
        assert errs[1] <= 0.75 * errs[0]
        assert errs[2] <= 0.75 * errs[1]


class TestSerialisation:
    def test_deformation_round_trip(self, kern32, rng, tmp_path):
        v0 = smooth_field(kern32, rng, max_abs=2.0)
        res = shoot(v0, kern32, steps=4)
        from gshape.shooting import load_deformation, save_deformation
        path = tmp_path / "inverse.fld"
        save_deformation(path, res.inverse)
        back = load_deformation(path)
        assert back.kind == "inverse"
        assert back.lattice.dims == (32, 32)
        np.testing.assert_array_equal(back.map, res.inverse.map)


class TestJacobian:
    def test_identity_has_unit_determinant(self, lat16):
        res = Deformation(lat16, lat16.identity_grid(), "forward")
        det = np.linalg.det(jacobian(res))
        np.testing.assert_allclose(det, 1.0, atol=1e-14)

    def test_translation_has_unit_determinant(self, lat16):
        mapping = lat16.identity_grid() + np.array([2.5, -1.0])
        det = np.linalg.det(jacobian(Deformation(lat16, mapping, "forward")))
        np.testing.assert_allclose(det, 1.0, atol=1e-14)

    def test_linear_scaling_determinant_interior(self, lat16):
        mapping = 1.1 * lat16.identity_grid()
        det = np.linalg.det(jacobian(Deformation(lat16, mapping, "forward")))
        np.testing.assert_allclose(det[2:-2, 2:-2], 1.1 ** 2, atol=1e-10)
