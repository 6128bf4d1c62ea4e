"""Synthetic population generation against its own ground truth."""

import numpy as np
import pytest

from gshape import Lattice, MetricParams, SyntheticSpec, build_kernel, synthesise
from gshape.synthesis import (
    analytic_modes,
    ring_template,
    sample_categorical,
    sample_latents,
    write_synthetic_dataset,
)
from gshape import fileio


class TestSampling:
    def test_latent_covariance_monte_carlo(self, rng):
        # empirical covariance of sampled coordinates matches the inverse of
        # the true precision to a few percent over many draws
        std = (3.0, 1.5)
        z = sample_latents(rng, 10_000, std)
        target = np.diag(np.asarray(std) ** 2)
        emp = z.T @ z / len(z)
        err = np.linalg.norm(emp - target) / np.linalg.norm(target)
        assert err < 0.05

    def test_residual_energy_matches_precision(self, rng):
        # E[r^T L r] / (d I) = 1 / lambda for metric-coloured noise
        lat = Lattice((16, 16))
        kern = build_kernel(lat, MetricParams())
        lam = 17.0
        n_field = 2 * lat.n_voxels
        vals = [kern.inner(s, s) / n_field
                for s in (kern.sample_gaussian(rng, lam) for _ in range(300))]
        assert np.mean(vals) == pytest.approx(1.0 / lam, rel=0.05)

    def test_categorical_sampling_frequencies(self, rng):
        mu = np.zeros((64, 64, 3))
        mu[..., 0], mu[..., 1], mu[..., 2] = 0.6, 0.3, 0.1
        f = sample_categorical(rng, mu)
        assert set(np.unique(f)) == {0.0, 1.0}
        np.testing.assert_allclose(f.sum(axis=-1), 1.0)
        np.testing.assert_allclose(f.mean(axis=(0, 1)), [0.6, 0.3, 0.1],
                                   atol=0.03)

    def test_modes_metric_orthogonal_unit_amplitude(self):
        lat = Lattice((32, 32))
        kern = build_kernel(lat, MetricParams())
        modes = analytic_modes(lat, 2, kern)
        assert np.abs(modes[0]).max() == pytest.approx(1.0)
        assert np.abs(modes[1]).max() == pytest.approx(1.0)
        cross = kern.inner(modes[0], modes[1])
        norm = np.sqrt(kern.inner(modes[0], modes[0])
                       * kern.inner(modes[1], modes[1]))
        assert abs(cross) <= 1e-8 * norm

    def test_template_rings_are_probabilistic(self):
        lat = Lattice((32, 32))
        a = ring_template(lat, 3, 4.0)
        from gshape import softmax
        mu = softmax(a)
        np.testing.assert_allclose(mu.sum(axis=-1), 1.0, atol=1e-12)
        # every class occupies somewhere
        assert (mu.max(axis=(0, 1)) > 0.5).all()


class TestGeneration:
    def test_noise_free_limit(self, rng):
        # with an enormous residual precision the images vary only along the
        # ground-truth modes: identical latents give identical images
        spec_a = SyntheticSpec(dims=(16, 16), n_train=2, n_test=0,
                               lambda_true=1e12, latent_std=(2.0, 1.0),
                               seed=5)
        train_a, _, truth_a = synthesise(spec_a, MetricParams(), steps=4)
        assert np.abs(truth_a["r_train"]).max() < 1e-4

    def test_velocity_decomposition_consistent(self):
        spec = SyntheticSpec(dims=(16, 16), n_train=3, n_test=1, seed=7)
        train, test, truth = synthesise(spec, MetricParams(), steps=4)
        assert truth["z_train"].shape == (3, 2)
        assert truth["r_train"].shape == (3, 16, 16, 2)
        assert len(train) == 3 and len(test) == 1
        for f in train:
            # sampled labels are smoothed into soft responsibilities
            assert f.min() >= 0.0 and f.max() <= 1.0 + 1e-12
            np.testing.assert_allclose(f.sum(axis=-1), 1.0, atol=1e-9)

    def test_dataset_written_and_reloadable(self, tmp_path):
        spec = SyntheticSpec(dims=(16, 16), n_train=3, n_test=2, seed=3)
        train, test, truth = write_synthetic_dataset(
            spec, MetricParams(), tmp_path, steps=4)
        ids, images, k = fileio.read_dataset(tmp_path / "train" / "manifest.json")
        assert len(ids) == 3 and k == 2
        for a, b in zip(images, train):
            np.testing.assert_array_equal(a, b)
        arrays, meta = fileio.load_container(tmp_path / "truth.gsc")
        np.testing.assert_array_equal(arrays["modes"], truth["modes"])
        assert meta["m_true"] == 2
