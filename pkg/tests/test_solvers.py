"""Conjugate-gradient solver on field-shaped SPD systems."""

import numpy as np

from gshape.solvers import pcg


class TestPcg:
    def test_matches_direct_solve(self, rng):
        a = rng.standard_normal((40, 40))
        spd = a @ a.T + 40 * np.eye(40)
        b = rng.standard_normal(40)
        x, rel, n_it, converged = pcg(lambda v: spd @ v, b, tol=1e-12,
                                      max_iter=200)
        assert converged
        np.testing.assert_allclose(x, np.linalg.solve(spd, b), atol=1e-8)

    def test_preconditioner_speeds_convergence(self, rng):
        diag = np.linspace(1.0, 1e4, 64)
        b = rng.standard_normal(64)
        _, _, plain_iters, _ = pcg(lambda v: diag * v, b, tol=1e-10,
                                   max_iter=500)
        _, _, pre_iters, conv = pcg(lambda v: diag * v, b,
                                    precond=lambda r: r / diag,
                                    tol=1e-10, max_iter=500)
        assert conv and pre_iters < plain_iters

    def test_zero_rhs(self):
        x, rel, n_it, converged = pcg(lambda v: v, np.zeros(5))
        assert converged and n_it == 0
        np.testing.assert_array_equal(x, np.zeros(5))

    def test_iteration_cap_reported(self, rng):
        diag = np.linspace(1.0, 1e6, 128)
        b = rng.standard_normal(128)
        x, rel, n_it, converged = pcg(lambda v: diag * v, b, tol=1e-14,
                                      max_iter=3)
        assert not converged and n_it == 3 and rel > 1e-14
