import numpy as np
import pytest

from gshape import Lattice, MetricParams, build_kernel


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def lat16():
    return Lattice((16, 16))


@pytest.fixture
def lat32():
    return Lattice((32, 32))


@pytest.fixture
def kern16(lat16):
    return build_kernel(lat16, MetricParams())


@pytest.fixture
def kern32(lat32):
    return build_kernel(lat32, MetricParams())


def smooth_field(kern, rng, max_abs=1.0, smoothness=3):
    """Random velocity-shaped field coloured by the metric's Green's function.

    Several smoothing passes so the momentum (one application of the
    operator) is itself a smooth, interpolatable field.
    """
    d = kern.lattice.ndim
    raw = rng.standard_normal((*kern.lattice.dims, d))
    for _ in range(smoothness):
        raw = kern.apply_k(raw)
    return raw * (max_abs / np.abs(raw).max())
