"""Dense regular lattices and the fields living on them.

Every array in the package follows one fixed memory layout: C-ordered,
voxel-major with channels innermost, i.e. a field with ``C`` channels on an
``(n0, ..., nd-1)`` lattice is an ``ndarray`` of shape ``(n0, ..., nd-1, C)``
(scalar fields may drop the channel axis).  Boundary handling is circulant
(wrap-around) everywhere, which keeps interpolation and its adjoint exactly
transposed and lets the metric operator diagonalise in Fourier space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, LatticeMismatch, NonFiniteState


@dataclass(frozen=True)
class Lattice:
    """Regular grid with per-axis extents and physical voxel sizes.

    Parameters
    ----------
    dims : tuple of int
        Number of voxels along each axis.  Two- and three-dimensional
        lattices are supported, and every extent must be at least 4 so the
        spectral operators have nontrivial frequency content.
    voxel_size : tuple of float
        Physical size of a voxel along each axis (defaults to isotropic 1).
    """

    dims: tuple
    voxel_size: tuple = ()

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) not in (2, 3):
            raise DataError(f"lattice must be 2D or 3D, got {len(dims)} axes")
        if any(n < 4 for n in dims):
            raise DataError(f"every lattice extent must be >= 4, got {dims}")
        vs = self.voxel_size or (1.0,) * len(dims)
        vs = tuple(float(v) for v in vs)
        if len(vs) != len(dims):
            raise DataError("voxel_size length must match number of axes")
        if any(v <= 0 for v in vs):
            raise DataError("voxel sizes must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", vs)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def identity_grid(self) -> np.ndarray:
        """Absolute voxel coordinates of every grid point, shape (*dims, d)."""
        axes = [np.arange(n, dtype=np.float64) for n in self.dims]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def zeros(self, channels: int = 0) -> np.ndarray:
        shape = self.dims if channels == 0 else (*self.dims, channels)
        return np.zeros(shape, dtype=np.float64)


def field_lattice(arr: np.ndarray, channels: int | None = None) -> Lattice:
    """Lattice implied by an array, assuming a trailing channel axis."""
    spatial = arr.shape if channels is None else arr.shape[:-1]
    return Lattice(spatial)


def check_same_lattice(lat_a: Lattice, lat_b: Lattice):
    if lat_a.dims != lat_b.dims:
        raise LatticeMismatch(f"lattice mismatch: {lat_a.dims} vs {lat_b.dims}")


def check_finite(arr: np.ndarray, what: str = "field"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteState(f"non-finite values in {what}")


def check_categorical(f: np.ndarray, n_classes: int | None = None, tol: float = 1e-6):
    """Validate per-voxel class responsibilities.

    Entries must be nonnegative and each voxel's responsibilities must sum
    to at most 1 (strictly less is allowed and encodes missing data).
    Returns the class count.
    """
    if f.ndim < 3:
        raise DataError("categorical image must have a trailing class axis")
    k = f.shape[-1]
    if k < 2:
        raise DataError(f"categorical image needs >= 2 classes, got {k}")
    if n_classes is not None and k != n_classes:
        raise DataError(f"class count mismatch: expected {n_classes}, got {k}")
    check_finite(f, "categorical image")
    if f.min() < -tol:
        raise DataError("negative class responsibilities")
    sums = f.sum(axis=-1)
    if sums.max() > 1.0 + tol:
        raise DataError("voxel responsibilities sum to more than 1")
    return k
