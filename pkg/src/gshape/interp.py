"""Multilinear sampling (pull), its exact adjoint (push) and lattice gradients.

``pull(src, points)`` evaluates the multilinear interpolant of ``src`` at
arbitrary coordinates expressed in voxel units of ``src``'s lattice, wrapping
circulantly at the boundary.  ``push`` scatters with the very same weights,
so ``<push(x, p), y> == <x, pull(y, p)>`` holds to rounding error for any
fields and sample points.  All accumulation is in float64.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import LatticeMismatch


def _corner_weights(points: np.ndarray, dims: tuple):
    """Floor corners, fractional weights and wrapped integer indices.

    Returns (base, frac) where ``base`` holds the floor corner per axis
    (already wrapped) and ``frac`` the fractional offsets in [0, 1).
    """
    d = len(dims)
    if points.shape[-1] != d:
        raise LatticeMismatch(
            f"sample points have {points.shape[-1]} coordinates, lattice has {d}"
        )
    floor = np.floor(points)
    frac = points - floor
    base = floor.astype(np.int64)
    return base, frac


def pull(src: np.ndarray, points: np.ndarray, spatial_ndim: int | None = None) -> np.ndarray:
    """Sample ``src`` at ``points`` with circulant multilinear interpolation.

    Parameters
    ----------
    src : ndarray, (*dims,) or (*dims, C...)
        Field to sample.  Any number of trailing channel axes is allowed.
    points : ndarray, (*out_dims, d)
        Absolute sample coordinates in voxel units of ``src``'s lattice.
    spatial_ndim : int, optional
        Number of leading spatial axes of ``src``; defaults to the number of
        coordinates carried by ``points``.

    Returns
    -------
    ndarray with ``points``'s spatial shape and ``src``'s channel shape.
    """
    d = points.shape[-1]
    if spatial_ndim is None:
        spatial_ndim = d
    if spatial_ndim != d:
        raise LatticeMismatch("point dimensionality does not match field lattice")
    dims = src.shape[:spatial_ndim]
    chan_shape = src.shape[spatial_ndim:]
    base, frac = _corner_weights(points, dims)
    out_spatial = points.shape[:-1]
    out = np.zeros(out_spatial + chan_shape, dtype=np.float64)
    pad = (None,) * len(chan_shape)
    for corner in itertools.product((0, 1), repeat=d):
        w = np.ones(out_spatial, dtype=np.float64)
        idx = []
        for ax, c in enumerate(corner):
            w = w * (frac[..., ax] if c else 1.0 - frac[..., ax])
            idx.append(np.remainder(base[..., ax] + c, dims[ax]))
        out += w[(..., *pad)] * src[tuple(idx)]
    return out


def push(src: np.ndarray, points: np.ndarray, spatial_ndim: int | None = None) -> np.ndarray:
    """Adjoint of :func:`pull`: scatter ``src`` through the same weights.

    ``src`` lives on the sample-point grid; the result lives on the lattice
    the points index into (same extents here, since all fields share one
    lattice).  Total mass is conserved exactly because the corner weights of
    every sample point sum to one.
    """
    d = points.shape[-1]
    if spatial_ndim is None:
        spatial_ndim = d
    dims = points.shape[:-1]
    if src.shape[: len(dims)] != dims:
        raise LatticeMismatch("pushed field and sample points disagree on shape")
    chan_shape = src.shape[len(dims):]
    n_chan = int(np.prod(chan_shape)) if chan_shape else 1
    n_out = int(np.prod(dims))
    src_flat = src.reshape(n_out, n_chan)
    base, frac = _corner_weights(points, dims)
    out = np.zeros((n_out, n_chan), dtype=np.float64)
    for corner in itertools.product((0, 1), repeat=d):
        w = np.ones(dims, dtype=np.float64)
        idx = []
        for ax, c in enumerate(corner):
            w = w * (frac[..., ax] if c else 1.0 - frac[..., ax])
            idx.append(np.remainder(base[..., ax] + c, dims[ax]))
        lin = np.ravel_multi_index(tuple(idx), dims).ravel()
        wf = w.ravel()
        for ch in range(n_chan):
            out[:, ch] += np.bincount(
                lin, weights=wf * src_flat[:, ch], minlength=n_out
            )
    return out.reshape(dims + chan_shape)


def spatial_gradient(src: np.ndarray, voxel_size=None, channel_axes: int = 0) -> np.ndarray:
    """Central-difference gradient with circulant wrap, appended as last axis.

    For a field of shape ``(*dims, C...)`` with ``channel_axes`` trailing
    channel axes, returns ``(*dims, C..., d)``.  Exact for affine fields away
    from the wrap seam.
    """
    d = src.ndim - channel_axes
    vs = np.ones(d) if voxel_size is None else np.asarray(voxel_size, dtype=np.float64)
    grads = [
        (np.roll(src, -1, axis=ax) - np.roll(src, 1, axis=ax)) / (2.0 * vs[ax])
        for ax in range(d)
    ]
    return np.stack(grads, axis=-1)


def compose(disp_outer: np.ndarray, map_inner: np.ndarray) -> np.ndarray:
    """Absolute map of ``outer ∘ inner`` from outer's displacement.

    ``disp_outer`` is the displacement field of the outer transform (map
    minus identity, safe to interpolate across the wrap seam); ``map_inner``
    the absolute map of the inner transform.  Returns the absolute composed
    map ``outer(inner(x))``.
    """
    return pull(disp_outer, map_inner) + map_inner


def wrapped_offset(delta: np.ndarray, dims: tuple) -> np.ndarray:
    """Map coordinate differences into the symmetric interval per axis.

    On a circulant lattice a displacement is only defined modulo the extent;
    this folds each component of ``delta`` into [-n/2, n/2).
    """
    out = np.empty_like(delta)
    for ax, n in enumerate(dims):
        out[..., ax] = np.remainder(delta[..., ax] + n / 2.0, n) - n / 2.0
    return out
