"""Trilinear and nearest-neighbor sampling of 3D arrays at continuous voxel
coordinates, with the exact interpolant derivative and its adjoint.

Positions are in voxel units of the sampled array. Two out-of-bounds modes:

* ``clamp``: positions are clipped to the valid range (replicate edge).
* ``fill``: any position outside ``[0, n-1]`` on any axis yields a constant.

The derivative returned by :func:`sample_trilinear_with_grad` is the exact
piecewise derivative of the interpolant with respect to position (zero where
the position is clamped or filled), which is what gradient-based registration
needs to agree with finite differences of the objective.
"""

from __future__ import annotations

import numpy as np


def _corner_setup(shape, pos):
    """Shared corner-index/fraction computation for gather and scatter."""
    n = np.asarray(shape, dtype=np.int64)
    p = np.asarray(pos, dtype=np.float64)
    clipped = np.clip(p, 0.0, (n - 1).astype(np.float64))
    i0 = np.floor(clipped).astype(np.int64)
    # Keep i0+1 valid; positions exactly at the upper edge use frac == 1.
    i0 = np.minimum(i0, n - 2)
    i0 = np.maximum(i0, 0)
    frac = clipped - i0
    return i0, frac, clipped


def _in_bounds(shape, pos):
    n = np.asarray(shape, dtype=np.float64)
    p = np.asarray(pos, dtype=np.float64)
    ok = (p[..., 0] >= 0) & (p[..., 0] <= n[0] - 1)
    ok &= (p[..., 1] >= 0) & (p[..., 1] <= n[1] - 1)
    ok &= (p[..., 2] >= 0) & (p[..., 2] <= n[2] - 1)
    return ok


def _gather(data, ix, iy, iz):
    return data[ix, iy, iz]


def sample_trilinear(data, pos, oob: str = "clamp", fill: float = 0.0) -> np.ndarray:
    """Trilinear interpolation of ``data`` at positions ``pos`` (..., 3)."""
    values, _ = _trilinear_impl(data, pos, oob, fill, want_grad=False)
    return values


def sample_trilinear_with_grad(data, pos, oob: str = "clamp", fill: float = 0.0):
    """Interpolated values and d(value)/d(position), shapes (...,) and (..., 3)."""
    return _trilinear_impl(data, pos, oob, fill, want_grad=True)


def _trilinear_impl(data, pos, oob, fill, want_grad):
    if data.ndim != 3:
        raise ValueError("expected a 3D array")
    if data.shape[0] < 2 or data.shape[1] < 2 or data.shape[2] < 2:
        raise ValueError("need at least 2 voxels per axis to interpolate")
    d = np.asarray(data, dtype=np.float64)
    i0, frac, _ = _corner_setup(d.shape, pos)
    ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
    fx, fy, fz = frac[..., 0], frac[..., 1], frac[..., 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    c000 = _gather(d, ix, iy, iz)
    c100 = _gather(d, ix + 1, iy, iz)
    c010 = _gather(d, ix, iy + 1, iz)
    c110 = _gather(d, ix + 1, iy + 1, iz)
    c001 = _gather(d, ix, iy, iz + 1)
    c101 = _gather(d, ix + 1, iy, iz + 1)
    c011 = _gather(d, ix, iy + 1, iz + 1)
    c111 = _gather(d, ix + 1, iy + 1, iz + 1)

    values = (
        c000 * gx * gy * gz
        + c100 * fx * gy * gz
        + c010 * gx * fy * gz
        + c110 * fx * fy * gz
        + c001 * gx * gy * fz
        + c101 * fx * gy * fz
        + c011 * gx * fy * fz
        + c111 * fx * fy * fz
    )

    grad = None
    if want_grad:
        dvx = (
            (c100 - c000) * gy * gz
            + (c110 - c010) * fy * gz
            + (c101 - c001) * gy * fz
            + (c111 - c011) * fy * fz
        )
        dvy = (
            (c010 - c000) * gx * gz
            + (c110 - c100) * fx * gz
            + (c011 - c001) * gx * fz
            + (c111 - c101) * fx * fz
        )
        dvz = (
            (c001 - c000) * gx * gy
            + (c101 - c100) * fx * gy
            + (c011 - c010) * gx * fy
            + (c111 - c110) * fx * fy
        )
        grad = np.stack([dvx, dvy, dvz], axis=-1)

    if oob == "fill":
        inside = _in_bounds(d.shape, pos)
        values = np.where(inside, values, float(fill))
        if want_grad:
            grad = np.where(inside[..., None], grad, 0.0)
    elif oob == "clamp":
        if want_grad:
            # Clamped axes do not respond to position changes.
            p = np.asarray(pos, dtype=np.float64)
            n = np.asarray(d.shape, dtype=np.float64)
            for a in range(3):
                active = (p[..., a] > 0) & (p[..., a] < n[a] - 1)
                grad[..., a] = np.where(active, grad[..., a], 0.0)
    else:
        raise ValueError(f"unknown oob mode {oob!r}")
    return values, grad


def scatter_trilinear(shape, pos, values) -> np.ndarray:
    """Adjoint of clamp-mode :func:`sample_trilinear` as a linear map in data.

    Accumulates ``values`` onto the 8 interpolation corners of each position
    with the same weights gathering would use, so that
    ``<sample(data, pos), y> == <data, scatter(shape, pos, y)>`` exactly.
    """
    out = np.zeros(shape, dtype=np.float64)
    i0, frac, _ = _corner_setup(shape, pos)
    ix, iy, iz = i0[..., 0].ravel(), i0[..., 1].ravel(), i0[..., 2].ravel()
    fx, fy, fz = frac[..., 0].ravel(), frac[..., 1].ravel(), frac[..., 2].ravel()
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    v = np.asarray(values, dtype=np.float64).ravel()

    np.add.at(out, (ix, iy, iz), v * gx * gy * gz)
    np.add.at(out, (ix + 1, iy, iz), v * fx * gy * gz)
    np.add.at(out, (ix, iy + 1, iz), v * gx * fy * gz)
    np.add.at(out, (ix + 1, iy + 1, iz), v * fx * fy * gz)
    np.add.at(out, (ix, iy, iz + 1), v * gx * gy * fz)
    np.add.at(out, (ix + 1, iy, iz + 1), v * fx * gy * fz)
    np.add.at(out, (ix, iy + 1, iz + 1), v * gx * fy * fz)
    np.add.at(out, (ix + 1, iy + 1, iz + 1), v * fx * fy * fz)
    return out


def sample_nearest(data, pos, fill=0) -> np.ndarray:
    """Nearest-neighbor sampling; out-of-bounds positions take ``fill``.

    The nearest index is ``floor(pos + 0.5)`` (ties round toward +inf).
    """
    d = np.asarray(data)
    p = np.asarray(pos, dtype=np.float64)
    idx = np.floor(p + 0.5).astype(np.int64)
    n = np.asarray(d.shape, dtype=np.int64)
    inside = np.all((idx >= 0) & (idx < n), axis=-1)
    ic = np.clip(idx, 0, n - 1)
    values = d[ic[..., 0], ic[..., 1], ic[..., 2]]
    return np.where(inside, values, np.asarray(fill, dtype=d.dtype))
