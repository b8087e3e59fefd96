"""Scalar/vector field kernels: Gaussian smoothing, spacing-aware gradients,
warping, displacement-map composition and Jacobians.

A :class:`DisplacementField` stores a per-voxel mm displacement ``u(x)``; the
coordinate map it represents is ``phi(x) = x + u(x)`` with ``x`` in mm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import GridMismatchError, GridRef, InstanceMask, Volume
from .interp import sample_nearest, sample_trilinear


@dataclass(frozen=True)
class KernelSpec:
    """Per-axis Gaussian std in mm, truncated at ``truncation`` sigmas."""

    sigma: tuple[float, float, float]
    truncation: float = 4.0

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        if len(sigma) != 3 or any(s < 0 for s in sigma):
            raise ValueError(f"sigma must be 3 non-negative values, got {self.sigma}")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def isotropic(cls, sigma_mm: float, truncation: float = 4.0) -> "KernelSpec":
        return cls((sigma_mm, sigma_mm, sigma_mm), truncation)


@dataclass
class DisplacementField:
    """Per-voxel 3-vector displacement in mm on a reference grid."""

    data: np.ndarray
    grid: GridRef

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != tuple(self.grid.shape) + (3,):
            raise ValueError(
                f"field shape {self.data.shape} != grid shape {self.grid.shape} + (3,)"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("displacement field contains non-finite values")

    @classmethod
    def zeros(cls, grid: GridRef) -> "DisplacementField":
        return cls(np.zeros(tuple(grid.shape) + (3,)), grid)

    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.data, axis=-1)

    def sample_mm(self, points_mm) -> np.ndarray:
        """Trilinear displacement at arbitrary mm points, (..., 3)."""
        pos = self.grid.mm_to_voxel(points_mm)
        out = np.empty(np.asarray(points_mm, dtype=np.float64).shape)
        for axis in range(3):
            out[..., axis] = sample_trilinear(self.data[..., axis], pos, oob="clamp")
        return out


def gaussian_kernel_1d(sigma_vox: float, truncation: float = 4.0) -> np.ndarray:
    """Discretely normalized sampled Gaussian; sigma 0 gives the identity."""
    if sigma_vox <= 0:
        return np.ones(1)
    radius = int(truncation * sigma_vox + 0.5)
    if radius < 1:
        return np.ones(1)
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (i / sigma_vox) ** 2)
    return k / k.sum()


def blur_array(data: np.ndarray, sigma_vox, truncation: float = 4.0) -> np.ndarray:
    """Separable Gaussian blur of a raw array, sigma per axis in voxels.

    Edge handling replicates the border value. Axes with sigma 0 are skipped.
    """
    out = np.asarray(data, dtype=np.float64)
    for axis in range(3):
        kernel = gaussian_kernel_1d(float(sigma_vox[axis]), truncation)
        if kernel.size == 1:
            continue
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="nearest")
    return out


def gaussian_blur(v: Volume, kernel: KernelSpec) -> Volume:
    """Separable Gaussian smoothing with the kernel spec's mm sigmas."""
    sigma_vox = [kernel.sigma[a] / v.spacing[a] for a in range(3)]
    if all(s == 0 for s in sigma_vox):
        return v
    return v.with_data(blur_array(v.data, sigma_vox, kernel.truncation))


def _diff_axis(arr: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Central differences interior, one-sided at the borders, per mm."""
    n = arr.shape[axis]
    if n < 2:
        raise ValueError("need at least 2 samples along each axis")
    out = np.empty_like(arr, dtype=np.float64)
    src = np.asarray(arr, dtype=np.float64)

    def sl(i):
        idx = [slice(None)] * arr.ndim
        idx[axis] = i
        return tuple(idx)

    out[sl(slice(1, -1))] = (src[sl(slice(2, None))] - src[sl(slice(0, -2))]) / (2 * spacing)
    out[sl(0)] = (src[sl(1)] - src[sl(0)]) / spacing
    out[sl(-1)] = (src[sl(-1)] - src[sl(-2)]) / spacing
    return out


def _diff_axis_adjoint(arr: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Exact transpose of :func:`_diff_axis` as a linear operator."""
    src = np.asarray(arr, dtype=np.float64)
    out = np.zeros_like(src)
    n = src.shape[axis]

    def sl(i):
        idx = [slice(None)] * src.ndim
        idx[axis] = i
        return tuple(idx)

    # Interior rows i of D contribute +-1/(2h) to columns i+1 / i-1.
    if n > 2:
        out[sl(slice(2, None))] += src[sl(slice(1, -1))] / (2 * spacing)
        out[sl(slice(0, -2))] -= src[sl(slice(1, -1))] / (2 * spacing)
    # Border rows use one-sided differences.
    out[sl(1)] += src[sl(0)] / spacing
    out[sl(0)] -= src[sl(0)] / spacing
    out[sl(-1)] += src[sl(-1)] / spacing
    out[sl(-2)] -= src[sl(-1)] / spacing
    return out


def gradient(v: Volume) -> DisplacementField:
    """Spacing-aware spatial gradient, one mm^-1-scaled 3-vector per voxel."""
    comps = [_diff_axis(v.data, a, v.spacing[a]) for a in range(3)]
    return DisplacementField(np.stack(comps, axis=-1), v.grid)


def warp(obj, u: DisplacementField, mode: str | None = None):
    """Pull-back resampling: ``output(x) = obj(x + u(x))`` on the field's grid.

    Volumes sample trilinearly with out-of-bounds filled by their minimum;
    masks sample nearest with out-of-bounds 0. The sampled object may live on
    a different grid than the field (positions are mapped through mm space).
    """
    is_mask = isinstance(obj, InstanceMask)
    if mode is None:
        mode = "nearest" if is_mask else "trilinear"
    if is_mask and mode != "nearest":
        raise ValueError("InstanceMask must be warped with nearest mode")

    target_mm = u.grid.coordinates_mm() + u.data
    pos = obj.grid.mm_to_voxel(target_mm)
    if mode == "trilinear":
        fill = float(obj.data.min())
        out = sample_trilinear(np.asarray(obj.data, dtype=np.float64), pos, oob="fill", fill=fill)
        return Volume(out, u.grid)
    out = sample_nearest(obj.data, pos, fill=0)
    return InstanceMask(out, u.grid)


def compose(u_ab: DisplacementField, u_ba: DisplacementField) -> DisplacementField:
    """Displacement of the composed map ``phi_ab(phi_ba(x))``.

    ``w(x) = u_ba(x) + u_ab(x + u_ba(x))`` with the outer field sampled
    trilinearly (replicate edge). Both fields must share a grid.
    """
    if not u_ab.grid.is_close(u_ba.grid):
        raise GridMismatchError("compose requires fields on the same grid")
    target_mm = u_ba.grid.coordinates_mm() + u_ba.data
    pos = u_ab.grid.mm_to_voxel(target_mm)
    w = np.empty_like(u_ba.data)
    for axis in range(3):
        w[..., axis] = u_ba.data[..., axis] + sample_trilinear(
            u_ab.data[..., axis], pos, oob="clamp"
        )
    return DisplacementField(w, u_ba.grid)


def jacobian(u: DisplacementField) -> np.ndarray:
    """Per-voxel 3x3 Jacobian of the coordinate map ``phi = x + u``.

    Computed with spacing-aware central differences (one-sided at borders);
    a zero field yields the identity matrix everywhere. Shape (nx,ny,nz,3,3).
    """
    shape = tuple(u.grid.shape)
    jac = np.zeros(shape + (3, 3))
    for k in range(3):
        for l in range(3):
            jac[..., k, l] = _diff_axis(u.data[..., k], l, u.grid.spacing[l])
        jac[..., k, k] += 1.0
    return jac
