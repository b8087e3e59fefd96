"""Core 3D grid types: scalar volumes, labeled instance masks, and grid metadata.

Conventions used throughout the package:

* Axis order is (x, y, z); serialized data is x-fastest.
* ``spacing`` is mm per voxel, ``origin`` is the mm position of the *center*
  of voxel (0, 0, 0).
* The mm position of voxel index ``v`` is ``origin + v * spacing``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .interp import sample_nearest, sample_trilinear

Triple = tuple[float, float, float]
IntTriple = tuple[int, int, int]


class GridMismatchError(ValueError):
    """Two objects that must share a grid do not."""


class ConstantVolumeError(ValueError):
    """Operation requires intensity variation but the volume is constant."""


def _as_triple(value, name: str, dtype=float) -> tuple:
    t = tuple(dtype(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True)
class GridRef:
    """Metadata-only handle describing a 3D sampling grid."""

    shape: IntTriple
    spacing: Triple
    origin: Triple

    def __post_init__(self):
        object.__setattr__(self, "shape", _as_triple(self.shape, "shape", int))
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing"))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))
        if any(n <= 0 for n in self.shape):
            raise ValueError(f"shape must be positive, got {self.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if not all(math.isfinite(v) for v in self.spacing + self.origin):
            raise ValueError("spacing/origin must be finite")

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz

    @property
    def extent_mm(self) -> Triple:
        """Outer physical extent (shape * spacing) per axis."""
        return tuple(n * s for n, s in zip(self.shape, self.spacing))

    def mm_to_voxel(self, points_mm) -> np.ndarray:
        """Map mm coordinates to continuous voxel coordinates, (..., 3)."""
        p = np.asarray(points_mm, dtype=np.float64)
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing)

    def voxel_to_mm(self, points_vox) -> np.ndarray:
        """Map continuous voxel coordinates to mm, inverse of mm_to_voxel."""
        v = np.asarray(points_vox, dtype=np.float64)
        return np.asarray(self.origin) + v * np.asarray(self.spacing)

    def voxel_center_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(low, high) mm positions of the first and last voxel centers."""
        lo = np.asarray(self.origin, dtype=np.float64)
        hi = lo + (np.asarray(self.shape) - 1) * np.asarray(self.spacing)
        return lo, hi

    def contains_mm(self, point_mm) -> bool:
        """True if the mm point lies within the voxel-center bounds."""
        lo, hi = self.voxel_center_bounds()
        p = np.asarray(point_mm, dtype=np.float64)
        return bool(np.all(p >= lo) and np.all(p <= hi))

    def is_close(self, other: "GridRef", tol: float = 1e-4) -> bool:
        """Grid equality with tolerance for float32 metadata round trips."""
        if self.shape != other.shape:
            return False
        return bool(
            np.allclose(self.spacing, other.spacing, rtol=tol, atol=tol)
            and np.allclose(self.origin, other.origin, rtol=tol, atol=tol)
        )

    def coordinates_mm(self) -> np.ndarray:
        """Dense (nx, ny, nz, 3) array of voxel-center mm positions."""
        axes = [
            self.origin[a] + np.arange(self.shape[a], dtype=np.float64) * self.spacing[a]
            for a in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


def _require_same_grid(a: "GridRef", b: "GridRef", what: str) -> None:
    if not a.is_close(b):
        raise GridMismatchError(f"{what}: grids differ ({a} vs {b})")


class Volume:
    """A 3D scalar image on a physical grid. Data is float32 and immutable."""

    def __init__(self, data: np.ndarray, grid: GridRef):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ValueError(f"expected 3D data, got {data.ndim}D")
        if tuple(data.shape) != grid.shape:
            raise ValueError(f"data shape {data.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        data = np.ascontiguousarray(data, dtype=np.float32)
        data.flags.writeable = False
        self.data = data
        self.grid = grid

    @property
    def shape(self) -> IntTriple:
        return self.grid.shape

    @property
    def spacing(self) -> Triple:
        return self.grid.spacing

    @property
    def origin(self) -> Triple:
        return self.grid.origin

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.grid)

    def __repr__(self):
        return f"Volume(shape={self.shape}, spacing={self.spacing}, origin={self.origin})"


class InstanceMask:
    """A labeled 3D grid: 0 is background, positive integers are instances.

    Labels carry identity (e.g. the same lesion across timepoints), so they
    are preserved verbatim by resampling/warping and need not be contiguous.
    """

    def __init__(self, data: np.ndarray, grid: GridRef):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ValueError(f"expected 3D data, got {data.ndim}D")
        if tuple(data.shape) != grid.shape:
            raise ValueError(f"data shape {data.shape} != grid shape {grid.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(data == np.round(data)):
                raise ValueError("mask data must be integer-valued")
        if data.size and data.min() < 0:
            raise ValueError("mask labels must be non-negative")
        data = np.ascontiguousarray(data, dtype=np.int32)
        data.flags.writeable = False
        self.data = data
        self.grid = grid

    @property
    def shape(self) -> IntTriple:
        return self.grid.shape

    @property
    def spacing(self) -> Triple:
        return self.grid.spacing

    @property
    def origin(self) -> Triple:
        return self.grid.origin

    @property
    def labels(self) -> tuple[int, ...]:
        """Sorted distinct positive labels present in the mask."""
        u = np.unique(self.data)
        return tuple(int(v) for v in u if v > 0)

    @property
    def num_instances(self) -> int:
        return len(self.labels)

    @property
    def is_empty(self) -> bool:
        return self.num_instances == 0

    def binary(self, label: int | None = None) -> np.ndarray:
        """Boolean foreground array, either one instance or all of them."""
        if label is None:
            return self.data > 0
        return self.data == int(label)

    def with_data(self, data: np.ndarray) -> "InstanceMask":
        return InstanceMask(data, self.grid)

    def __repr__(self):
        return f"InstanceMask(shape={self.shape}, labels={self.labels})"


def mm_to_voxel(grid: GridRef, point_mm) -> np.ndarray:
    return grid.mm_to_voxel(point_mm)


def voxel_to_mm(grid: GridRef, point_vox) -> np.ndarray:
    return grid.voxel_to_mm(point_vox)


def resample(obj, target_spacing, mode: str | None = None):
    """Resample a Volume (trilinear) or InstanceMask (nearest) to a new spacing.

    The output grid keeps the origin and covers the same outer extent:
    ``new_shape = ceil(shape * spacing / target_spacing)``. Resampling to the
    identical spacing returns the input unchanged.
    """
    target = _as_triple(target_spacing, "target_spacing")
    if any(s <= 0 for s in target):
        raise ValueError(f"target_spacing must be positive, got {target}")
    is_mask = isinstance(obj, InstanceMask)
    if mode is None:
        mode = "nearest" if is_mask else "trilinear"
    if is_mask and mode != "nearest":
        raise ValueError("InstanceMask must be resampled with nearest mode")

    grid = obj.grid
    if target == grid.spacing:
        return obj

    new_shape = tuple(
        int(math.ceil(n * s / t)) for n, s, t in zip(grid.shape, grid.spacing, target)
    )
    if any(n <= 0 for n in new_shape):
        raise ValueError(f"resample produced empty shape {new_shape}")
    new_grid = GridRef(new_shape, target, grid.origin)

    # Sample positions of the new voxel centers, in source voxel coordinates.
    axes = [
        np.arange(new_shape[a], dtype=np.float64) * target[a] / grid.spacing[a]
        for a in range(3)
    ]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([gx, gy, gz], axis=-1)

    if mode == "trilinear":
        out = sample_trilinear(np.asarray(obj.data, dtype=np.float64), pos, oob="clamp")
        return Volume(out, new_grid)
    out = sample_nearest(obj.data, pos, fill=0)
    return InstanceMask(out, new_grid)


def znormalize(v: Volume) -> Volume:
    """Shift/scale intensities to zero mean, unit standard deviation."""
    data = np.asarray(v.data, dtype=np.float64)
    std = data.std()
    if std == 0.0:
        raise ConstantVolumeError("cannot z-normalize a constant volume")
    return v.with_data((data - data.mean()) / std)


def ct_normalize(v: Volume, lower_pct: float = 0.5, upper_pct: float = 99.5) -> Volume:
    """Clip to per-volume intensity percentiles, then z-normalize.

    A single-volume stand-in for cohort-statistics CT normalization: values
    are clipped to the [0.5, 99.5] percentile window before standardization.
    """
    data = np.asarray(v.data, dtype=np.float64)
    lo, hi = np.percentile(data, [lower_pct, upper_pct])
    clipped = np.clip(data, lo, hi)
    std = clipped.std()
    if std == 0.0:
        raise ConstantVolumeError("volume is constant after percentile clipping")
    return v.with_data((clipped - clipped.mean()) / std)


@dataclass(frozen=True)
class CropPlacement:
    """Where a cropped patch sits inside its source grid (for paste-back)."""

    start: IntTriple
    size: IntTriple
    source_grid: GridRef

    def patch_grid(self) -> GridRef:
        origin = tuple(
            o + i * s
            for o, i, s in zip(self.source_grid.origin, self.start, self.source_grid.spacing)
        )
        return GridRef(self.size, self.source_grid.spacing, origin)


def crop_roi(obj, center_mm, size_vox) -> tuple:
    """Extract a fixed-size voxel-aligned patch centered at a mm point.

    Regions outside the source are padded with the source minimum (volumes)
    or 0 (masks). Returns ``(patch, placement)``; the placement supports
    exact paste-back via :func:`paste_mask`.
    """
    size = _as_triple(size_vox, "size_vox", int)
    if any(n <= 0 for n in size):
        raise ValueError(f"size_vox must be positive, got {size}")
    grid = obj.grid
    if not grid.contains_mm(center_mm):
        raise ValueError(f"crop center {tuple(center_mm)} outside volume bounds")
    center_idx = np.round(grid.mm_to_voxel(center_mm)).astype(int)
    start = tuple(int(c - n // 2) for c, n in zip(center_idx, size))
    placement = CropPlacement(start, size, grid)

    is_mask = isinstance(obj, InstanceMask)
    fill = 0 if is_mask else float(obj.data.min())
    out = np.full(size, fill, dtype=obj.data.dtype)

    src_lo = [max(0, start[a]) for a in range(3)]
    src_hi = [min(grid.shape[a], start[a] + size[a]) for a in range(3)]
    if all(src_lo[a] < src_hi[a] for a in range(3)):
        dst_lo = [src_lo[a] - start[a] for a in range(3)]
        dst_hi = [src_hi[a] - start[a] for a in range(3)]
        out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = obj.data[
            src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]
        ]

    patch_grid = placement.patch_grid()
    patch = InstanceMask(out, patch_grid) if is_mask else Volume(out, patch_grid)
    return patch, placement


def paste_mask(patch: InstanceMask, placement: CropPlacement) -> InstanceMask:
    """Place a patch-sized mask back onto the source grid (zeros elsewhere)."""
    if tuple(patch.shape) != placement.size:
        raise ValueError(f"patch shape {patch.shape} != placement size {placement.size}")
    grid = placement.source_grid
    out = np.zeros(grid.shape, dtype=np.int32)
    start = placement.start
    src_lo = [max(0, start[a]) for a in range(3)]
    src_hi = [min(grid.shape[a], start[a] + placement.size[a]) for a in range(3)]
    if all(src_lo[a] < src_hi[a] for a in range(3)):
        dst_lo = [src_lo[a] - start[a] for a in range(3)]
        dst_hi = [src_hi[a] - start[a] for a in range(3)]
        out[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]] = patch.data[
            dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]
        ]
    return InstanceMask(out, grid)
