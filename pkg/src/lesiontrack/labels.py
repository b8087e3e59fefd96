"""Discrete mask utilities: connected components, exact Euclidean distance
transforms and instance geometry (centroids, bounding boxes)."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .grid import GridRef, InstanceMask, Volume


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return np.ones((3, 3, 3), dtype=bool)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(mask: InstanceMask, connectivity: int = 26) -> InstanceMask:
    """Label the foreground (any nonzero voxel) into instances 1..K.

    Labeling is deterministic: instances are numbered by the position of
    their first voxel in x-fastest scan order.
    """
    fg = mask.data > 0
    labeled, num = ndimage.label(fg, structure=_structure(connectivity))
    if num == 0:
        return mask.with_data(np.zeros(mask.shape, dtype=np.int32))

    # Renumber by first occurrence in x-fastest (Fortran) scan order.
    flat = labeled.ravel(order="F")
    nz = flat[flat > 0]
    first_seen = nz[np.sort(np.unique(nz, return_index=True)[1])]
    remap = np.zeros(num + 1, dtype=np.int32)
    remap[first_seen] = np.arange(1, num + 1, dtype=np.int32)
    return mask.with_data(remap[labeled])


def distance_transform(mask: InstanceMask, spacing=None) -> Volume:
    """Exact Euclidean mm distance to the nearest foreground voxel center.

    Anisotropic spacings are honored; foreground voxels get distance 0.
    """
    fg = mask.data > 0
    if not fg.any():
        raise ValueError("distance transform of an empty mask is undefined")
    if spacing is None:
        spacing = mask.spacing
    dist = ndimage.distance_transform_edt(~fg, sampling=spacing)
    return Volume(dist, mask.grid)


def distance_to_set(points_vox: np.ndarray, grid_shape, spacing) -> np.ndarray:
    """mm distance field to a sparse voxel set (used for surface distances)."""
    fg = np.zeros(grid_shape, dtype=bool)
    fg[points_vox[:, 0], points_vox[:, 1], points_vox[:, 2]] = True
    return ndimage.distance_transform_edt(~fg, sampling=spacing)


def centroid(mask: InstanceMask, label: int) -> tuple[float, float, float]:
    """Unweighted mean of an instance's voxel centers, in mm."""
    idx = np.argwhere(mask.data == int(label))
    if idx.size == 0:
        raise ValueError(f"label {label} not present in mask")
    mean_vox = idx.mean(axis=0)
    return tuple(mask.grid.voxel_to_mm(mean_vox))


def instance_bbox_vox(mask: InstanceMask, label: int) -> tuple[np.ndarray, np.ndarray]:
    """Tight inclusive voxel-index bounding box (lo, hi) of an instance."""
    idx = np.argwhere(mask.data == int(label))
    if idx.size == 0:
        raise ValueError(f"label {label} not present in mask")
    return idx.min(axis=0), idx.max(axis=0)


def instance_volume_mm3(mask: InstanceMask, label: int) -> float:
    """Physical volume of one instance in mm^3."""
    count = int(np.count_nonzero(mask.data == int(label)))
    sx, sy, sz = mask.spacing
    return count * sx * sy * sz


def equivalent_diameter_mm(mask: InstanceMask, label: int) -> float:
    """Diameter of the sphere with the same physical volume as the instance."""
    vol = instance_volume_mm3(mask, label)
    return 2.0 * (3.0 * vol / (4.0 * np.pi)) ** (1.0 / 3.0)


def surface_voxels(binary: np.ndarray) -> np.ndarray:
    """Indices (N, 3) of foreground voxels 6-adjacent to background or to the
    grid boundary."""
    fg = np.asarray(binary, dtype=bool)
    if not fg.any():
        return np.zeros((0, 3), dtype=np.int64)
    core = ndimage.binary_erosion(
        fg, structure=ndimage.generate_binary_structure(3, 1), border_value=0
    )
    return np.argwhere(fg & ~core)
