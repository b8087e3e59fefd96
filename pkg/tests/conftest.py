import numpy as np
import pytest

from lesiontrack.grid import GridRef, InstanceMask, Volume


@pytest.fixture
def unit_grid():
    return GridRef((8, 8, 8), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))


def make_volume(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    data = np.asarray(data, dtype=np.float32)
    return Volume(data, GridRef(data.shape, spacing, origin))


def make_mask(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    data = np.asarray(data, dtype=np.int32)
    return InstanceMask(data, GridRef(data.shape, spacing, origin))


def sphere_mask(shape, center, radius, spacing=(1.0, 1.0, 1.0), label=1):
    """Voxel-center sphere indicator: |idx*spacing - center_mm| <= radius."""
    idx = np.indices(shape).astype(np.float64)
    sp = np.asarray(spacing)
    d2 = sum(((idx[a] - center[a]) * sp[a]) ** 2 for a in range(3))
    data = np.where(d2 <= radius**2, label, 0).astype(np.int32)
    return InstanceMask(data, GridRef(shape, spacing, (0.0, 0.0, 0.0)))
