"""Minimal NIfTI-1 I/O for axis-aligned volumes and instance masks.

Supports ``.nii`` and ``.nii.gz`` (gzip detected by the 0x1f8b prefix),
little- and big-endian headers, and the datatypes uint8, int16, uint16,
int32, float32 and float64. Data is converted to the package's canonical
representation: float32 scalar volumes / int32 label masks, axis order
(x, y, z) with x fastest on disk, positive axis directions.

Orientation handling is deliberately restricted: the qform/sform direction
matrix must be axis-aligned up to permutation and flips. Oblique affines
are rejected with the offending matrix in the message.
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path

import numpy as np

from .grid import GridRef, InstanceMask, Volume

_DT_UINT8 = 2
_DT_INT16 = 4
_DT_INT32 = 8
_DT_FLOAT32 = 16
_DT_FLOAT64 = 64
_DT_UINT16 = 512

_DTYPES = {
    _DT_UINT8: np.dtype(np.uint8),
    _DT_INT16: np.dtype(np.int16),
    _DT_INT32: np.dtype(np.int32),
    _DT_FLOAT32: np.dtype(np.float32),
    _DT_FLOAT64: np.dtype(np.float64),
    _DT_UINT16: np.dtype(np.uint16),
}

_MASK_DATATYPES = (_DT_UINT8, _DT_UINT16)
_HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"


class NiftiFormatError(ValueError):
    """The file is not a NIfTI-1 volume this package can read."""


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _quaternion_to_matrix(b: float, c: float, d: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = float(np.sqrt(max(a2, 0.0)))
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )


def _canonicalize(data: np.ndarray, direction: np.ndarray, translation: np.ndarray):
    """Reorder/flip data so that voxel axes align with +x, +y, +z world axes."""
    scale = np.abs(direction).max()
    if scale <= 0:
        raise NiftiFormatError("degenerate direction matrix (all zeros)")
    significant = np.abs(direction) > 1e-4 * scale
    if not (np.all(significant.sum(axis=0) == 1) and np.all(significant.sum(axis=1) == 1)):
        raise NiftiFormatError(
            "non-axis-aligned orientation; direction matrix:\n" + str(direction)
        )

    perm = [int(np.nonzero(significant[i])[0][0]) for i in range(3)]
    data = np.transpose(data, axes=perm)
    spacing = []
    origin = []
    for world_axis in range(3):
        vox_axis = perm[world_axis]
        step = float(direction[world_axis, vox_axis])
        n = data.shape[world_axis]
        if step < 0:
            data = np.flip(data, axis=world_axis)
            origin.append(float(translation[world_axis]) + step * (n - 1))
        else:
            origin.append(float(translation[world_axis]))
        spacing.append(abs(step))
    return np.ascontiguousarray(data), tuple(spacing), tuple(origin)


def load_nifti(path, as_mask: bool | None = None):
    """Load a NIfTI-1 file as a Volume or InstanceMask.

    ``as_mask=None`` auto-detects: uint8/uint16 files load as InstanceMask,
    everything else as Volume. Pass True/False to override.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = _read_bytes(path)
    if len(raw) < _HEADER_SIZE + 4:
        raise NiftiFormatError(f"{path}: file too short for a NIfTI-1 header")

    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    swap = False
    if sizeof_hdr != _HEADER_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != _HEADER_SIZE:
            raise NiftiFormatError(f"{path}: bad sizeof_hdr (not a NIfTI-1 file)")
        swap = True
    end = ">" if swap else "<"

    magic = raw[344:348]
    if magic not in (_MAGIC_SINGLE, _MAGIC_PAIR):
        raise NiftiFormatError(f"{path}: bad magic {magic!r}")
    if magic == _MAGIC_PAIR:
        raise NiftiFormatError(f"{path}: detached .hdr/.img pairs are not supported")

    dim = struct.unpack_from(f"{end}8h", raw, 40)
    ndim = dim[0]
    if ndim < 3 or any(d <= 0 for d in dim[1:4]):
        raise NiftiFormatError(f"{path}: expected 3 spatial dimensions, dim={dim}")
    if ndim > 3 and any(d > 1 for d in dim[4 : 1 + ndim]):
        raise NiftiFormatError(f"{path}: 4D+ volumes are not supported, dim={dim}")
    shape = tuple(int(d) for d in dim[1:4])

    (datatype,) = struct.unpack_from(f"{end}h", raw, 70)
    if datatype not in _DTYPES:
        raise NiftiFormatError(f"{path}: unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype].newbyteorder(end)

    pixdim = struct.unpack_from(f"{end}8f", raw, 76)
    (vox_offset,) = struct.unpack_from(f"{end}f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(f"{end}2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(f"{end}2h", raw, 252)

    if sform_code > 0:
        srow = struct.unpack_from(f"{end}12f", raw, 280)
        direction = np.array(
            [srow[0:3], srow[4:7], srow[8:11]], dtype=np.float64
        )
        translation = np.array([srow[3], srow[7], srow[11]], dtype=np.float64)
    elif qform_code > 0:
        qb, qc, qd = struct.unpack_from(f"{end}3f", raw, 256)
        qx, qy, qz = struct.unpack_from(f"{end}3f", raw, 268)
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        rot = _quaternion_to_matrix(qb, qc, qd)
        steps = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac], dtype=np.float64)
        direction = rot * steps[None, :]
        translation = np.array([qx, qy, qz], dtype=np.float64)
    else:
        direction = np.diag([abs(pixdim[1]) or 1.0, abs(pixdim[2]) or 1.0, abs(pixdim[3]) or 1.0])
        translation = np.zeros(3)

    offset = int(vox_offset) if vox_offset >= _HEADER_SIZE else _HEADER_SIZE + 4
    count = shape[0] * shape[1] * shape[2]
    nbytes = count * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise NiftiFormatError(f"{path}: truncated data section")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(shape, order="F")

    scaled = (scl_slope not in (0.0, 1.0)) or (scl_inter != 0.0)
    if scaled:
        data = data.astype(np.float64) * scl_slope + scl_inter

    data, spacing, origin = _canonicalize(np.asarray(data), direction, translation)
    grid = GridRef(data.shape, spacing, origin)

    if as_mask is None:
        as_mask = datatype in _MASK_DATATYPES and not scaled
    if as_mask:
        if not np.all(data == np.round(data)):
            raise NiftiFormatError(f"{path}: non-integer values cannot form an InstanceMask")
        return InstanceMask(data.astype(np.int32), grid)
    if np.isnan(np.asarray(data, dtype=np.float64)).any():
        raise NiftiFormatError(f"{path}: volume contains NaN voxels")
    return Volume(np.asarray(data, dtype=np.float32), grid)


def _build_header(shape, spacing, origin, datatype: int, bitpix: int) -> bytes:
    hdr = bytearray(_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, _HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, shape[0], shape[1], shape[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into(
        "<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0
    )
    struct.pack_into("<f", hdr, 108, float(_HEADER_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    hdr[123] = 2  # spatial units: mm
    descrip = b"lesiontrack"
    hdr[148 : 148 + len(descrip)] = descrip
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform_code=0, sform_code=1
    struct.pack_into(
        "<12f",
        hdr,
        280,
        spacing[0], 0.0, 0.0, origin[0],
        0.0, spacing[1], 0.0, origin[1],
        0.0, 0.0, spacing[2], origin[2],
    )
    hdr[344:348] = _MAGIC_SINGLE
    return bytes(hdr)


def save_nifti(obj, path) -> None:
    """Write a Volume (float32) or InstanceMask (uint16) as NIfTI-1.

    A ``.gz`` suffix selects gzip compression (with a fixed mtime so repeated
    runs produce byte-identical files).
    """
    path = Path(path)
    if isinstance(obj, InstanceMask):
        if obj.data.max(initial=0) > np.iinfo(np.uint16).max:
            raise ValueError("mask labels exceed the uint16 on-disk range")
        payload = obj.data.astype("<u2").ravel(order="F").tobytes()
        header = _build_header(obj.shape, obj.spacing, obj.origin, _DT_UINT16, 16)
    elif isinstance(obj, Volume):
        payload = obj.data.astype("<f4").ravel(order="F").tobytes()
        header = _build_header(obj.shape, obj.spacing, obj.origin, _DT_FLOAT32, 32)
    else:
        raise TypeError(f"cannot save object of type {type(obj).__name__}")

    blob = header + b"\x00\x00\x00\x00" + payload
    if path.suffix == ".gz":
        blob = gzip.compress(blob, mtime=0)
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Displacement-field sidecar format: three scalar NIfTI files plus a JSON
# manifest binding them, all displacements in mm.
# ---------------------------------------------------------------------------

FIELD_COMPONENT_SUFFIXES = ("_dx", "_dy", "_dz")


def save_field(field, base_path) -> Path:
    """Write a DisplacementField as three NIfTI components plus a JSON sidecar.

    ``base_path`` like ``out/pair0`` produces ``pair0_dx.nii.gz`` etc. and
    ``pair0.json``; returns the sidecar path.
    """
    from .fields import DisplacementField  # local import to avoid a cycle

    if not isinstance(field, DisplacementField):
        raise TypeError("save_field expects a DisplacementField")
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    components = {}
    for axis, suffix in enumerate(FIELD_COMPONENT_SUFFIXES):
        comp_path = base.with_name(base.name + suffix + ".nii.gz")
        save_nifti(Volume(field.data[..., axis].astype(np.float32), field.grid), comp_path)
        components[suffix.lstrip("_")] = comp_path.name
    sidecar = base.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {
                "format": "displacement_field",
                "units": "mm",
                "components": components,
                "shape": list(field.grid.shape),
                "spacing": list(field.grid.spacing),
                "origin": list(field.grid.origin),
            },
            indent=2,
        )
        + "\n"
    )
    return sidecar


def load_field(sidecar_path):
    """Load a DisplacementField written by :func:`save_field`."""
    from .fields import DisplacementField

    sidecar = Path(sidecar_path)
    meta = json.loads(sidecar.read_text())
    if meta.get("format") != "displacement_field":
        raise NiftiFormatError(f"{sidecar}: not a displacement-field sidecar")
    comps = []
    grid = None
    for key in ("dx", "dy", "dz"):
        vol = load_nifti(sidecar.parent / meta["components"][key], as_mask=False)
        comps.append(np.asarray(vol.data, dtype=np.float64))
        grid = vol.grid
    return DisplacementField(np.stack(comps, axis=-1), grid)
