"""Minimal NIfTI-1 reader/writer for the layouts this package produces and consumes.

Supported: single-file .nii / .nii.gz, 348-byte little-endian header with magic
"n+1\\0", datatypes uint8, int16, uint16, float32. Layouts: plain 3D scalar
volumes and label maps, two-channel fused volumes (dim[0]=4 with dim[4]=2, or
dim[0]=5 with dim[5]=2), and three-component displacement fields (dim[0]=5 with
dim[4]=1, dim[5]=3). scl_slope/scl_inter are applied on read (slope 0 means
unscaled). Grid geometry prefers the sform, falls back to the qform, then to
identity axes; voxel data is stored x-fastest as the format requires.
"""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    CorruptHeaderError,
    DimensionalityError,
    UnsupportedDatatypeError,
)
from .fusion import FusedVolume
from .transforms import DisplacementField
from .volume import GridMeta, LabelMap, Volume

HEADER_SIZE = 348
MAGIC = b"n+1\x00"

# code -> numpy dtype, little-endian
_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    16: np.dtype("<f4"),
    512: np.dtype("<u2"),
}
_CODES = {v: k for k, v in _DTYPES.items()}

_HEADER_DTD = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _HEADER_DTD.itemsize == HEADER_SIZE


def _open(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def _quaternion_rotation(b: float, c: float, d: float, qfac: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 0 else 0.0
    r = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    r[:, 2] *= qfac
    return r


def _grid_from_header(hdr) -> GridMeta:
    dims = tuple(int(d) for d in hdr["dim"][1:4])
    spacing = tuple(float(s) for s in hdr["pixdim"][1:4])
    if any(s <= 0 for s in spacing):
        raise CorruptHeaderError(f"non-positive voxel spacing {spacing}")
    if int(hdr["sform_code"]) > 0:
        m = np.array([hdr["srow_x"][:3], hdr["srow_y"][:3], hdr["srow_z"][:3]], dtype=np.float64)
        origin = (float(hdr["srow_x"][3]), float(hdr["srow_y"][3]), float(hdr["srow_z"][3]))
        norms = np.linalg.norm(m, axis=0)
        if np.any(norms <= 0):
            raise CorruptHeaderError("sform has a zero-length column")
        direction = m / norms
    elif int(hdr["qform_code"]) > 0:
        qfac = float(hdr["pixdim"][0])
        qfac = 1.0 if qfac == 0 else qfac
        direction = _quaternion_rotation(
            float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"]), qfac
        )
        origin = (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"]))
    else:
        direction = np.eye(3)
        origin = (0.0, 0.0, 0.0)
    if not np.allclose(direction.T @ direction, np.eye(3), atol=1e-4):
        raise CorruptHeaderError("orientation matrix is not orthonormal")
    # re-orthonormalize float32 header rounding before the strict GridMeta check
    u, _, vt = np.linalg.svd(direction)
    direction = u @ vt
    return GridMeta(dims, spacing, origin, tuple(direction.ravel()))


def _read_raw(path):
    with _open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER_SIZE:
        raise CorruptHeaderError(f"file shorter than the {HEADER_SIZE}-byte header")
    hdr = np.frombuffer(blob[:HEADER_SIZE], dtype=_HEADER_DTD)[0]
    size = int(hdr["sizeof_hdr"])
    if size != HEADER_SIZE:
        swapped = int(np.int32(size).byteswap())
        if swapped == HEADER_SIZE:
            raise CorruptHeaderError("big-endian file; only little-endian is supported")
        raise CorruptHeaderError(f"sizeof_hdr is {size}, expected {HEADER_SIZE}")
    if bytes(hdr["magic"]).rstrip(b"\x00") != MAGIC.rstrip(b"\x00"):
        raise CorruptHeaderError(f"magic {bytes(hdr['magic'])!r} is not {MAGIC!r}")
    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise UnsupportedDatatypeError(f"datatype code {code} is outside the supported subset")
    dtype = _DTYPES[code]
    ndim = int(hdr["dim"][0])
    if ndim < 3 or ndim > 5:
        raise DimensionalityError(f"dim[0] = {ndim}; supported layouts are 3D, 4D and 5D")
    shape = tuple(int(d) for d in hdr["dim"][1 : 1 + ndim])
    if any(d < 1 for d in shape):
        raise CorruptHeaderError(f"non-positive dimension in {shape}")
    offset = int(hdr["vox_offset"])
    need = int(np.prod(shape)) * dtype.itemsize
    if offset < HEADER_SIZE or offset + need > len(blob):
        raise CorruptHeaderError(
            f"payload of {need} bytes at offset {offset} does not fit the file"
        )
    data = np.frombuffer(blob[offset : offset + need], dtype=dtype)
    data = data.reshape(shape, order="F")
    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope == 0.0:
        slope = 1.0
    return hdr, data, slope, inter


def _scaled(data: np.ndarray, slope: float, inter: float) -> np.ndarray:
    out = np.asarray(data, dtype=np.float32)
    if slope != 1.0 or inter != 0.0:
        out = (out * np.float32(slope)) + np.float32(inter)
    return out


def read_nifti(path):
    """Read a file and return the object its layout describes.

    3D float or scaled data gives a Volume; unscaled 3D integer data gives a
    LabelMap; a two-channel 4D/5D layout gives a FusedVolume; a three-component
    5D layout gives a DisplacementField.
    """
    hdr, data, slope, inter = _read_raw(path)
    ndim = int(hdr["dim"][0])
    if ndim == 3:
        meta = _grid_from_header(hdr)
        if data.dtype.kind in "ui" and slope == 1.0 and inter == 0.0:
            return LabelMap(meta, np.asarray(data, dtype=np.int64))
        return Volume(meta, _scaled(data, slope, inter))
    if ndim == 4:
        if data.shape[3] != 2:
            raise DimensionalityError(
                f"4D layout must carry exactly 2 channels, found {data.shape[3]}"
            )
        meta = _grid_from_header(hdr)
        return FusedVolume(meta, _scaled(data, slope, inter))
    # ndim == 5
    if data.shape[3] == 1 and data.shape[4] == 3:
        meta = _grid_from_header(hdr)
        return DisplacementField(meta, _scaled(data[:, :, :, 0, :], slope, inter))
    if data.shape[3] == 1 and data.shape[4] == 2:
        meta = _grid_from_header(hdr)
        return FusedVolume(meta, _scaled(data[:, :, :, 0, :], slope, inter))
    raise DimensionalityError(
        f"5D layout must be 2-channel or 3-component, found trailing dims {data.shape[3:]}"
    )


def read_volume(path) -> Volume:
    obj = read_nifti(path)
    if isinstance(obj, LabelMap):
        return Volume(obj.meta, np.asarray(obj.voxels, dtype=np.float32))
    if not isinstance(obj, Volume):
        raise DimensionalityError(f"{path} does not hold a 3D scalar volume")
    return obj


def read_labels(path) -> LabelMap:
    obj = read_nifti(path)
    if not isinstance(obj, LabelMap):
        raise DimensionalityError(f"{path} does not hold an unscaled integer label map")
    return obj


def read_fused(path) -> FusedVolume:
    obj = read_nifti(path)
    if not isinstance(obj, FusedVolume):
        raise DimensionalityError(f"{path} does not hold a two-channel fused volume")
    return obj


def read_field(path) -> DisplacementField:
    obj = read_nifti(path)
    if not isinstance(obj, DisplacementField):
        raise DimensionalityError(f"{path} does not hold a displacement field")
    return obj


def _base_header(meta: GridMeta, dtype: np.dtype) -> np.ndarray:
    hdr = np.zeros((), dtype=_HEADER_DTD)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["datatype"] = _CODES[dtype]
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"][0] = 1.0
    hdr["pixdim"][1:4] = meta.spacing
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimeters
    hdr["sform_code"] = 2
    hdr["qform_code"] = 0
    d = meta.direction_matrix * np.asarray(meta.spacing)
    hdr["srow_x"][:3] = d[0]
    hdr["srow_y"][:3] = d[1]
    hdr["srow_z"][:3] = d[2]
    hdr["srow_x"][3] = meta.origin[0]
    hdr["srow_y"][3] = meta.origin[1]
    hdr["srow_z"][3] = meta.origin[2]
    hdr["magic"] = MAGIC
    return hdr


def _write_blob(path, hdr: np.ndarray, payload: np.ndarray):
    blob = hdr.tobytes() + b"\x00" * 4 + np.asfortranarray(payload).tobytes(order="F")
    if Path(path).suffix == ".gz":
        # fixed mtime so identical payloads give byte-identical files
        blob = gzip.compress(blob, mtime=0)
    with open(path, "wb") as fh:
        fh.write(blob)


def write_nifti(obj, path):
    """Write a Volume, LabelMap, FusedVolume or DisplacementField to .nii/.nii.gz."""
    if isinstance(obj, Volume):
        hdr = _base_header(obj.meta, np.dtype("<f4"))
        hdr["dim"][0] = 3
        hdr["dim"][1:4] = obj.meta.dims
        hdr["dim"][4:] = 1
        _write_blob(path, hdr, obj.voxels.astype("<f4"))
    elif isinstance(obj, LabelMap):
        if obj.voxels.max(initial=0) > np.iinfo(np.uint16).max:
            raise ConfigError("labels exceed the uint16 range")
        hdr = _base_header(obj.meta, np.dtype("<u2"))
        hdr["dim"][0] = 3
        hdr["dim"][1:4] = obj.meta.dims
        hdr["dim"][4:] = 1
        _write_blob(path, hdr, obj.voxels.astype("<u2"))
    elif isinstance(obj, FusedVolume):
        hdr = _base_header(obj.meta, np.dtype("<f4"))
        hdr["dim"][0] = 4
        hdr["dim"][1:4] = obj.meta.dims
        hdr["dim"][4] = 2
        hdr["dim"][5:] = 1
        _write_blob(path, hdr, obj.channels.astype("<f4"))
    elif isinstance(obj, DisplacementField):
        hdr = _base_header(obj.meta, np.dtype("<f4"))
        hdr["dim"][0] = 5
        hdr["dim"][1:4] = obj.meta.dims
        hdr["dim"][4] = 1
        hdr["dim"][5] = 3
        hdr["dim"][6:] = 1
        hdr["intent_code"] = 1007  # displacement vector
        payload = obj.vectors.astype("<f4").reshape(obj.meta.dims + (1, 3))
        _write_blob(path, hdr, payload)
    else:
        raise ConfigError(f"cannot serialize {type(obj).__name__}")
