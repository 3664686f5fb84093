"""Binary file formats: VOLB volumes/masks and PGM previews.

VOLB layout (little-endian throughout):

====================  ========================================
bytes 0-3             magic ``VOLB``
byte 4                version, currently 1
byte 5                dtype: 0 = float32 scalar field, 1 = uint8 mask
byte 6                ndim: 2 or 3
byte 7                reserved, 0
next ndim * 4 bytes   u32 dims, order (slices,) height, width
rest                  payload, C order (width fastest)
====================  ========================================

Float data is stored as float32 (64-bit values are rounded on write) and
read back as float64; masks round-trip as uint8 0/1. Payloads round-trip
bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VOLB"
VERSION = 1
_MAX_DIM = 2**16


class VolumeFormatError(ValueError):
    """Malformed VOLB data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def write_volume(data: np.ndarray, path) -> None:
    """Write a 2D/3D scalar field (float32) or mask (uint8) to a VOLB file."""
    data = np.asarray(data)
    if data.ndim not in (2, 3):
        raise ValueError(f"VOLB stores 2D or 3D arrays, got ndim {data.ndim}")
    if data.dtype == np.bool_ or np.issubdtype(data.dtype, np.integer):
        payload = (data != 0).astype(np.uint8)
        dtype_code = 1
    else:
        payload = np.ascontiguousarray(data, dtype="<f4")
        dtype_code = 0
    header = MAGIC + struct.pack("<BBBB", VERSION, dtype_code, data.ndim, 0)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_volume(path) -> np.ndarray:
    """Read a VOLB file; float payloads return float64, masks return bool."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise VolumeFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    if len(raw) < 8:
        raise VolumeFormatError("truncated header", len(raw))
    version, dtype_code, ndim, reserved = struct.unpack_from("<BBBB", raw, 4)
    if version != VERSION:
        raise VolumeFormatError(f"unsupported version {version}", 4)
    if dtype_code not in (0, 1):
        raise VolumeFormatError(f"unknown dtype code {dtype_code}", 5)
    if ndim not in (2, 3):
        raise VolumeFormatError(f"ndim must be 2 or 3, got {ndim}", 6)
    if reserved != 0:
        raise VolumeFormatError(f"reserved byte must be 0, got {reserved}", 7)
    dims_end = 8 + 4 * ndim
    if len(raw) < dims_end:
        raise VolumeFormatError("truncated dimension block", len(raw))
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    for i, dim in enumerate(dims):
        if dim == 0 or dim > _MAX_DIM:
            raise VolumeFormatError(f"dimension {dim} out of range [1, {_MAX_DIM}]",
                                    8 + 4 * i)
    count = int(np.prod(dims))
    itemsize = 4 if dtype_code == 0 else 1
    expected = dims_end + count * itemsize
    if len(raw) != expected:
        raise VolumeFormatError(
            f"payload size {len(raw) - dims_end} != expected {count * itemsize}",
            min(len(raw), expected))
    flat = np.frombuffer(raw, dtype="<f4" if dtype_code == 0 else np.uint8,
                         offset=dims_end)
    data = flat.reshape(dims)
    if dtype_code == 0:
        if not np.all(np.isfinite(data)):
            raise VolumeFormatError("payload contains non-finite values", dims_end)
        return data.astype(np.float64)
    return data != 0


def export_pgm(score_map: np.ndarray, path) -> None:
    """Write a min-max normalized binary PGM (P5, maxval 255) preview.

    Constant maps come out all zero; normalization preserves score ranks.
    """
    score_map = np.asarray(score_map, dtype=np.float64)
    if score_map.ndim != 2:
        raise ValueError(f"PGM export needs a 2D map, got ndim {score_map.ndim}")
    if not np.all(np.isfinite(score_map)):
        raise ValueError("map contains non-finite values")
    lo = score_map.min()
    hi = score_map.max()
    if hi > lo:
        scaled = np.rint((score_map - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(score_map)
    h, w = score_map.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.astype(np.uint8).tobytes())
