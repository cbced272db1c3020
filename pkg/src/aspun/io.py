"""Binary containers and trace files.

Cube container ``HSC1`` (cubes, masks, and measurements):

    bytes 0..3   ASCII magic "HSC1"
    bytes 4..15  three u32 little-endian: H, W, C
    then         H*W*C IEEE-754 f32 little-endian, (h, w, c) row-major

Masks are stored with C = 1, measurements with C = 1 and the extended
width.  Parameter checkpoint ``ASPW1``:

    bytes 0..4   ASCII magic "ASPW1"
    bytes 5..8   u32 LE entry count
    per entry    u16 LE name length, UTF-8 name, u8 rank,
                 rank * u32 LE extents, then f64 LE values

All writers are atomic: content goes to a temp file in the target
directory which is then renamed over the destination.
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

HSC1_MAGIC = b"HSC1"
ASPW1_MAGIC = b"ASPW1"


def _atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_cube_file(path, data: np.ndarray):
    """Write a cube, mask, or measurement as HSC1.  2D input is taken as C=1."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"HSC1 payload must be 2D or 3D, got shape {arr.shape}")
    height, width, channels = arr.shape
    header = HSC1_MAGIC + struct.pack("<III", height, width, channels)
    _atomic_write_bytes(path, header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_cube_file(path) -> np.ndarray:
    """Read an HSC1 file into a float64 array of shape (H, W, C)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != HSC1_MAGIC:
        raise FormatError(f"{path}: bad HSC1 magic", offset=0)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated HSC1 header", offset=len(raw))
    height, width, channels = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * height * width * channels
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated HSC1 payload, expected {expected} bytes", offset=len(raw)
        )
    values = np.frombuffer(raw, dtype="<f4", count=height * width * channels, offset=16)
    return values.reshape(height, width, channels).astype(np.float64)


def read_plane_file(path) -> np.ndarray:
    """Read an HSC1 file that must hold a single plane (mask or measurement)."""
    arr = read_cube_file(path)
    if arr.shape[2] != 1:
        raise FormatError(f"{path}: expected C=1 plane, got C={arr.shape[2]}", offset=12)
    return arr[:, :, 0]


def write_checkpoint(path, state: dict[str, np.ndarray]):
    """Write named parameter arrays as ASPW1, preserving entry order."""
    chunks = [ASPW1_MAGIC, struct.pack("<I", len(state))]
    for name, value in state.items():
        arr = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ShapeError(f"parameter name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ShapeError(f"parameter rank too large: {arr.ndim}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    _atomic_write_bytes(path, b"".join(chunks))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Read an ASPW1 checkpoint into an ordered name -> float64 array map."""
    raw = Path(path).read_bytes()
    if len(raw) < 5 or raw[:5] != ASPW1_MAGIC:
        raise FormatError(f"{path}: bad ASPW1 magic", offset=0)
    if len(raw) < 9:
        raise FormatError(f"{path}: truncated ASPW1 header", offset=len(raw))
    (count,) = struct.unpack("<I", raw[5:9])
    pos = 9
    state: dict[str, np.ndarray] = {}

    def need(nbytes, what):
        if len(raw) < pos + nbytes:
            raise FormatError(f"{path}: truncated ASPW1 {what}", offset=len(raw))

    for _ in range(count):
        need(2, "name length")
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        need(name_len, "name")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        need(1, "rank")
        rank = raw[pos]
        pos += 1
        need(4 * rank, "extents")
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        need(8 * size, "values")
        values = np.frombuffer(raw, dtype="<f8", count=size, offset=pos)
        pos += 8 * size
        state[name] = values.reshape(shape).astype(np.float64)
    return state


def write_csv(path, header: list[str], rows):
    """Write a simple comma-separated trace atomically."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_pgm(path, band: np.ndarray):
    """Export a single band as binary 8-bit PGM, clipping values to [0, 1]."""
    arr = np.asarray(band, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"PGM export needs a 2D band, got shape {arr.shape}")
    scaled = np.clip(arr, 0.0, 1.0) * 255.0
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    _atomic_write_bytes(path, header + np.round(scaled).astype(np.uint8).tobytes())
