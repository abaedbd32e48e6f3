"""PNG image I/O and pixel/tensor conversion.

The codec is self-contained on top of zlib: it reads 8-bit grayscale,
RGB, and their alpha variants (alpha is dropped, grayscale replicated to
three channels) and writes 8-bit RGB.  Parse failures report the byte
offset where the file stopped making sense, so truncation and corruption
are distinguishable.

Pixels map to tensors by x = 2*(p/255) - 1, so 0 -> -1.0 and 255 -> +1.0.
The inverse clamps to [-1, 1] and quantizes with round-half-up; the
roundtrip is exact for every 8-bit value.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class PngError(ValueError):
    """Malformed PNG; the message names the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class ImageBuffer:
    """8-bit RGB pixels, row-major [height, width, 3]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError(
                f"image buffer must be uint8 [H,W,3], got {arr.dtype} {arr.shape}"
            )
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3


# channels per PNG color type we accept (all at bit depth 8)
_TYPE_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def load_image(path: str) -> ImageBuffer:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _SIGNATURE:
        raise PngError("not a PNG file: bad signature", 0)

    off = 8
    header = None
    idat = bytearray()
    idat_offset = None
    seen_end = False
    while off < len(blob):
        if off + 8 > len(blob):
            raise PngError("truncated chunk header", off)
        (length,) = struct.unpack(">I", blob[off : off + 4])
        ctype = blob[off + 4 : off + 8]
        data_start = off + 8
        data_end = data_start + length
        if data_end + 4 > len(blob):
            raise PngError(f"truncated {ctype!r} chunk", off)
        data = blob[data_start:data_end]
        (crc,) = struct.unpack(">I", blob[data_end : data_end + 4])
        if zlib.crc32(ctype + data) != crc:
            raise PngError(f"CRC mismatch in {ctype!r} chunk", data_end)
        if ctype == b"IHDR":
            if length != 13:
                raise PngError(f"IHDR length {length} != 13", off)
            header = struct.unpack(">IIBBBBB", data)
        elif ctype == b"IDAT":
            if header is None:
                raise PngError("IDAT before IHDR", off)
            if idat_offset is None:
                idat_offset = off
            idat += data
        elif ctype == b"IEND":
            seen_end = True
            off = data_end + 4
            break
        # ancillary chunks are skipped
        off = data_end + 4
    if header is None:
        raise PngError("missing IHDR chunk", off)
    if not seen_end:
        raise PngError("missing IEND chunk", off)

    width, height, depth, color_type, compression, filt, interlace = header
    if width == 0 or height == 0:
        raise PngError(f"invalid dimensions {width}x{height}", 16)
    if depth != 8:
        raise PngError(f"unsupported bit depth {depth}, need 8", 24)
    if color_type not in _TYPE_CHANNELS:
        raise PngError(f"unsupported color type {color_type}", 25)
    if compression != 0 or filt != 0:
        raise PngError("unsupported compression/filter method", 26)
    if interlace != 0:
        raise PngError("interlaced PNG not supported", 28)

    if idat_offset is None:
        raise PngError("no IDAT chunk", off)
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as e:
        raise PngError(f"corrupt image data: {e}", idat_offset) from None
    channels = _TYPE_CHANNELS[color_type]
    stride = width * channels
    expected = (stride + 1) * height
    if len(raw) != expected:
        raise PngError(
            f"decompressed to {len(raw)} bytes, expected {expected}", idat_offset
        )
    pixels = _unfilter(raw, height, stride, channels)
    pixels = pixels.reshape(height, width, channels)

    if color_type == 0:
        rgb = np.repeat(pixels, 3, axis=2)
    elif color_type == 2:
        rgb = pixels
    elif color_type == 4:
        rgb = np.repeat(pixels[:, :, :1], 3, axis=2)
    else:  # RGBA
        rgb = pixels[:, :, :3]
    return ImageBuffer(np.ascontiguousarray(rgb))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((height, stride), dtype=np.uint8)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        pos += 1
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos).copy()
        pos += stride
        prev = out[y - 1] if y else np.zeros(stride, dtype=np.uint8)
        if ftype == 0:
            out[y] = line
        elif ftype == 1:  # add left neighbor
            for i in range(stride):
                left = out[y, i - bpp] if i >= bpp else 0
                out[y, i] = (int(line[i]) + int(left)) & 0xFF
        elif ftype == 2:  # add up neighbor
            out[y] = line + prev
        elif ftype == 3:  # add mean of left and up
            for i in range(stride):
                left = int(out[y, i - bpp]) if i >= bpp else 0
                out[y, i] = (int(line[i]) + (left + int(prev[i])) // 2) & 0xFF
        elif ftype == 4:  # Paeth predictor
            for i in range(stride):
                left = int(out[y, i - bpp]) if i >= bpp else 0
                up_left = int(prev[i - bpp]) if i >= bpp else 0
                out[y, i] = (int(line[i]) + _paeth(left, int(prev[i]), up_left)) & 0xFF
        else:
            raise PngError(
                f"unknown filter type {ftype} in row {y} of the decompressed stream",
                pos - 1 - stride,
            )
    return out


def save_image(buffer: ImageBuffer, path: str) -> None:
    """Write 8-bit RGB, unfiltered scanlines, atomically."""
    from .serialize import atomic_write_bytes

    h, w = buffer.height, buffer.width
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    rows = bytearray()
    for y in range(h):
        rows += b"\x00" + buffer.data[y].tobytes()
    idat = zlib.compress(bytes(rows), 9)

    def chunk(ctype: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + ctype
            + data
            + struct.pack(">I", zlib.crc32(ctype + data))
        )

    blob = _SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat) + chunk(b"IEND", b"")
    atomic_write_bytes(path, blob)


def normalize(buffer: ImageBuffer) -> Tensor:
    """[H,W,3] uint8 -> Tensor [3,H,W] in [-1,1]."""
    arr = buffer.data.astype(np.float32) / 255.0
    return Tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)) * 2.0 - 1.0)


def denormalize(tensor) -> ImageBuffer:
    """Tensor or array [3,H,W] -> clamped, round-half-up 8-bit image."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected [3,H,W], got shape {arr.shape}")
    clamped = np.clip(arr.astype(np.float64), -1.0, 1.0)
    quantized = np.floor((clamped + 1.0) / 2.0 * 255.0 + 0.5)
    return ImageBuffer(quantized.astype(np.uint8).transpose(1, 2, 0))


def resize_box(buffer: ImageBuffer, width: int, height: int) -> ImageBuffer:
    """Area-averaging resize; each output pixel averages its source box."""
    if width < 1 or height < 1:
        raise ValueError(f"invalid target size {width}x{height}")
    src = buffer.data.astype(np.float64)
    resized = _box_axis(_box_axis(src, height, axis=0), width, axis=1)
    return ImageBuffer(np.floor(resized + 0.5).astype(np.uint8))


def _box_axis(arr: np.ndarray, target: int, axis: int) -> np.ndarray:
    """Average fractional source boxes along one axis."""
    source = arr.shape[axis]
    if source == target:
        return arr
    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros((target,) + moved.shape[1:], dtype=np.float64)
    scale = source / target
    for i in range(target):
        lo, hi = i * scale, (i + 1) * scale
        first, last = int(np.floor(lo)), int(np.ceil(hi))
        weights = np.ones(last - first)
        weights[0] -= lo - first
        weights[-1] -= last - hi
        segment = moved[first:last]
        out[i] = np.tensordot(weights, segment, axes=(0, 0)) / weights.sum()
    return np.moveaxis(out, 0, axis)
