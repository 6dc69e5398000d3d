"""8-bit image container and file I/O.

Images are stored row-major, channel-interleaved, as a uint8 array of shape
(height, width, channels) with channels 1 (gray) or 3 (RGB). Binary PGM (P5)
and PPM (P6) are the primary formats and round-trip bit-exactly; a minimal
PNG codec (8-bit, color types 0 and 2, no interlace) is provided as a
convenience. Float planes are an in-memory representation only.
"""

from __future__ import annotations

import math
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DimensionError, ImageFormatError

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageBuffer:
    """Validated 8-bit image: uint8 samples of shape (height, width, channels)."""

    __slots__ = ("samples",)

    def __init__(self, samples: np.ndarray):
        arr = np.asarray(samples)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise DimensionError(f"expected (h, w, 1|3) samples, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"image sides must be positive, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise DimensionError(f"samples must be uint8, got {arr.dtype}")
        self.samples = np.ascontiguousarray(arr)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    def to_planes(self) -> np.ndarray:
        """Float64 copy of shape (channels, height, width), values in [0, 255]."""
        return self.samples.astype(np.float64).transpose(2, 0, 1)

    @classmethod
    def from_planes(cls, planes: np.ndarray) -> "ImageBuffer":
        """Quantize float planes (c, h, w): clamp to [0, 255], round half away from zero."""
        p = np.asarray(planes, dtype=np.float64)
        if p.ndim == 2:
            p = p[None]
        if p.ndim != 3:
            raise DimensionError(f"expected (c, h, w) planes, got shape {p.shape}")
        q = np.floor(np.clip(p, 0.0, 255.0) + 0.5)
        return cls(np.clip(q, 0.0, 255.0).astype(np.uint8).transpose(1, 2, 0))

    def luma(self) -> "ImageBuffer":
        """Rec. 601 grayscale reduction; identity copy for single-channel input."""
        if self.channels == 1:
            return ImageBuffer(self.samples.copy())
        f = self.samples.astype(np.float64)
        y = 0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]
        return ImageBuffer.from_planes(y[None])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ImageBuffer) and np.array_equal(self.samples, other.samples)

    def __repr__(self) -> str:
        return f"ImageBuffer({self.width}x{self.height}x{self.channels})"


def _parse_netpbm_header(raw: bytes, path: str) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, data offset); comments allowed."""
    if raw[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file")
    magic = raw[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise ImageFormatError(f"{path}: malformed header")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    return magic, width, height, maxval, pos


def _read_netpbm(raw: bytes, path: str) -> ImageBuffer:
    magic, width, height, maxval, pos = _parse_netpbm_header(raw, path)
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit images supported, maxval={maxval}")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    data = raw[pos:pos + n]
    if len(data) < n:
        raise ImageFormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(arr.copy())


def _write_netpbm(img: ImageBuffer) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + img.samples.tobytes()


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + tag + payload + \
        struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)


def _write_png(img: ImageBuffer) -> bytes:
    color_type = 0 if img.channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, color_type, 0, 0, 0)
    rows = img.samples.reshape(img.height, img.width * img.channels)
    scanlines = b"".join(b"\x00" + rows[y].tobytes() for y in range(img.height))
    return _PNG_SIGNATURE + _png_chunk(b"IHDR", ihdr) + \
        _png_chunk(b"IDAT", zlib.compress(scanlines, 9)) + _png_chunk(b"IEND", b"")


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter_png(data: bytes, width: int, height: int, channels: int, path: str) -> np.ndarray:
    stride = width * channels
    if len(data) != (stride + 1) * height:
        raise ImageFormatError(f"{path}: decompressed size mismatch")
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    bpp = channels
    for y in range(height):
        ftype = data[y * (stride + 1)]
        raw = np.frombuffer(data, dtype=np.uint8,
                            count=stride, offset=y * (stride + 1) + 1)
        if ftype == 0:
            recon = raw.copy()
        elif ftype == 1:
            recon = raw.astype(np.int64).reshape(-1, bpp)
            np.cumsum(recon, axis=0, out=recon)
            recon = (recon % 256).astype(np.uint8).reshape(-1)
        elif ftype == 2:
            recon = raw + prev
        elif ftype == 3:
            recon = raw.copy()
            for i in range(stride):
                left = int(recon[i - bpp]) if i >= bpp else 0
                recon[i] = (int(raw[i]) + (left + int(prev[i])) // 2) % 256
        elif ftype == 4:
            recon = raw.copy()
            for i in range(stride):
                left = int(recon[i - bpp]) if i >= bpp else 0
                up_left = int(prev[i - bpp]) if i >= bpp else 0
                recon[i] = (int(raw[i]) + _paeth(left, int(prev[i]), up_left)) % 256
        else:
            raise ImageFormatError(f"{path}: unknown PNG filter type {ftype}")
        out[y] = recon
        prev = out[y]
    return out.reshape(height, width, channels)


def _iter_png_chunks(raw: bytes, path: str):
    pos = len(_PNG_SIGNATURE)
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise ImageFormatError(f"{path}: truncated PNG chunk header")
        (length,) = struct.unpack_from(">I", raw, pos)
        tag = raw[pos + 4:pos + 8]
        payload = raw[pos + 8:pos + 8 + length]
        if len(payload) < length or pos + 12 + length > len(raw):
            raise ImageFormatError(f"{path}: truncated PNG chunk {tag!r}")
        (crc,) = struct.unpack_from(">I", raw, pos + 8 + length)
        if crc != (zlib.crc32(tag + payload) & 0xFFFFFFFF):
            raise ImageFormatError(f"{path}: CRC mismatch in chunk {tag!r}")
        yield tag, payload
        pos += 12 + length


def _parse_png_ihdr(payload: bytes, path: str) -> tuple[int, int, int]:
    width, height, depth, color_type, comp, filt, interlace = \
        struct.unpack(">IIBBBBB", payload)
    if depth != 8:
        raise ImageFormatError(f"{path}: only 8-bit PNG supported, depth={depth}")
    if color_type not in (0, 2):
        raise ImageFormatError(f"{path}: unsupported PNG color type {color_type}")
    if comp != 0 or filt != 0:
        raise ImageFormatError(f"{path}: nonstandard PNG compression/filter method")
    if interlace != 0:
        raise ImageFormatError(f"{path}: interlaced PNG not supported")
    return width, height, 1 if color_type == 0 else 3


def _read_png(raw: bytes, path: str) -> ImageBuffer:
    dims: tuple[int, int, int] | None = None
    idat: list[bytes] = []
    for tag, payload in _iter_png_chunks(raw, path):
        if tag == b"IHDR":
            dims = _parse_png_ihdr(payload, path)
        elif tag == b"IDAT":
            idat.append(payload)
        elif tag == b"IEND":
            break
    if dims is None or not idat:
        raise ImageFormatError(f"{path}: missing IHDR or IDAT")
    width, height, channels = dims
    try:
        data = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"{path}: corrupt PNG stream") from exc
    return ImageBuffer(_unfilter_png(data, width, height, channels, path))


def read_image(path: str | Path) -> ImageBuffer:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except FileNotFoundError:
        raise
    if raw[:8] == _PNG_SIGNATURE:
        return _read_png(raw, str(p))
    if raw[:2] in (b"P5", b"P6"):
        return _read_netpbm(raw, str(p))
    raise ImageFormatError(f"{p}: unrecognized image format")


def write_image(path: str | Path, img: ImageBuffer) -> None:
    """Format chosen by suffix: .png for PNG, anything else is PGM/PPM."""
    p = Path(path)
    if p.suffix.lower() == ".png":
        p.write_bytes(_write_png(img))
    else:
        p.write_bytes(_write_netpbm(img))


def probe_size(path: str | Path) -> tuple[int, int, int]:
    """Read (width, height, channels) from the file header without decoding pixels."""
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(4096)
    if head[:8] == _PNG_SIGNATURE:
        if head[12:16] != b"IHDR":
            raise ImageFormatError(f"{p}: first PNG chunk is not IHDR")
        return _parse_png_ihdr(head[16:29], str(p))
    if head[:2] in (b"P5", b"P6"):
        magic, width, height, maxval, _ = _parse_netpbm_header(head, str(p))
        if maxval != 255:
            raise ImageFormatError(f"{p}: only 8-bit images supported, maxval={maxval}")
        return width, height, 1 if magic == b"P5" else 3
    raise ImageFormatError(f"{p}: unrecognized image format")


def tile_grid(images: list[ImageBuffer], cols: int | None = None) -> ImageBuffer:
    """Mosaic of equally sized images; ceil(sqrt(count)) columns by default."""
    if not images:
        raise DimensionError("cannot tile an empty image list")
    h, w, c = images[0].samples.shape
    for img in images:
        if img.samples.shape != (h, w, c):
            raise DimensionError("all tiles must share the same size and channel count")
    if cols is None:
        cols = math.ceil(math.sqrt(len(images)))
    rows = math.ceil(len(images) / cols)
    canvas = np.zeros((rows * h, cols * w, c), dtype=np.uint8)
    for k, img in enumerate(images):
        r, col = divmod(k, cols)
        canvas[r * h:(r + 1) * h, col * w:(col + 1) * w] = img.samples
    return ImageBuffer(canvas)
