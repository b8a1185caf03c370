"""Image codecs (8-bit PNG / PPM) and the binary cloud file format.

Cloud file layout, all little-endian::

    magic  b"GS2D"
    u32    version word: low 16 bits = 1, bit 16 set when a raw block follows
    u32    H, W, m, N
    f32    N x 9 activated values (alpha, mu_x, mu_y, sigma_x, sigma_y, rho, r, g, b)
    f32    N x 9 raw values, same column order (only when flagged)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import core
from .core import NPARAM, GaussianCloud

MAGIC = b"GS2D"
VERSION = 1
FLAG_RAW = 1 << 16
_HEADER = struct.Struct("<4sIIIII")
_REC = np.dtype("<f4")


class ImageFormatError(ValueError):
    pass


class CloudFormatError(ValueError):
    pass


# images ------------------------------------------------------------------------

def _png_bit_depth(path: Path) -> int | None:
    with open(path, "rb") as f:
        head = f.read(26)
    if head[:8] != b"\x89PNG\r\n\x1a\n" or len(head) < 26:
        return None
    return head[24]


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or PPM as ``(h, w, 3)`` float64 in [0, 1]."""
    path = Path(path)
    depth = _png_bit_depth(path) if path.exists() else None
    if depth is not None and depth > 8:
        raise ImageFormatError(f"PNG: unsupported {depth}-bit depth (only 8-bit images)")
    try:
        with Image.open(path) as im:
            fmt = im.format or path.suffix.lstrip(".").upper()
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise ImageFormatError(f"{fmt}: unsupported high bit depth mode {im.mode}")
            if im.mode not in ("RGB", "L", "RGBA", "LA", "P", "1"):
                raise ImageFormatError(f"{fmt}: unsupported mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        fmt = path.suffix.lstrip(".").upper() or "image"
        raise ImageFormatError(f"{fmt}: cannot read {path}: {exc}") from exc
    return arr / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img: np.ndarray):
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in (".png", ".ppm"):
        raise ImageFormatError(f"{ext or 'no extension'}: unsupported output format (use .png or .ppm)")
    data = to_uint8(img)
    if data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=2)
    Image.fromarray(data, "RGB").save(path, format="PNG" if ext == ".png" else "PPM")


# clouds ------------------------------------------------------------------------

@dataclass
class CloudFile:
    height: int
    width: int
    density: int
    activated: np.ndarray  # (N, 9) float32
    raw: np.ndarray | None = None  # (N, 9) float32

    @property
    def n(self) -> int:
        return self.activated.shape[0]

    @classmethod
    def from_cloud(cls, cloud: GaussianCloud, include_raw: bool = True) -> "CloudFile":
        act = cloud.activated().astype(np.float32)
        raw = cloud.raw.astype(np.float32) if include_raw else None
        return cls(cloud.height, cloud.width, cloud.density, act, raw)

    def params(self) -> tuple[np.ndarray, int, int]:
        """``(activated, H, W)`` in float64, accepted by the rasterizer directly."""
        return self.activated.astype(np.float64), self.height, self.width

    def to_cloud(self) -> GaussianCloud:
        refs = core.reference_grid(self.height, self.width, self.density)
        if self.raw is not None:
            raw = self.raw.astype(np.float64)
        else:
            raw = core.deactivate_array(self.activated.astype(np.float64), refs)
        return GaussianCloud(self.height, self.width, self.density, raw, refs)

    def header_lines(self) -> list[str]:
        return [f"version={VERSION}", f"height={self.height}", f"width={self.width}",
                f"density={self.density}", f"n={self.n}",
                f"raw_block={'yes' if self.raw is not None else 'no'}"]


def encode_cloud(cf: CloudFile) -> bytes:
    n = cf.activated.shape[0]
    if n != cf.density * cf.height * cf.width:
        raise CloudFormatError("N must equal m*H*W")
    word = VERSION | (FLAG_RAW if cf.raw is not None else 0)
    parts = [_HEADER.pack(MAGIC, word, cf.height, cf.width, cf.density, n),
             np.ascontiguousarray(cf.activated, dtype=_REC).reshape(n, NPARAM).tobytes()]
    if cf.raw is not None:
        parts.append(np.ascontiguousarray(cf.raw, dtype=_REC).reshape(n, NPARAM).tobytes())
    return b"".join(parts)


def decode_cloud(buf: bytes) -> CloudFile:
    if len(buf) < _HEADER.size:
        raise CloudFormatError("file too short for header")
    magic, word, h, w, m, n = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CloudFormatError(f"bad magic {magic!r}")
    if word & 0xFFFF != VERSION:
        raise CloudFormatError(f"unsupported version {word & 0xFFFF}")
    if word & ~(0xFFFF | FLAG_RAW):
        raise CloudFormatError(f"unknown header flags {word:#x}")
    has_raw = bool(word & FLAG_RAW)
    if n != m * h * w:
        raise CloudFormatError(f"N={n} does not equal m*H*W={m * h * w}")
    rec = n * NPARAM * _REC.itemsize
    expected = _HEADER.size + rec * (2 if has_raw else 1)
    if len(buf) != expected:
        raise CloudFormatError(f"length {len(buf)} does not match header (expected {expected})")
    act = np.frombuffer(buf, dtype=_REC, count=n * NPARAM, offset=_HEADER.size).reshape(n, NPARAM)
    raw = None
    if has_raw:
        raw = np.frombuffer(buf, dtype=_REC, count=n * NPARAM,
                            offset=_HEADER.size + rec).reshape(n, NPARAM).copy()
    return CloudFile(h, w, m, act.astype(np.float32), raw)


def save_cloud(path, cloud) -> None:
    cf = cloud if isinstance(cloud, CloudFile) else CloudFile.from_cloud(cloud)
    Path(path).write_bytes(encode_cloud(cf))


def load_cloud(path) -> CloudFile:
    return decode_cloud(Path(path).read_bytes())
