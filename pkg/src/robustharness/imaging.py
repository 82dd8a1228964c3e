"""Core raster type, codecs, geometry, color math, and the seeded RNG.

An image is a float32 numpy array of shape (H, W, 3), RGB, values in
[0, 1]. All transforms operate on that representation; 8-bit quantization
happens only in the codecs. Geometry uses half-pixel-centered sampling
with edge replication, and interpolation is written in lerp form
(v0 + f*(v1 - v0)) so constant inputs and identity parameters come back
bit-exact.
"""

from __future__ import annotations

import math
import struct
import zlib

import numpy as np

from .errors import DecodeError, DomainError, UnsupportedFormatError

CHANNELS = 3

# ---------------------------------------------------------------------------
# Image construction / validation
# ---------------------------------------------------------------------------


def as_image(array) -> np.ndarray:
    """Coerce to a float32 (H, W, 3) array and validate it."""
    img = np.ascontiguousarray(array, dtype=np.float32)
    check_image(img)
    return img


def check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != CHANNELS:
        raise ValueError(f"image must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image dimensions must be >= 1, got {img.shape}")
    if img.dtype != np.float32:
        raise ValueError(f"image dtype must be float32, got {img.dtype}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    lo, hi = float(img.min()), float(img.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"image values outside [0, 1]: min={lo}, max={hi}")


def constant_image(height: int, width: int, value) -> np.ndarray:
    """Image filled with a constant gray level or RGB triple."""
    img = np.empty((height, width, CHANNELS), dtype=np.float32)
    img[:] = np.asarray(value, dtype=np.float32)
    check_image(img)
    return img


def clip01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to uint8 by round-half-up, the codec quantization."""
    return np.clip(np.floor(img * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)


def dequantize_u8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


# ---------------------------------------------------------------------------
# PPM (P6, maxval 255) codec, the bit-exact golden format
# ---------------------------------------------------------------------------


def decode_ppm(data: bytes) -> np.ndarray:
    pos = 0

    def token() -> bytes:
        # whitespace-delimited header token, '#' starts a comment to EOL
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"PPM: truncated header at byte {start}")
        return data[start:pos]

    magic = token()
    if magic != b"P6":
        raise UnsupportedFormatError(f"PPM: expected P6 magic at byte 0, got {magic!r}")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError as exc:
        raise DecodeError(f"PPM: non-numeric header field near byte {pos}") from exc
    if width < 1 or height < 1:
        raise DecodeError(f"PPM: bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * CHANNELS
    payload = data[pos : pos + need]
    if len(payload) != need:
        raise DecodeError(
            f"PPM: payload truncated at byte {pos + len(payload)} "
            f"(need {need} bytes from byte {pos})"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, CHANNELS)
    return dequantize_u8(raw)


def encode_ppm(img: np.ndarray) -> bytes:
    check_image(img)
    h, w = img.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + quantize_u8(img).tobytes()


# ---------------------------------------------------------------------------
# PNG codec (8-bit RGB/RGBA in, 8-bit RGB out), stdlib zlib only
# ---------------------------------------------------------------------------

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def decode_png(data: bytes) -> np.ndarray:
    if data[:8] != _PNG_SIGNATURE:
        raise DecodeError("PNG: bad signature at byte 0")
    pos = 8
    width = height = bit_depth = color_type = None
    idat = bytearray()
    seen_iend = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError(f"PNG: truncated chunk header at byte {pos}")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        if len(body) != length or pos + 12 + length > len(data):
            raise DecodeError(f"PNG: truncated chunk {ctype!r} at byte {pos}")
        (crc,) = struct.unpack(">I", data[pos + 8 + length : pos + 12 + length])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise DecodeError(f"PNG: CRC mismatch in chunk {ctype!r} at byte {pos}")
        if ctype == b"IHDR":
            if length != 13:
                raise DecodeError(f"PNG: IHDR length {length} at byte {pos}")
            width, height, bit_depth, color_type, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", body
            )
            if comp != 0 or filt != 0:
                raise DecodeError(f"PNG: unknown compression/filter method at byte {pos}")
            if interlace != 0:
                raise UnsupportedFormatError("PNG: interlaced images not supported")
            if bit_depth != 8:
                raise UnsupportedFormatError(f"PNG: only 8-bit depth supported, got {bit_depth}")
            if color_type not in (2, 6):
                raise UnsupportedFormatError(
                    f"PNG: only RGB/RGBA color types supported, got {color_type}"
                )
        elif ctype == b"IDAT":
            idat.extend(body)
        elif ctype == b"IEND":
            seen_iend = True
            break
        pos += 12 + length
    if width is None:
        raise DecodeError("PNG: missing IHDR chunk")
    if not seen_iend:
        raise DecodeError(f"PNG: missing IEND chunk (stream ends at byte {len(data)})")
    if not idat:
        raise DecodeError("PNG: missing IDAT data")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"PNG: corrupt IDAT stream ({exc})") from exc
    bpp = 3 if color_type == 2 else 4
    stride = width * bpp
    if len(raw) != (stride + 1) * height:
        raise DecodeError(
            f"PNG: decompressed size {len(raw)} != expected {(stride + 1) * height}"
        )
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        ftype = raw[y * (stride + 1)]
        row = np.frombuffer(
            raw, dtype=np.uint8, count=stride, offset=y * (stride + 1) + 1
        ).copy()
        if ftype == 0:
            pass
        elif ftype == 2:  # Up
            row += prev
        elif ftype in (1, 3, 4):  # Sub / Average / Paeth need the left neighbor
            for x in range(stride):
                a = int(row[x - bpp]) if x >= bpp else 0
                b = int(prev[x])
                if ftype == 1:
                    row[x] = (int(row[x]) + a) & 0xFF
                elif ftype == 3:
                    row[x] = (int(row[x]) + ((a + b) >> 1)) & 0xFF
                else:
                    c = int(prev[x - bpp]) if x >= bpp else 0
                    p = a + b - c
                    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                    pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                    row[x] = (int(row[x]) + pred) & 0xFF
        else:
            raise DecodeError(f"PNG: unknown filter type {ftype} in row {y}")
        out[y] = row
        prev = row
    pixels = out.reshape(height, width, bpp)[:, :, :3]  # alpha dropped
    return dequantize_u8(pixels)


def _png_chunk(ctype: bytes, body: bytes) -> bytes:
    return (
        struct.pack(">I", len(body))
        + ctype
        + body
        + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)
    )


def encode_png(img: np.ndarray) -> bytes:
    check_image(img)
    h, w = img.shape[:2]
    raw = quantize_u8(img)
    scanlines = bytearray()
    for y in range(h):
        scanlines.append(0)  # filter type None on every row
        scanlines.extend(raw[y].tobytes())
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        _PNG_SIGNATURE
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", zlib.compress(bytes(scanlines), 6))
        + _png_chunk(b"IEND", b"")
    )


def decode_image(data: bytes, fmt: str) -> np.ndarray:
    if fmt == "ppm":
        return decode_ppm(data)
    if fmt == "png":
        return decode_png(data)
    raise UnsupportedFormatError(f"unknown image format {fmt!r}")


def encode_image(img: np.ndarray, fmt: str) -> bytes:
    if fmt == "ppm":
        return encode_ppm(img)
    if fmt == "png":
        return encode_png(img)
    raise UnsupportedFormatError(f"unknown image format {fmt!r}")


def load_image(path) -> np.ndarray:
    """Read a PNG or PPM file, sniffing the format from magic bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] == _PNG_SIGNATURE:
        return decode_png(data)
    if data[:2] == b"P6":
        return decode_ppm(data)
    raise UnsupportedFormatError(f"{path}: neither PNG nor P6 PPM magic")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _sample_bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample img at float coordinates (sx, sy), edge-clamped, lerp form."""
    h, w = img.shape[:2]
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    v00 = img[y0, x0].astype(np.float64)
    v01 = img[y0, x1].astype(np.float64)
    v10 = img[y1, x0].astype(np.float64)
    v11 = img[y1, x1].astype(np.float64)
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    # preserve input dtype: f32 for images, f64 for gain fields
    return (top + fy * (bot - top)).astype(img.dtype)


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize: src = (i + 0.5) * in/out - 0.5."""
    if out_w < 1 or out_h < 1:
        raise DomainError(f"resize target must be >= 1, got {out_w}x{out_h}")
    h, w = img.shape[:2]
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    gx, gy = np.meshgrid(sx, sy)
    return _sample_bilinear(img, gx, gy)


def affine_warp(
    img: np.ndarray,
    rotation_deg: float = 0.0,
    translate=(0.0, 0.0),
    scale: float = 1.0,
    shear_x: float = 0.0,
) -> np.ndarray:
    """Inverse-mapped affine warp about the image center.

    Forward model: scale o shear o rotation about the center, then a
    translation of (dx*W, dy*H) pixels. Out-of-bounds source coordinates
    replicate the nearest edge pixel.
    """
    if scale <= 0:
        raise DomainError(f"scale must be > 0, got {scale}")
    h, w = img.shape[:2]
    th = math.radians(rotation_deg)
    ct, st = math.cos(th), math.sin(th)
    # M = S @ Sh @ R, row-major 2x2
    m00 = scale * (ct + shear_x * st)
    m01 = scale * (shear_x * ct - st)
    m10 = scale * st
    m11 = scale * ct
    det = m00 * m11 - m01 * m10
    i00, i01 = m11 / det, -m01 / det
    i10, i11 = -m10 / det, m00 / det
    tx, ty = translate[0] * w, translate[1] * h
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    qx, qy = np.meshgrid(
        np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)
    )
    ux = qx - cx - tx
    uy = qy - cy - ty
    sx = i00 * ux + i01 * uy + cx
    sy = i10 * ux + i11 * uy + cy
    return _sample_bilinear(img, sx, sy)


def flip_horizontal(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[:, ::-1, :])


# ---------------------------------------------------------------------------
# Color-space math (hexcone HSV)
# ---------------------------------------------------------------------------


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """RGB -> HSV on any (..., 3) array; h in [0, 1) cyclic, s, v in [0, 1]."""
    rgb64 = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb64[..., 0], rgb64[..., 1], rgb64[..., 2]
    maxc = np.max(rgb64, axis=-1)
    minc = np.min(rgb64, axis=-1)
    delta = maxc - minc
    safe_delta = np.where(delta == 0.0, 1.0, delta)
    h = np.select(
        [delta == 0.0, maxc == r, maxc == g],
        [0.0, (g - b) / safe_delta, (b - r) / safe_delta + 2.0],
        default=(r - g) / safe_delta + 4.0,
    )
    h = (h / 6.0) % 1.0
    s = np.where(maxc > 0.0, delta / np.where(maxc == 0.0, 1.0, maxc), 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    hsv64 = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv64[..., 0], hsv64[..., 1], hsv64[..., 2]
    hh = (h % 1.0) * 6.0
    sector = np.floor(hh).astype(np.intp) % 6
    f = hh - np.floor(hh)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(sector, [v, q, p, p, t, v])
    g = np.choose(sector, [t, v, v, q, p, p])
    b = np.choose(sector, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


# ---------------------------------------------------------------------------
# Deterministic random stream (SplitMix64 + Box-Muller)
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TO_UNIT = 2.0**-53


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(global_seed: int, sample_id: str, property_id: str, candidate_index: int) -> int:
    """FNV-1a hash of the four derivation inputs; the stream's start state.

    Layout hashed: 8 LE bytes of global_seed, sample_id UTF-8, 0x1F,
    property_id UTF-8, 0x1F, 8 LE bytes of candidate_index.
    """
    h = _FNV_OFFSET
    payload = (
        (global_seed & _MASK64).to_bytes(8, "little")
        + sample_id.encode("utf-8")
        + b"\x1f"
        + property_id.encode("utf-8")
        + b"\x1f"
        + (candidate_index & _MASK64).to_bytes(8, "little")
    )
    for byte in payload:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class RandomStream:
    """SplitMix64 stream; uniforms are bit-identical scalar vs. vectorized.

    Uniform draws map the top 53 output bits to [0, 1). Normal draws use
    Box-Muller on exactly two uniforms: sigma * sqrt(-2 ln(1-u1)) * cos(2 pi u2).
    """

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & _MASK64

    @classmethod
    def derive(
        cls, global_seed: int, sample_id: str, property_id: str, candidate_index: int
    ) -> "RandomStream":
        return cls(derive_seed(global_seed, sample_id, property_id, candidate_index))

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix64(self.state)

    def next_uniform(self) -> float:
        return (self.next_u64() >> 11) * _TO_UNIT

    def next_normal(self, sigma: float) -> float:
        return float(self.normals(1, sigma)[0])

    def uniforms(self, n: int) -> np.ndarray:
        """n uniform draws in [0, 1), advancing the state by n."""
        if n < 0:
            raise ValueError(f"draw count must be >= 0, got {n}")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        return (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT

    def normals(self, n: int, sigma: float) -> np.ndarray:
        """n normal draws scaled by sigma; consumes exactly 2n uniforms."""
        u = self.uniforms(2 * n)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        return sigma * radius * np.cos(2.0 * math.pi * u[1::2])
