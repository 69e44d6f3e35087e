"""Image and disparity file formats: PFM, PGM, PNG.

PFM (portable float map) stores the disparity ground truth: a "Pf"
header, width/height line, a scale line whose sign encodes endianness,
then raw 32-bit floats in bottom-to-top row order. Round-trips are
bit-exact. PGM (P5, 8-bit) carries the stereo images and masks. PNG is
write-only, for human-viewable exports.
"""

import struct
import zlib

import numpy as np

from .errors import ContractViolation, NumericFault, ParseError

# --- PFM -------------------------------------------------------------------


def write_pfm(path, data):
    """Write a single-channel float map; little-endian, bottom-to-top rows."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ContractViolation(f"write_pfm expects a 2-D map, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise NumericFault("write_pfm: non-finite values")
    h, w = data.shape
    payload = np.flipud(data.astype("<f4")).tobytes()
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(payload)


def _read_header_token(f):
    """One whitespace-delimited token; returns (token, offset of its start)."""
    token = b""
    start = f.tell()
    while True:
        c = f.read(1)
        if not c:
            raise ParseError("unexpected end of file in header", offset=f.tell())
        if c.isspace():
            if token:
                return token, start
            start = f.tell()
            continue
        token += c


def read_pfm(path):
    """Read a grayscale PFM written by this package or any standard tool."""
    with open(path, "rb") as f:
        magic, offset = _read_header_token(f)
        if magic == b"PF":
            raise ParseError("color PFM ('PF') is not supported, expected 'Pf'", offset=offset)
        if magic != b"Pf":
            raise ParseError(f"bad magic {magic!r}, expected 'Pf'", offset=offset)
        wtok, offset = _read_header_token(f)
        htok, hoffset = _read_header_token(f)
        try:
            w, h = int(wtok), int(htok)
        except ValueError:
            raise ParseError(f"bad extents {wtok!r} {htok!r}", offset=offset) from None
        if w < 1 or h < 1:
            raise ParseError(f"non-positive extents {w}x{h}", offset=offset)
        stok, soffset = _read_header_token(f)
        try:
            scale = float(stok)
        except ValueError:
            raise ParseError(f"bad scale {stok!r}", offset=soffset) from None
        if scale == 0.0:
            raise ParseError("scale must be nonzero", offset=soffset)
        data_offset = f.tell()
        raw = f.read(4 * w * h)
        if len(raw) != 4 * w * h:
            raise ParseError(
                f"truncated payload: expected {4 * w * h} bytes, got {len(raw)}",
                offset=data_offset + len(raw),
            )
    dtype = "<f4" if scale < 0 else ">f4"
    rows = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.flipud(rows).astype(np.float32)


# --- PGM -------------------------------------------------------------------


def write_pgm(path, image):
    """8-bit binary PGM from either float [0,1] data or uint8 data."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[-1] == 1:
        image = image[:, :, 0]
    if image.ndim != 2:
        raise ContractViolation(f"write_pgm expects a 2-D image, got shape {image.shape}")
    if image.dtype != np.uint8:
        if not np.all(np.isfinite(image)):
            raise NumericFault("write_pgm: non-finite values")
        image = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path):
    """Read a binary PGM into float32 values in [0, 1]."""
    with open(path, "rb") as f:
        magic, offset = _read_header_token(f)
        if magic != b"P5":
            raise ParseError(f"bad magic {magic!r}, expected 'P5'", offset=offset)
        tokens = []
        for _ in range(3):
            token, offset = _read_header_token(f)
            if token.startswith(b"#"):
                raise ParseError("comments in PGM headers are not supported", offset=offset)
            tokens.append(token)
        try:
            w, h, maxval = (int(t) for t in tokens)
        except ValueError:
            raise ParseError(f"bad header fields {tokens!r}", offset=offset) from None
        if maxval != 255:
            raise ParseError(f"only 8-bit PGM supported, maxval={maxval}", offset=offset)
        raw = f.read(w * h)
        if len(raw) != w * h:
            raise ParseError(f"truncated payload ({len(raw)} of {w * h} bytes)", offset=f.tell())
    return (np.frombuffer(raw, dtype=np.uint8).reshape(h, w) / 255.0).astype(np.float32)


# --- PNG (write-only) ------------------------------------------------------


def write_png(path, image):
    """Minimal 8-bit PNG writer for grayscale [H, W] or RGB [H, W, 3]."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ContractViolation("write_png expects uint8 data")
    if image.ndim == 2:
        color_type = 0
        rows = image[:, :, None]
    elif image.ndim == 3 and image.shape[-1] == 3:
        color_type = 2
        rows = image
    else:
        raise ContractViolation(f"write_png expects [H, W] or [H, W, 3], got {image.shape}")
    h, w = rows.shape[:2]

    def chunk(tag, payload):
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))

    header = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    scanlines = b"".join(b"\x00" + rows[y].tobytes() for y in range(h))
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", header))
        f.write(chunk(b"IDAT", zlib.compress(scanlines, 9)))
        f.write(chunk(b"IEND", b""))


def disparity_to_gray(disparity, max_disparity):
    """Fixed linear ramp: 0 -> black, max_disparity-1 -> white."""
    disparity = np.asarray(disparity, dtype=np.float64)
    top = max(max_disparity - 1, 1)
    scaled = np.clip(disparity, 0, top) / top
    return np.round(scaled * 255.0).astype(np.uint8)


def write_disparity_png(path, disparity, max_disparity):
    write_png(path, disparity_to_gray(disparity, max_disparity))
