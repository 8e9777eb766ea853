"""Bit-exact PGM / PPM / PFM reading and writing with JSON sidecars.

Binary PGM (P5) and PPM (P6) use maxval 255 or 65535, 16-bit samples
big-endian. PFM is little-endian float32 with scale ``-1.0`` on write; rows are
stored bottom-to-top as the format prescribes. A sidecar ``<stem>.json``
carries ``{"range": tag, "bits": int}`` and overrides the default tag on read.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import CapacityError, ContractError, FormatError
from .image import DN, RANGE_TAGS, UNIT, ImageBuffer, round_half_away

MAX_SAMPLES = 1 << 28
_WHITESPACE = b" \t\r\n\v\f"


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


class _Header:
    """Cursor over the ASCII header of a netpbm file."""

    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def skip_space(self):
        raw = self.raw
        while self.pos < len(raw):
            c = raw[self.pos : self.pos + 1]
            if c in (b"#",):
                while self.pos < len(raw) and raw[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif c and c in _WHITESPACE:
                self.pos += 1
            else:
                break

    def integer(self, what: str) -> int:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.raw) and self.raw[self.pos : self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            raise FormatError(f"expected {what}", offset=start)
        return int(self.raw[start : self.pos])

    def line(self, what: str) -> str:
        start = self.pos
        end = self.raw.find(b"\n", start)
        if end < 0:
            raise FormatError(f"unterminated {what} line", offset=start)
        self.pos = end + 1
        try:
            return self.raw[start:end].decode("ascii").strip()
        except UnicodeDecodeError:
            raise FormatError(f"non-ASCII {what} line", offset=start) from None


def _check_capacity(height: int, width: int, channels: int) -> None:
    if height <= 0 or width <= 0:
        raise CapacityError(f"non-positive dimensions {width}x{height}")
    if height * width * channels > MAX_SAMPLES:
        raise CapacityError(
            f"{width}x{height}x{channels} exceeds the {MAX_SAMPLES}-sample limit"
        )


def _parse_pnm(raw: bytes):
    hdr = _Header(raw)
    magic = raw[:2]
    channels = {b"P5": 1, b"P6": 3}[magic]
    hdr.pos = 2
    width = hdr.integer("width")
    height = hdr.integer("height")
    maxval = hdr.integer("maxval")
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}", offset=hdr.pos)
    if hdr.pos >= len(raw) or raw[hdr.pos : hdr.pos + 1] not in _WHITESPACE:
        raise FormatError("expected single whitespace before raster", offset=hdr.pos)
    hdr.pos += 1
    _check_capacity(height, width, channels)
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    count = height * width * channels
    need = count * dtype.itemsize
    if len(raw) - hdr.pos < need:
        raise FormatError(
            f"raster truncated: need {need} bytes, have {len(raw) - hdr.pos}",
            offset=len(raw),
        )
    samples = np.frombuffer(raw, dtype=dtype, count=count, offset=hdr.pos)
    data = samples.reshape(height, width, channels).astype(np.float64) / maxval
    return data, UNIT, 8 if maxval == 255 else 16


def _parse_pfm(raw: bytes):
    hdr = _Header(raw)
    ident = hdr.line("identifier")
    channels = {"PF": 3, "Pf": 1}.get(ident)
    if channels is None:
        raise FormatError(f"bad PFM identifier {ident!r}", offset=0)
    dims_at = hdr.pos
    dims = hdr.line("dimensions").split()
    if len(dims) != 2 or not all(d.isdigit() for d in dims):
        raise FormatError("expected 'width height'", offset=dims_at)
    width, height = int(dims[0]), int(dims[1])
    scale_at = hdr.pos
    try:
        scale = float(hdr.line("scale"))
    except ValueError:
        raise FormatError("scale is not a number", offset=scale_at) from None
    if scale == 0.0:
        raise FormatError("scale must be non-zero", offset=scale_at)
    _check_capacity(height, width, channels)
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = height * width * channels
    need = count * 4
    if len(raw) - hdr.pos < need:
        raise FormatError(
            f"raster truncated: need {need} bytes, have {len(raw) - hdr.pos}",
            offset=len(raw),
        )
    samples = np.frombuffer(raw, dtype=dtype, count=count, offset=hdr.pos)
    data = samples.astype(np.float32).reshape(height, width, channels)[::-1]
    return data, UNIT, 32


def read_image(path) -> ImageBuffer:
    """Read a PGM, PPM or PFM file (plus optional sidecar) into an :class:`ImageBuffer`."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] in (b"P5", b"P6"):
        data, tag, bits = _parse_pnm(raw)
    elif raw[:2] in (b"PF", b"Pf"):
        data, tag, bits = _parse_pfm(raw)
    else:
        raise FormatError(f"unrecognised magic {raw[:2]!r} in {path.name}", offset=0)

    side = sidecar_path(path)
    sidecar_bits = None
    if side.exists():
        meta = json.loads(side.read_text())
        tag = meta.get("range", tag)
        if tag not in RANGE_TAGS:
            raise FormatError(f"sidecar {side.name} has unknown range {tag!r}", offset=None)
        sidecar_bits = meta.get("bits")
    dn_bits = sidecar_bits if tag == DN else None
    return ImageBuffer(data, range=tag, bits=dn_bits, source=str(path))


def encode_image(img: ImageBuffer, depth=32) -> bytes:
    """Serialise ``img`` to PGM/PPM (depth 8 or 16) or PFM (depth 32 / "32f")."""
    if depth in ("32f", 32):
        return _encode_pfm(img)
    if depth not in (8, 16):
        raise ContractError(f"depth must be 8, 16 or '32f', got {depth!r}")
    if img.range != UNIT:
        raise ContractError(f"integer depth {depth} requires range {UNIT!r}, image is {img.range!r}")
    if img.channels not in (1, 3):
        raise ContractError(f"PGM/PPM hold 1 or 3 channels, image has {img.channels}")
    maxval = 255 if depth == 8 else 65535
    q = np.clip(round_half_away(img.data.astype(np.float64) * maxval), 0, maxval)
    dtype = np.dtype("u1") if depth == 8 else np.dtype(">u2")
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + q.astype(dtype).tobytes()


def _encode_pfm(img: ImageBuffer) -> bytes:
    if img.channels not in (1, 3):
        raise ContractError(f"PFM holds 1 or 3 channels, image has {img.channels}")
    ident = b"Pf" if img.channels == 1 else b"PF"
    header = ident + f"\n{img.width} {img.height}\n-1.0\n".encode("ascii")
    return header + img.data[::-1].astype("<f4").tobytes()


def write_image(img: ImageBuffer, path, depth=32, sidecar: bool = True) -> None:
    """Write ``img`` atomically; integer depths round half away from zero then clamp."""
    payload = encode_image(img, depth)
    atomic_write_bytes(path, payload)
    if sidecar:
        bits = img.bits if img.range == DN else (32 if depth in ("32f", 32) else depth)
        write_json(sidecar_path(path), {"range": img.range, "bits": bits})


def read_vector(path) -> np.ndarray:
    """Read a feature vector stored as a 1-channel PFM (any H x W) and flatten it."""
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"PF", b"Pf"):
        raise FormatError("expected a PFM file", offset=0)
    data, _, _ = _parse_pfm(raw)
    return data.ravel()


def write_vector(vec, path) -> None:
    """Store a feature vector as a 1 x d single-channel PFM (no range restriction)."""
    vec = np.asarray(vec, dtype="<f4").ravel()
    payload = b"Pf" + f"\n{vec.size} 1\n-1.0\n".encode("ascii") + vec.tobytes()
    atomic_write_bytes(path, payload)
