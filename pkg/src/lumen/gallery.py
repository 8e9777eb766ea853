"""Identity-consistent physical buffers from a photo gallery.

Each gallery image is encoded into a latent code and a same-length vector of
channel weights. Weights are softmax-normalised across the gallery separately
for every channel, the codes are averaged with those weights, and the global
code is decoded into an albedo or normal map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .denoisers import load_checkpoint, save_checkpoint
from .errors import ContractError, DomainError, FormatError
from .image import SIGNED, UNIT, ImageBuffer
from .rng import SeededRng

MAX_GALLERY = 16
ALBEDO, NORMAL = "albedo", "normal"


@dataclass(frozen=True)
class GalleryCodes:
    codes: np.ndarray    # N x c
    weights: np.ndarray  # N x c, unnormalised
    kind: str = ALBEDO

    def __post_init__(self):
        codes = np.atleast_2d(np.asarray(self.codes, dtype=np.float64))
        weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        if codes.shape[0] < 1 or codes.size == 0:
            raise DomainError("a gallery needs at least one image")
        if codes.shape != weights.shape:
            raise ContractError(f"codes {codes.shape} and weights {weights.shape} differ in shape")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.codes.shape[0]


def _canonical_order(codes, weights) -> np.ndarray:
    # Sort gallery rows by content so the reduction order ignores input order.
    keys = np.concatenate([weights, codes], axis=1)
    return np.lexsort(keys.T[::-1])


def softmax_over_gallery(weights: np.ndarray) -> np.ndarray:
    """Softmax along axis 0 (the gallery axis), stabilised by the per-channel max."""
    w = np.asarray(weights, dtype=np.float64)
    e = np.exp(w - w.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def aggregate(gc: GalleryCodes, return_weights: bool = False):
    """Global code ``sum_k softmax_k(w)[k, j] * codes[k, j]`` for every channel j."""
    order = _canonical_order(gc.codes, gc.weights)
    codes, weights = gc.codes[order], gc.weights[order]
    w_hat = softmax_over_gallery(weights)
    glob = (w_hat * codes).sum(axis=0)
    if return_weights:
        unsort = np.empty_like(order)
        unsort[order] = np.arange(order.size)
        return glob, w_hat[unsort]
    return glob


class BufferCodec(Protocol):
    kind: str
    code_dim: int

    def encode(self, img: ImageBuffer) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(code, weight)``, both of length ``code_dim``."""

    def decode(self, code: np.ndarray) -> ImageBuffer:
        """Map a code back to an albedo (unit-linear) or normal (signed-unit) raster."""


def downsample(data: np.ndarray, grid: int) -> np.ndarray:
    """Area-average an H x W x C array to grid x grid x C."""
    h, w, c = data.shape
    if h % grid == 0 and w % grid == 0:
        return data.reshape(grid, h // grid, grid, w // grid, c).mean(axis=(1, 3))
    return ndimage.zoom(data, (grid / h, grid / w, 1), order=1, mode="nearest")


def upsample(data: np.ndarray, height: int, width: int) -> np.ndarray:
    g_h, g_w, _ = data.shape
    if height % g_h == 0 and width % g_w == 0:
        return np.repeat(np.repeat(data, height // g_h, axis=0), width // g_w, axis=1)
    return ndimage.zoom(data, (height / g_h, width / g_w, 1), order=1, mode="nearest")


def normalize_normals(n: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    fallback = np.zeros_like(n)
    fallback[..., 2] = 1.0
    return np.where(norm > 1e-12, n / np.maximum(norm, 1e-12), fallback)


class LinearCodec:
    """Synthetic stand-in for a learned aggregation encoder/decoder.

    ``encode`` area-averages the image onto a ``grid x grid`` lattice, rescales
    it to mean 0.5 (removing global illumination gain) and projects the
    deviation from 0.5 with a fixed matrix whose orthonormal rows are also
    orthogonal to the constant image, so ``encode(decode(z)) == z`` whenever
    the decoded albedo needs no clipping. Channel weights measure how much image
    detail (gradient energy at full resolution) each code channel sees, so
    blurred gallery images get less say. ``decode`` applies the transposed
    projection around 0.5 and upsamples; the normal variant maps ``2v - 1``
    plus a camera-facing bias to unit vectors.
    """

    def __init__(self, kind: str = ALBEDO, shape=(16, 16, 3), code_dim: int = 32, grid: int = 8,
                 seed: int = 0, temperature: float = 100.0, projection: np.ndarray | None = None):
        if kind not in (ALBEDO, NORMAL):
            raise ContractError(f"codec kind must be {ALBEDO!r} or {NORMAL!r}")
        self.kind, self.shape = kind, tuple(int(s) for s in shape)
        self.grid, self.seed, self.temperature = int(grid), int(seed), float(temperature)
        dim = self.grid * self.grid * self.shape[2]
        if projection is None:
            if not 1 <= code_dim <= dim:
                raise ContractError(f"code_dim must lie in 1..{dim}")
            if code_dim > dim - 1:
                raise ContractError(f"code_dim must lie in 1..{dim - 1}")
            g = SeededRng(seed, "codec", kind).gaussian((dim, code_dim))
            g -= g.mean(axis=0)  # rows orthogonal to the constant image
            q, r = np.linalg.qr(g)
            projection = (q * np.sign(np.diag(r))).T
        self.projection = np.asarray(projection, dtype=np.float64)
        if self.projection.shape[1] != dim:
            raise ContractError(f"projection has {self.projection.shape[1]} columns, expected {dim}")
        self.code_dim = self.projection.shape[0]
        self._abs = np.abs(self.projection)
        self._abs_norm = self._abs.sum(axis=1)

    def _check(self, img: ImageBuffer):
        if img.shape != self.shape:
            raise ContractError(f"codec expects images of shape {self.shape}, got {img.shape}")

    def normalized(self, img: ImageBuffer) -> np.ndarray:
        data = img.data.astype(np.float64)
        mean = data.mean()
        return data * (0.5 / mean) if mean > 1e-12 else data

    def encode(self, img: ImageBuffer):
        self._check(img)
        data = self.normalized(img)
        code = self.projection @ (downsample(data, self.grid).ravel() - 0.5)
        gy, gx = np.gradient(data, axis=(0, 1))
        detail = downsample(gy**2 + gx**2, self.grid).ravel()
        weight = self.temperature * (self._abs @ detail) / self._abs_norm
        return code, weight

    def decode(self, code) -> ImageBuffer:
        code = np.asarray(code, dtype=np.float64)
        if code.shape != (self.code_dim,):
            raise ContractError(f"code must have length {self.code_dim}, got {code.shape}")
        h, w, c = self.shape
        v = 0.5 + (self.projection.T @ code).reshape(self.grid, self.grid, c)
        v = upsample(v, h, w)
        if self.kind == ALBEDO:
            return ImageBuffer(np.clip(v, 0.0, 1.0), range=UNIT)
        n = 2.0 * v - 1.0
        n[..., 2] += 1.0
        return ImageBuffer(normalize_normals(n), range=SIGNED)

    def to_arrays(self):
        return {"projection": self.projection}, {
            "model": "linear_codec", "kind": self.kind, "shape": list(self.shape),
            "grid": self.grid, "seed": self.seed, "temperature": self.temperature,
        }


def save_codec(codec: LinearCodec, path) -> None:
    arrays, manifest = codec.to_arrays()
    save_checkpoint(path, arrays, manifest)


def load_codec(path) -> LinearCodec:
    arrays, m = load_checkpoint(path)
    if m.get("model") != "linear_codec":
        raise FormatError(f"{path} is not a codec checkpoint (model={m.get('model')!r})")
    return LinearCodec(m["kind"], m["shape"], grid=m["grid"], seed=m["seed"],
                       temperature=m["temperature"], projection=arrays["projection"].astype(np.float64))


@dataclass(frozen=True)
class PhysicalBuffers:
    albedo: ImageBuffer
    normal: ImageBuffer

    def __post_init__(self):
        if self.albedo.channels != 3 or self.normal.channels != 3:
            raise ContractError("albedo and normal must both have 3 channels")
        if self.albedo.range != UNIT or self.normal.range != SIGNED:
            raise ContractError("albedo must be unit-linear and normal signed-unit")
        if self.albedo.shape[:2] != self.normal.shape[:2]:
            raise ContractError("albedo and normal must share spatial dimensions")
        length = np.linalg.norm(self.normal.data.astype(np.float64), axis=-1)
        if np.any(np.abs(length - 1.0) > 0.01):
            raise ContractError("normal vectors must have unit length (within 1%)")


def encode_gallery(gallery, codec: BufferCodec) -> GalleryCodes:
    if len(gallery) < 1:
        raise DomainError("a gallery needs at least one image")
    if len(gallery) > MAX_GALLERY:
        raise ContractError(f"gallery size {len(gallery)} exceeds the supported {MAX_GALLERY}")
    shapes = {img.shape for img in gallery}
    if len(shapes) != 1:
        raise ContractError(f"gallery images differ in shape: {sorted(shapes)}")
    pairs = [codec.encode(img) for img in gallery]
    codes = np.stack([p[0] for p in pairs])
    weights = np.stack([p[1] for p in pairs])
    if codes.shape[1] != codec.code_dim or weights.shape != codes.shape:
        raise ContractError("codec returned codes/weights of inconsistent length")
    return GalleryCodes(codes, weights, codec.kind)


@dataclass(frozen=True)
class Extraction:
    buffers: PhysicalBuffers
    albedo_codes: GalleryCodes
    normal_codes: GalleryCodes
    albedo_global: np.ndarray
    normal_global: np.ndarray
    albedo_weights: np.ndarray  # normalised, gallery order
    normal_weights: np.ndarray


def extract_with_codes(gallery, albedo_codec: BufferCodec, normal_codec: BufferCodec) -> Extraction:
    ga = encode_gallery(gallery, albedo_codec)
    gn = encode_gallery(gallery, normal_codec)
    a_code, a_w = aggregate(ga, return_weights=True)
    n_code, n_w = aggregate(gn, return_weights=True)
    albedo = albedo_codec.decode(a_code)
    normal = normal_codec.decode(n_code)
    normal = normal.with_data(normalize_normals(normal.data.astype(np.float64)))
    return Extraction(PhysicalBuffers(albedo, normal), ga, gn, a_code, n_code, a_w, n_w)


def extract_buffers(gallery, albedo_codec: BufferCodec, normal_codec: BufferCodec) -> PhysicalBuffers:
    """Encode every gallery image, aggregate per buffer kind, decode albedo and normal."""
    return extract_with_codes(gallery, albedo_codec, normal_codec).buffers
