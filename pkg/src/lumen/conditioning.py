"""Turn physical buffers into the latent code that modulates the denoiser."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .diffusion import Condition
from .errors import ContractError
from .gallery import PhysicalBuffers, downsample
from .image import ImageBuffer
from .rng import SeededRng

DEFAULT_LATENT_DIM = 64


class BufferEncoder(Protocol):
    latent_dim: int

    def encode(self, buffers: PhysicalBuffers) -> np.ndarray:
        """Return a length-``latent_dim`` latent code."""


class ProjectionBufferEncoder:
    """Frozen encoder: 8x8 area-averaged albedo and normal, seeded linear map, unit L2.

    Albedo is centred on 0.5 and normals on the camera axis before projection,
    so a flat grey, camera-facing face carries no signal and does not dominate
    every code. An all-zero feature vector maps to the zero latent instead of
    failing to normalise.
    """

    def __init__(self, latent_dim: int = DEFAULT_LATENT_DIM, grid: int = 8, seed: int = 0,
                 center: bool = True):
        if latent_dim < 1:
            raise ContractError("latent dimension must be at least 1")
        self.latent_dim, self.grid, self.seed = int(latent_dim), int(grid), int(seed)
        self.center = center
        self.in_dim = 2 * 3 * self.grid * self.grid
        self.matrix = SeededRng(seed, "buffer-encoder").gaussian((self.latent_dim, self.in_dim))
        self.matrix /= np.sqrt(self.in_dim)

    def features(self, buffers: PhysicalBuffers) -> np.ndarray:
        a = downsample(buffers.albedo.data.astype(np.float64), self.grid)
        n = downsample(buffers.normal.data.astype(np.float64), self.grid)
        if self.center:
            a = a - 0.5
            n = n - np.array([0.0, 0.0, 1.0])
        return np.concatenate([a.ravel(), n.ravel()])

    def encode(self, buffers: PhysicalBuffers) -> np.ndarray:
        return self.project(self.features(buffers))

    def project(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (self.in_dim,):
            raise ContractError(f"feature vector must have length {self.in_dim}, got {features.shape}")
        v = self.matrix @ features
        norm = np.linalg.norm(v)
        if not norm > 1e-12:
            return np.zeros(self.latent_dim)
        return v / norm


def default_buffer_encoder(c: int = DEFAULT_LATENT_DIM, seed: int = 0) -> ProjectionBufferEncoder:
    return ProjectionBufferEncoder(c, seed=seed)


def build_condition(y: ImageBuffer, buffers: PhysicalBuffers | None, enc: BufferEncoder | None) -> Condition:
    """Single-item :class:`Condition` (batch axis of length 1).

    Without buffers the latent is absent and the denoiser runs its FiLM-identity
    path, which is the ablation configuration.
    """
    if y is None:
        raise ContractError("a degraded observation y is required")
    y_arr = y.data.astype(np.float64)[None]
    if buffers is None:
        return Condition(y=y_arr)
    if enc is None:
        raise ContractError("buffers given without an encoder")
    if buffers.albedo.shape[:2] != y.shape[:2]:
        raise ContractError(f"buffers {buffers.albedo.shape[:2]} do not match y {y.shape[:2]} spatially")
    latent = np.asarray(enc.encode(buffers), dtype=np.float64)
    if latent.shape != (enc.latent_dim,):
        raise ContractError(f"encoder returned shape {latent.shape}, expected ({enc.latent_dim},)")
    return Condition(y=y_arr, albedo=buffers.albedo.data.astype(np.float64)[None],
                     normal=buffers.normal.data.astype(np.float64)[None], latent=latent[None])
