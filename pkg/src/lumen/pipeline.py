"""Glue between images, the sensor simulator, buffers and the denoiser.

Model space is ``2 * pixel - 1`` flattened per image; the denoiser sees the
noisy sample concatenated with the flattened degraded observation, plus the
identity latent when buffers are used.
"""

from __future__ import annotations

import numpy as np

from .conditioning import ProjectionBufferEncoder, default_buffer_encoder
from .denoisers import AdamState, Dataset, MlpDenoiser, train_loop
from .diffusion import Condition, sample
from .gallery import ALBEDO, NORMAL, LinearCodec, PhysicalBuffers, extract_buffers
from .image import UNIT, ImageBuffer
from .rng import SeededRng
from .schedules import DiffusionSchedule
from .sensor import IspParams, SensorProfile, dslr_test_profile, simulate_lowlight

TOY_LR = 3e-3


def to_model(img: ImageBuffer) -> np.ndarray:
    return 2.0 * img.data.astype(np.float64).ravel() - 1.0


def from_model(vec, shape) -> ImageBuffer:
    return ImageBuffer(np.clip((np.asarray(vec).reshape(shape) + 1.0) / 2.0, 0.0, 1.0), range=UNIT)


def default_codecs(shape=(16, 16, 3), seed: int = 0, code_dim: int = 32):
    return (LinearCodec(ALBEDO, shape, code_dim, seed=seed),
            LinearCodec(NORMAL, shape, code_dim, seed=seed + 1))


def gallery_buffers(gallery, codecs) -> PhysicalBuffers:
    return extract_buffers(gallery, *codecs)


def identity_latent(gallery, codecs, encoder: ProjectionBufferEncoder) -> np.ndarray:
    return encoder.encode(gallery_buffers(gallery, codecs))


def degrade_image(clean: ImageBuffer, profile: SensorProfile, rng: SeededRng,
                  isp: IspParams = IspParams()) -> ImageBuffer:
    return simulate_lowlight(clean, profile, isp, rng)


def build_training_set(train_sets, latents, seed: int, copies: int = 2,
                       isp: IspParams = IspParams()) -> Dataset:
    """Pairs of clean renders and low-light captures under random training-range sensors.

    ``train_sets[i]`` lists the clean renders of identity i and ``latents[i]``
    its latent code, or ``latents=None`` for the buffer-free model.
    """
    x0, ys, zs = [], [], []
    for i, renders in enumerate(train_sets):
        for k, clean in enumerate(renders):
            for j in range(copies):
                r = SeededRng(seed, "train-pair", i, k, j)
                profile = SensorProfile.sample_training(r.split("profile"))
                ys.append(to_model(degrade_image(clean, profile, r.split("capture"), isp)))
                x0.append(to_model(clean))
                if latents is not None:
                    zs.append(latents[i])
    cond = Condition(y=np.stack(ys), latent=np.stack(zs) if latents is not None else None)
    return Dataset(np.stack(x0), cond)


def new_model(shape, latent_dim: int = 0, seed: int = 0, hidden=(128, 128), film: str = "scale_shift",
              skip: bool = True):
    d = int(np.prod(shape))
    return MlpDenoiser(d, d, latent_dim, hidden=hidden, film=film, seed=seed, skip=skip)


def train_model(data: Dataset, net: MlpDenoiser, schedule: DiffusionSchedule, iters: int,
                batch: int, seed: int, state: AdamState | None = None, lr: float = TOY_LR, log=None):
    state = state or AdamState(lr=lr)
    rng = SeededRng(seed, "train")
    return train_loop(data, net, schedule, iters, batch, rng, state,
                      log_every=100 if log else 0, log=log or print)


def restore(net: MlpDenoiser, ys, latents, schedule: DiffusionSchedule, sampler: dict, seed: int,
            shape) -> list:
    """Restore a batch of degraded images; ``latents=None`` runs the buffer-free path."""
    y = np.stack([to_model(img) for img in ys])
    z = None if latents is None else np.stack(latents)
    cond = Condition(y=y, latent=z)
    out = sample(net, cond, schedule, sampler, (len(ys), y.shape[1]), SeededRng(seed, "restore"))
    return [from_model(v, shape) for v in out]


def probe_profile(ppp: float = 13.0) -> SensorProfile:
    return dslr_test_profile(ppp)


__all__ = [
    "TOY_LR", "to_model", "from_model", "default_codecs", "gallery_buffers", "identity_latent",
    "degrade_image", "build_training_set", "new_model", "train_model", "restore", "probe_profile",
    "default_buffer_encoder",
]
