"""Forward noising, the weighted training objective and DDPM / DDIM samplers.

Arrays carry a leading batch axis; the step index ``t`` is a scalar or one
integer per batch item in ``1..T``. The engine never looks inside a
:class:`Condition`; it only hands it to the denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Protocol

import numpy as np

from .errors import DomainError, NumericError
from .rng import SeededRng
from .schedules import DiffusionSchedule


@dataclass(frozen=True)
class Condition:
    """Conditioning bundle: degraded observation ``y``, buffers and their latent code.

    Every present field has the batch on its leading axis. ``latent`` absent
    means the denoiser runs without identity modulation.
    """

    y: np.ndarray | None = None
    albedo: np.ndarray | None = None
    normal: np.ndarray | None = None
    latent: np.ndarray | None = None

    def take(self, idx) -> Condition:
        pick = lambda a: None if a is None else np.asarray(a)[idx]
        return Condition(pick(self.y), pick(self.albedo), pick(self.normal), pick(self.latent))

    def without_latent(self) -> Condition:
        return replace(self, albedo=None, normal=None, latent=None)

    def __len__(self):
        for a in (self.y, self.latent, self.albedo, self.normal):
            if a is not None:
                return len(a)
        return 0


class Denoiser(Protocol):
    def predict(self, x_t: np.ndarray, t: np.ndarray, cond: Condition | None) -> np.ndarray:
        """Return the noise estimate, same shape as ``x_t``."""


def _bcast(v, x):
    """Reshape a per-item vector so it broadcasts over the trailing axes of ``x``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape + (1,) * (x.ndim - v.ndim))


def _steps_for(t, batch: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    return np.full(batch, t) if t.ndim == 0 else t


def forward_sample(x0, t, schedule: DiffusionSchedule, rng: SeededRng, eps=None):
    """Sample ``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; returns ``(x_t, eps)``."""
    t = schedule.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    if eps is None:
        eps = rng.gaussian(x0.shape)
    ab = _bcast(schedule.alpha_bar[t - 1], x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, eps


class TrainingStep(NamedTuple):
    loss: float
    grad: np.ndarray  # d loss / d eps_hat
    t: np.ndarray
    eps_hat: np.ndarray


def training_step(x0, cond, denoiser: Denoiser, schedule: DiffusionSchedule, rng: SeededRng,
                  t=None, eps=None) -> TrainingStep:
    """One weighted noise-regression evaluation on a batch.

    ``loss = mean_b lambda_{t_b} * mean_i (eps - eps_hat)**2``; ``grad`` is its
    derivative with respect to the prediction, ready for the denoiser's
    backward pass.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    batch = x0.shape[0]
    if t is None:
        t = rng.integers(1, schedule.T + 1, shape=batch)
    t = schedule.check_step(_steps_for(t, batch))
    x_t, eps = forward_sample(x0, t, schedule, rng, eps=eps)
    eps_hat = np.asarray(denoiser.predict(x_t, t, cond), dtype=np.float64)
    if eps_hat.shape != x0.shape:
        raise DomainError(f"denoiser returned shape {eps_hat.shape}, expected {x0.shape}")
    if not np.all(np.isfinite(eps_hat)):
        bad = np.unique(t[~np.isfinite(eps_hat.reshape(batch, -1)).all(axis=1)])
        raise NumericError("non-finite noise prediction", steps=bad.tolist())
    lam = schedule.lambda_p2[t - 1]
    n = x0[0].size
    resid = eps_hat - eps
    per_item = (resid.reshape(batch, -1) ** 2).mean(axis=1)
    loss = float(np.mean(lam * per_item))
    grad = 2.0 * _bcast(lam, resid) * resid / (n * batch)
    return TrainingStep(loss, grad, t, eps_hat)


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise NumericError("sampler produced non-finite values", step=int(t))


def ddpm_sample(denoiser: Denoiser, cond, schedule: DiffusionSchedule, rng: SeededRng, shape,
                x_T=None) -> np.ndarray:
    """Ancestral sampling over all T steps with ``sigma_t**2 = beta_t``; no noise at t = 1."""
    x = rng.gaussian(shape) if x_T is None else np.array(x_T, dtype=np.float64)
    batch = x.shape[0]
    for t in range(schedule.T, 0, -1):
        beta, ab = schedule.beta[t - 1], schedule.alpha_bar[t - 1]
        eps_hat = denoiser.predict(x, np.full(batch, t), cond)
        x = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)
        if t > 1:
            x = x + schedule.sigma[t - 1] * rng.gaussian(x.shape)
        _check_finite(x, t)
    return x


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Descending uniform-stride subsequence ``T, T - k, ...`` with ``k = T // steps``."""
    if not 1 <= steps <= T:
        raise DomainError(f"DDIM steps must lie in 1..{T}, got {steps}")
    stride = T // steps
    return T - stride * np.arange(steps)


def ddim_sample(denoiser: Denoiser, cond, schedule: DiffusionSchedule, steps: int, eta: float,
                rng: SeededRng, shape, x_T=None) -> np.ndarray:
    """Implicit sampler on a strided step subsequence; ``eta = 0`` is deterministic given x_T.

    Per step ``t -> t'``::

        x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
        sig    = eta * sqrt((1 - abar_t') / (1 - abar_t)) * sqrt(1 - abar_t / abar_t')
        x_t'   = sqrt(abar_t') x0_hat + sqrt(1 - abar_t' - sig**2) eps_hat + sig z
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError("eta must lie in [0, 1]")
    taus = ddim_timesteps(schedule.T, steps)
    x = rng.gaussian(shape) if x_T is None else np.array(x_T, dtype=np.float64)
    batch = x.shape[0]
    nexts = np.append(taus[1:], 0)
    for t, t_next in zip(taus, nexts):
        ab = schedule.alpha_bar[t - 1]
        ab_next = float(schedule.alpha_bar_at(t_next))
        eps_hat = denoiser.predict(x, np.full(batch, t), cond)
        x0_hat = (x - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
        sig = eta * np.sqrt((1.0 - ab_next) / (1.0 - ab)) * np.sqrt(1.0 - ab / ab_next)
        x = np.sqrt(ab_next) * x0_hat + np.sqrt(max(1.0 - ab_next - sig**2, 0.0)) * eps_hat
        if sig > 0:
            x = x + sig * rng.gaussian(x.shape)
        _check_finite(x, t)
    return x


DEFAULT_SAMPLER = {"sampler": "ddim", "steps": 200, "eta": 0.0, "seed": 0}


def sample(denoiser: Denoiser, cond, schedule: DiffusionSchedule, config: dict, shape,
           rng: SeededRng | None = None) -> np.ndarray:
    """Dispatch on a sampler config ``{"sampler", "steps", "eta", "seed"}``."""
    cfg = {**DEFAULT_SAMPLER, **config}
    rng = rng or SeededRng(cfg["seed"], "sample")
    if cfg["sampler"] == "ddpm":
        return ddpm_sample(denoiser, cond, schedule, rng, shape)
    if cfg["sampler"] == "ddim":
        return ddim_sample(denoiser, cond, schedule, int(cfg["steps"]), float(cfg["eta"]), rng, shape)
    raise DomainError(f"unknown sampler {cfg['sampler']!r}")
