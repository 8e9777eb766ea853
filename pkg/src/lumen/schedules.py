"""Variance schedules and the per-step quantities derived from them.

Vectors are 0-indexed: element ``t - 1`` belongs to diffusion step ``t`` in
``1..T``. Everything is computed in float64; ``alpha_bar`` is the left-to-right
running product of ``1 - beta`` so ``alpha_bar[t] == alpha_bar[t-1] * (1 - beta[t])``
holds exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError


def p2_weights(snr, k: float = 1.0, gamma: float = 1.0) -> np.ndarray:
    """Perception-prioritised loss weights ``1 / (k + snr)**gamma``.

    Accepts either an SNR vector or a :class:`DiffusionSchedule`.
    """
    if isinstance(snr, DiffusionSchedule):
        snr = snr.snr
    if k < 0 or gamma < 0:
        raise DomainError("p2 weights need k >= 0 and gamma >= 0")
    return 1.0 / np.power(k + np.asarray(snr, dtype=np.float64), gamma)


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray
    kind: str = "custom"
    p2_k: float = 1.0
    p2_gamma: float = 1.0
    params: dict | None = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise DomainError("beta must be a non-empty vector")
        if not np.all((beta > 0) & (beta < 1)):
            raise DomainError("every beta_t must lie in (0, 1)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        alpha_bar = np.cumprod(1.0 - beta)
        snr = alpha_bar / (1.0 - alpha_bar)
        for name, arr in (
            ("alpha_bar", alpha_bar),
            ("sigma", np.sqrt(beta)),
            ("snr", snr),
            ("lambda_p2", p2_weights(snr, self.p2_k, self.p2_gamma)),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.beta.size

    def check_step(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise DomainError(f"step index must lie in 1..{self.T}")
        return t.astype(np.int64)

    def alpha_bar_at(self, t):
        """``alpha_bar`` at step t, with the convention ``alpha_bar_0 = 1``."""
        t = np.asarray(t, dtype=np.int64)
        return np.where(t == 0, 1.0, self.alpha_bar[np.maximum(t, 1) - 1])

    def as_float32(self) -> dict:
        return {
            k: getattr(self, k).astype(np.float32)
            for k in ("beta", "alpha_bar", "sigma", "snr", "lambda_p2")
        }

    def to_config(self) -> dict:
        cfg = {"kind": self.kind, "T": self.T, "p2_k": self.p2_k, "p2_gamma": self.p2_gamma}
        cfg.update(self.params or {})
        return cfg


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                    p2_k: float = 1.0, p2_gamma: float = 1.0) -> DiffusionSchedule:
    if int(T) < 1:
        raise DomainError("T must be at least 1")
    if not 0 < beta_start <= beta_end < 1:
        raise DomainError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return DiffusionSchedule(beta, "linear", p2_k, p2_gamma,
                             {"beta_start": beta_start, "beta_end": beta_end})


def cosine_schedule(T: int = 1000, s: float = 0.008, max_beta: float = 0.999,
                    p2_k: float = 1.0, p2_gamma: float = 1.0) -> DiffusionSchedule:
    """Squared-cosine cumulative-signal curve, betas clipped to ``max_beta``.

    ``alpha_bar`` is recomputed from the clipped betas so the recurrence holds.
    """
    if int(T) < 1:
        raise DomainError("T must be at least 1")
    if s <= 0:
        raise DomainError("cosine offset s must be positive")
    steps = np.arange(int(T) + 1, dtype=np.float64) / int(T)
    f = np.cos((steps + s) / (1.0 + s) * math.pi / 2) ** 2
    ratio = f[1:] / f[:-1]
    beta = np.clip(1.0 - ratio, 1e-12, max_beta)
    return DiffusionSchedule(beta, "cosine", p2_k, p2_gamma, {"s": s})


def schedule_from_config(cfg: dict) -> DiffusionSchedule:
    kind = cfg.get("kind", "linear")
    k, g = cfg.get("p2_k", 1.0), cfg.get("p2_gamma", 1.0)
    if kind == "linear":
        return linear_schedule(cfg.get("T", 1000), cfg.get("beta_start", 1e-4),
                               cfg.get("beta_end", 0.02), k, g)
    if kind == "cosine":
        return cosine_schedule(cfg.get("T", 1000), cfg.get("s", 0.008), p2_k=k, p2_gamma=g)
    raise DomainError(f"unknown schedule kind {kind!r}")


def load_schedule(path) -> DiffusionSchedule:
    return schedule_from_config(json.loads(Path(path).read_text()))
