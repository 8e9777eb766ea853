"""Concrete noise predictors: a closed-form Gaussian oracle and a FiLM-conditioned MLP.

The MLP is plain numpy with a hand-written reverse pass and Adam. Each hidden
layer computes::

    z = W h + b + Wt e(t)
    u = s(latent) * z + sh(latent)      (scale_shift; "additive" drops s)
    h = silu(u)

where ``e(t)`` is a fixed 32-d sinusoidal embedding and ``s``/``sh`` are affine
in the latent code, initialised to 1 and 0 so an untrained network ignores the
latent. The input is the flattened noisy sample concatenated with the
flattened degraded observation ``cond.y``.

With ``skip=True`` the output is ``g0(t) * x_t + g1(t) * mlp(...)`` where
``(g0, g1)`` are affine in the time embedding, initialised to ``(0, 1)``. The
hidden layers are far narrower than the image, and most of the noise target
at high noise levels is a step-dependent multiple of ``x_t`` itself; the gated
skip carries that part past the bottleneck.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import Condition, training_step
from .errors import ContractError, FormatError, NumericError
from .imageio import atomic_write_bytes, write_json
from .rng import SeededRng
from .schedules import DiffusionSchedule

CHECKPOINT_MAGIC = b"DPGD"
CHECKPOINT_VERSION = 1


@dataclass
class GaussianOracle:
    """MMSE noise predictor when the data is ``N(mu, var * I)``."""

    mu: np.ndarray
    var: float
    schedule: DiffusionSchedule

    def __post_init__(self):
        if self.var <= 0:
            raise ContractError("oracle variance must be positive")
        self.mu = np.asarray(self.mu, dtype=np.float64)

    def predict(self, x_t, t, cond=None):
        x_t = np.asarray(x_t, dtype=np.float64)
        t = np.asarray(t)
        ab = self.schedule.alpha_bar[t - 1]
        if ab.ndim:
            ab = ab.reshape(ab.shape + (1,) * (x_t.ndim - 1))
        return np.sqrt(1.0 - ab) * (x_t - np.sqrt(ab) * self.mu) / (ab * self.var + 1.0 - ab)


def oracle_predict(x_t, t, oracle: GaussianOracle):
    return oracle.predict(x_t, t)


def timestep_embedding(t, dim: int = 32, base: float = 1e4) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t w_k), cos(t w_k)]`` with ``w_k = base**(-k/half)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(base) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def silu(u):
    return u * _sigmoid(u)


def silu_grad(u):
    s = _sigmoid(u)
    return s * (1.0 + u * (1.0 - s))


class MlpDenoiser:
    """Time- and latent-conditioned MLP predicting the injected noise."""

    def __init__(self, x_dim: int, y_dim: int = 0, latent_dim: int = 0, hidden=(128, 128),
                 temb_dim: int = 32, film: str = "scale_shift", seed: int = 0, out_scale: float = 0.1,
                 skip: bool = False):
        if film not in ("scale_shift", "additive"):
            raise ContractError("film must be 'scale_shift' or 'additive'")
        self.x_dim, self.y_dim, self.latent_dim = int(x_dim), int(y_dim), int(latent_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.temb_dim, self.film, self.seed, self.skip = int(temb_dim), film, int(seed), bool(skip)
        self.widths = (self.x_dim + self.y_dim, *self.hidden, self.x_dim)
        self.params: dict[str, np.ndarray] = {}
        self._cache = None
        rng = SeededRng(seed, "mlp-init")
        n_layers = len(self.widths) - 1
        for l in range(n_layers):
            fan_in, fan_out = self.widths[l], self.widths[l + 1]
            scale = 1.0 / math.sqrt(fan_in) * (out_scale if l == n_layers - 1 else 1.0)
            self.params[f"W{l}"] = rng.split("W", l).gaussian((fan_out, fan_in)) * scale
            self.params[f"b{l}"] = np.zeros(fan_out)
            if l < n_layers - 1:
                self.params[f"Wt{l}"] = rng.split("Wt", l).gaussian((fan_out, temb_dim)) / math.sqrt(temb_dim)
                if self.latent_dim:
                    if film == "scale_shift":
                        self.params[f"Ws{l}"] = np.zeros((fan_out, self.latent_dim))
                        self.params[f"bs{l}"] = np.ones(fan_out)
                    self.params[f"Wh{l}"] = np.zeros((fan_out, self.latent_dim))
                    self.params[f"bh{l}"] = np.zeros(fan_out)
        if self.skip:
            self.params["Wg"] = np.zeros((2, temb_dim))
            self.params["bg"] = np.array([0.0, 1.0])

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def config(self) -> dict:
        return {
            "x_dim": self.x_dim, "y_dim": self.y_dim, "latent_dim": self.latent_dim,
            "hidden": list(self.hidden), "temb_dim": self.temb_dim, "film": self.film,
            "seed": self.seed, "skip": self.skip,
        }

    def copy(self) -> MlpDenoiser:
        other = object.__new__(MlpDenoiser)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other._cache = None
        return other

    def _inputs(self, x_t, cond: Condition | None):
        batch = x_t.shape[0]
        parts = [x_t.reshape(batch, -1)]
        if self.y_dim:
            if cond is None or cond.y is None:
                raise ContractError("this network concatenates cond.y but none was given")
            parts.append(np.asarray(cond.y, dtype=np.float64).reshape(batch, -1))
        h = np.concatenate(parts, axis=1)
        if h.shape[1] != self.widths[0]:
            raise ContractError(f"input width {h.shape[1]} != network input {self.widths[0]}")
        latent = None
        if cond is not None and cond.latent is not None and self.latent_dim:
            latent = np.asarray(cond.latent, dtype=np.float64)
            if latent.ndim == 1:
                latent = np.broadcast_to(latent, (batch, latent.size))
            if latent.shape != (batch, self.latent_dim):
                raise ContractError(f"latent shape {latent.shape} != ({batch}, {self.latent_dim})")
        return h, latent

    def forward(self, x_t, t, cond: Condition | None = None) -> np.ndarray:
        """Predict noise for a batch and cache activations for :meth:`backward`."""
        x_t = np.asarray(x_t, dtype=np.float64)
        h, latent = self._inputs(x_t, cond)
        temb = timestep_embedding(np.broadcast_to(np.asarray(t), (x_t.shape[0],)), self.temb_dim)
        p = self.params
        layers = []
        for l in range(self.n_layers - 1):
            z = h @ p[f"W{l}"].T + p[f"b{l}"] + temb @ p[f"Wt{l}"].T
            scale = None
            if latent is not None:
                shift = latent @ p[f"Wh{l}"].T + p[f"bh{l}"]
                if self.film == "scale_shift":
                    scale = latent @ p[f"Ws{l}"].T + p[f"bs{l}"]
                    u = scale * z + shift
                else:
                    u = z + shift
            else:
                u = z
            layers.append((h, z, scale, u))
            h = silu(u)
        L = self.n_layers - 1
        mlp_out = h @ p[f"W{L}"].T + p[f"b{L}"]
        x_flat = x_t.reshape(x_t.shape[0], -1)
        gates = None
        if self.skip:
            gates = temb @ p["Wg"].T + p["bg"]
            out = gates[:, :1] * x_flat + gates[:, 1:] * mlp_out
        else:
            out = mlp_out
        self._cache = {"layers": layers, "h_last": h, "temb": temb, "latent": latent,
                       "x_shape": x_t.shape, "x_flat": x_flat, "mlp_out": mlp_out, "gates": gates}
        return out.reshape(x_t.shape)

    predict = forward

    def backward(self, grad_out) -> dict[str, np.ndarray]:
        """Reverse pass of the last :meth:`forward`; returns a gradient per parameter.

        ``self.input_grads`` afterwards holds gradients for the flattened input
        vector and the latent code.
        """
        if self._cache is None:
            raise ContractError("backward called without a cached forward pass")
        c = self._cache
        p = self.params
        g = np.asarray(grad_out, dtype=np.float64).reshape(c["x_shape"][0], -1)
        grads: dict[str, np.ndarray] = {}
        dx_skip = 0.0
        if self.skip:
            gates = c["gates"]
            dgates = np.stack([(g * c["x_flat"]).sum(axis=1), (g * c["mlp_out"]).sum(axis=1)], axis=1)
            grads["Wg"] = dgates.T @ c["temb"]
            grads["bg"] = dgates.sum(axis=0)
            dx_skip = gates[:, :1] * g
            g = gates[:, 1:] * g
        L = self.n_layers - 1
        grads[f"W{L}"] = g.T @ c["h_last"]
        grads[f"b{L}"] = g.sum(axis=0)
        dh = g @ p[f"W{L}"]
        latent = c["latent"]
        dlatent = None if latent is None else np.zeros_like(latent)
        for l in range(L - 1, -1, -1):
            h_in, z, scale, u = c["layers"][l]
            du = dh * silu_grad(u)
            if latent is not None:
                grads[f"Wh{l}"] = du.T @ latent
                grads[f"bh{l}"] = du.sum(axis=0)
                dlatent += du @ p[f"Wh{l}"]
                if self.film == "scale_shift":
                    ds = du * z
                    grads[f"Ws{l}"] = ds.T @ latent
                    grads[f"bs{l}"] = ds.sum(axis=0)
                    dlatent += ds @ p[f"Ws{l}"]
                    dz = du * scale
                else:
                    dz = du
            else:
                dz = du
                for name in (f"Ws{l}", f"bs{l}", f"Wh{l}", f"bh{l}"):
                    if name in p:
                        grads[name] = np.zeros_like(p[name])
            grads[f"W{l}"] = dz.T @ h_in
            grads[f"b{l}"] = dz.sum(axis=0)
            grads[f"Wt{l}"] = dz.T @ c["temb"]
            dh = dz @ p[f"W{l}"]
        dh[:, : self.x_dim] += dx_skip
        self.input_grads = {"input": dh, "latent": dlatent}
        return {k: grads[k] for k in p}

    def save(self, path, extra: dict | None = None, adam: AdamState | None = None) -> None:
        arrays = dict(self.params)
        manifest = {"model": "mlp_denoiser", "config": self.config(), **(extra or {})}
        if adam is not None:
            arrays.update({f"adam.m.{k}": v for k, v in adam.m.items()})
            arrays.update({f"adam.v.{k}": v for k, v in adam.v.items()})
            manifest["adam"] = adam.hyper()
        save_checkpoint(path, arrays, manifest)

    @classmethod
    def load(cls, path) -> tuple[MlpDenoiser, dict, AdamState | None]:
        arrays, manifest = load_checkpoint(path)
        net = cls(**manifest["config"])
        for k in net.params:
            if arrays[k].shape != net.params[k].shape:
                raise FormatError(f"array {k} has shape {arrays[k].shape}, expected {net.params[k].shape}")
            net.params[k] = arrays[k].astype(np.float64)
        adam = None
        if "adam" in manifest:
            adam = AdamState(**{k: v for k, v in manifest["adam"].items() if k != "step"})
            adam.step = manifest["adam"]["step"]
            adam.m = {k: arrays[f"adam.m.{k}"].astype(np.float64) for k in net.params}
            adam.v = {k: arrays[f"adam.v.{k}"].astype(np.float64) for k in net.params}
        return net, manifest, adam


def mlp_forward(x_t, t, cond, net: MlpDenoiser):
    return net.forward(x_t, t, cond)


def mlp_backward(net: MlpDenoiser, residual):
    return net.backward(residual)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = field(default=0, init=False)
    m: dict = field(default_factory=dict, init=False)
    v: dict = field(default_factory=dict, init=False)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "weight_decay": self.weight_decay, "step": self.step}


def adam_update(net: MlpDenoiser, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam step applied in place to ``net.params``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", param=k, step=state.step + 1)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, g in grads.items():
        if state.weight_decay:
            g = g + state.weight_decay * net.params[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        if m.shape != g.shape:
            raise ContractError(f"moment shape {m.shape} does not match gradient {g.shape} for {k}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        net.params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class Dataset:
    """Training pairs: clean targets ``x0`` (N, ...) and a batched :class:`Condition`."""

    x0: np.ndarray
    cond: Condition

    def __len__(self):
        return len(self.x0)


def train_loop(data: Dataset, net: MlpDenoiser, schedule: DiffusionSchedule, iters: int,
               batch: int, rng: SeededRng, state: AdamState | None = None,
               log_every: int = 0, log=print):
    """Minibatch training of the weighted noise-regression objective.

    Returns ``(net, state, losses)``; ``net`` is updated in place.
    """
    if len(data) == 0:
        raise ContractError("training set is empty")
    state = state or AdamState()
    losses = []
    for it in range(int(iters)):
        step_rng = rng.split("iter", state.step)
        idx = step_rng.integers(0, len(data), shape=batch)
        res = training_step(data.x0[idx], data.cond.take(idx), net, schedule, step_rng)
        grads = net.backward(res.grad)
        adam_update(net, grads, state)
        losses.append(res.loss)
        if log_every and (it + 1) % log_every == 0:
            log(f"iter {it + 1}: loss {np.mean(losses[-log_every:]):.5f}")
    return net, state, np.array(losses)


def save_checkpoint(path, arrays: dict, manifest: dict) -> None:
    """Binary ``DPGD`` file (magic, u32 version, u32 count, float32 LE arrays) + JSON manifest."""
    names = list(arrays)
    blobs = [struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(names))]
    for k in names:
        blobs.append(np.asarray(arrays[k], dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(blobs))
    manifest = dict(manifest)
    manifest["arrays"] = [{"name": k, "shape": list(np.shape(arrays[k]))} for k in names]
    manifest["format"] = {"magic": CHECKPOINT_MAGIC.decode(), "version": CHECKPOINT_VERSION}
    write_json(Path(path).with_suffix(".json"), manifest)


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a DPGD checkpoint", offset=0)
    _, version, count = struct.unpack_from("<4sII", raw, 0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    manifest = json.loads(Path(path).with_suffix(".json").read_text())
    entries = manifest["arrays"]
    if len(entries) != count:
        raise FormatError(f"manifest lists {len(entries)} arrays, file holds {count}", offset=8)
    arrays, offset = {}, 12
    for e in entries:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if offset + 4 * n > len(raw):
            raise FormatError(f"array {e['name']} truncated", offset=offset)
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(e["shape"]).copy()
        offset += 4 * n
    if offset != len(raw):
        raise FormatError("trailing bytes after last array", offset=offset)
    return arrays, manifest
