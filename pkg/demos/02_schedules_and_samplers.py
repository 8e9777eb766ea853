"""Noise schedules, P2 weights and the two samplers on a Gaussian oracle.

When the data are Gaussian the optimal noise predictor is known in closed
form, so the samplers can be judged without any training. DDPM uses
sigma_t^2 = beta_t; DDIM with eta = 0 is deterministic, and DDIM with eta = 1
over all T steps lands on the posterior-variance ancestral sampler, which has
a visibly smaller final variance than the beta_t one. Deterministic DDIM
with few steps also under-disperses on this very sharp target: the mean is
right but each coarse step shrinks the spread.

    python demos/02_schedules_and_samplers.py
"""

import numpy as np

from lumen.denoisers import GaussianOracle
from lumen.diffusion import ddim_sample, ddpm_sample
from lumen.rng import SeededRng
from lumen.schedules import cosine_schedule, linear_schedule, p2_weights

lin, cos = linear_schedule(1000), cosine_schedule(1000)
print("t      SNR linear   SNR cosine   P2 weight (linear, gamma=1)")
for t in (1, 100, 250, 500, 750, 1000):
    w = p2_weights(lin.snr[t - 1 : t])[0]
    print(f"{t:<6} {lin.snr[t - 1]:11.4g}  {cos.snr[t - 1]:11.4g}  {w:.4f}")

mu, var = 0.3, 0.05**2
oracle = GaussianOracle(np.full(4, mu), var, lin)
shape = (5000, 4)
runs = {
    "DDPM (sigma^2 = beta)": ddpm_sample(oracle, None, lin, SeededRng(0, "ddpm"), shape),
    "DDIM 200 steps, eta 0": ddim_sample(oracle, None, lin, 200, 0.0, SeededRng(0, "d0"), shape),
    "DDIM 50 steps, eta 0": ddim_sample(oracle, None, lin, 50, 0.0, SeededRng(0, "d50"), shape),
    "DDIM 1000 steps, eta 1": ddim_sample(oracle, None, lin, 1000, 1.0, SeededRng(0, "d1"), shape),
}
print(f"\ntarget N({mu}, {var:.4f})")
for name, x in runs.items():
    print(f"{name:<24} mean {x.mean():.4f}  var/target {x.var() / var:.3f}")
