"""How a low-light capture is built, and how noisy it gets.

A clean sRGB toy face is linearised, mosaicked, turned into electrons
(Poisson shot noise + dark current), read out with Gaussian read noise,
quantised by a 12-bit ADC, demosaicked and re-rendered. We then check the
electron statistics against their Poisson moments and sweep the photon level.

    python demos/01_sensor_noise.py
"""

import numpy as np

from lumen.image import ImageBuffer
from lumen.metrics import psnr
from lumen.rng import SeededRng
from lumen.sensor import (
    IspParams, SensorProfile, degrade_stages, dslr_test_profile, photon_transfer, ptc_exposure,
    simulate_lowlight,
)
from lumen.toy import ToyIdentity

face = ToyIdentity.from_seed(0, 0).render(SeededRng(0, "demo"), size=16)

# 1. the stages for one capture at 13 photons per pixel
profile = dslr_test_profile(13.0)
st = degrade_stages(ImageBuffer(np.full((500, 500, 1), 0.5)), profile, SeededRng(1))
e = st.electrons
print(f"electrons at radiance 0.5, ppp 13: mean {e.mean():.3f} (expected {st.electron_mean.flat[0]:.3f}), "
      f"var/mean {e.var() / e.mean():.3f}")
print(f"DN range {int(st.dn.min())}..{int(st.dn.max())} of {profile.max_dn}")

# 2. photon transfer: the slope of variance vs mean in DN is the conversion gain
ptc = photon_transfer(ptc_exposure(profile), n_pixels=200_000, rng=SeededRng(2))
print(f"photon-transfer slope {ptc.slope:.5f} DN/e-, nominal {profile.max_dn / profile.full_well:.5f}")

# 3. image quality falls quickly as light drops
print("\nppp   PSNR of the rendered capture (dB)")
for ppp in (5, 13, 26, 39, 65, 1000):
    noisy = simulate_lowlight(face, dslr_test_profile(ppp), IspParams(), SeededRng(3, ppp))
    print(f"{ppp:<5} {psnr(noisy, face):6.2f}")

# 4. the training range: random sensors drawn per pair
r = SeededRng(4)
for _ in range(3):
    p = SensorProfile.sample_training(r.split("p", _))
    print(f"training sensor: FW {p.full_well:.0f} QE {p.quantum_efficiency:.2f} dark {p.dark_current:.1f} "
          f"read {p.read_noise:.1f} ppp {p.photon_level:.0f}")
