"""Poisson-Gaussian low-light sensor model, Bayer mosaicking and an analytic ISP.

The forward model per pixel is::

    electrons = Poisson(radiance * photon_level * quantum_efficiency + dark_current)
    dn        = clamp(round(electrons / full_well * (2**bits - 1)), 0, 2**bits - 1)
    out       = clamp(dn + round(N(0, 1) * read_noise_dn), 0, 2**bits - 1)

with ``read_noise_dn = read_noise / full_well * (2**bits - 1)``. Setting
``read_noise_stage="pre"`` instead adds the read noise in electrons before the
ADC. Rounding is half away from zero throughout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .image import DN, UNIT, ImageBuffer, round_half_away
from .rng import SeededRng

CFA_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
_CHANNEL = {"R": 0, "G": 1, "B": 2}

# Parameter ranges of the training-time simulator.
TRAINING_RANGES = {
    "full_well": (19000.0, 64000.0),
    "quantum_efficiency": (0.32, 0.54),
    "dark_current": (2.2, 11.7),
    "read_noise": (2.2, 10.8),
    "photon_level": (13.0, 65.0),
}
MIN_TEST_PHOTON_LEVEL = 5.0

# Approximate illuminance labels for the evaluated photon levels; documentation only.
PPP_LUX_LABELS = {5: 0.049, 10: 0.098, 13: 0.128, 26: 0.256, 39: 0.384}


@dataclass(frozen=True)
class SensorProfile:
    full_well: float = 36000.0
    quantum_efficiency: float = 0.42
    dark_current: float = 7.0
    read_noise: float = 6.0
    photon_level: float = 26.0
    bit_depth: int = 12
    cfa: str = "RGGB"
    read_noise_stage: str = "post"

    def __post_init__(self):
        if not (self.full_well > 0 and self.photon_level > 0):
            raise ContractError("full_well and photon_level must be positive")
        if not 0 < self.quantum_efficiency <= 1:
            raise ContractError(f"quantum_efficiency must lie in (0, 1], got {self.quantum_efficiency}")
        # zero dark current / read noise is allowed for ideal-sensor checks
        if self.dark_current < 0 or self.read_noise < 0:
            raise ContractError("dark_current and read_noise must be non-negative")
        if not (isinstance(self.bit_depth, (int, np.integer)) and 8 <= self.bit_depth <= 16):
            raise ContractError(f"bit_depth must be an integer in [8, 16], got {self.bit_depth}")
        if self.cfa not in CFA_PATTERNS:
            raise ContractError(f"cfa must be one of {CFA_PATTERNS}, got {self.cfa!r}")
        if self.read_noise_stage not in ("pre", "post"):
            raise ContractError("read_noise_stage must be 'pre' or 'post'")

    @property
    def max_dn(self) -> int:
        return 2**self.bit_depth - 1

    @property
    def gain(self) -> float:
        """Digital numbers per electron."""
        return self.max_dn / self.full_well

    @property
    def electrons_per_unit(self) -> float:
        """Signal electrons produced by a unit-radiance pixel."""
        return self.photon_level * self.quantum_efficiency

    @property
    def dark_dn(self) -> float:
        return self.dark_current * self.gain

    def in_training_range(self) -> bool:
        return all(lo <= getattr(self, k) <= hi for k, (lo, hi) in TRAINING_RANGES.items())

    def with_ppp(self, ppp: float) -> SensorProfile:
        return replace(self, photon_level=float(ppp))

    @classmethod
    def sample_training(cls, rng: SeededRng, **overrides) -> SensorProfile:
        """Draw each parameter uniformly from its training range."""
        values = {k: float(rng.uniform(low=lo, high=hi)) for k, (lo, hi) in TRAINING_RANGES.items()}
        values.update(overrides)
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SensorProfile:
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path, ppp: float | None = None) -> SensorProfile:
        prof = cls.from_dict(json.loads(Path(path).read_text()))
        return prof if ppp is None else prof.with_ppp(ppp)


def dslr_test_profile(ppp: float = 26.0) -> SensorProfile:
    """Fixed 12-bit evaluation sensor: FW 36000 e-, QE 0.42, dark 7 e-, read 6 e-."""
    return SensorProfile(36000.0, 0.42, 7.0, 6.0, float(ppp), 12)


@dataclass(frozen=True)
class IspParams:
    gamma: float = 2.2
    white_balance: tuple = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        wb = tuple(float(g) for g in self.white_balance)
        if self.gamma <= 0:
            raise ContractError("gamma must be positive")
        if len(wb) != 3 or min(wb) <= 0:
            raise ContractError("white_balance needs three positive gains")
        object.__setattr__(self, "white_balance", wb)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "white_balance": list(self.white_balance)}

    @classmethod
    def from_dict(cls, d: dict) -> IspParams:
        return cls(gamma=d.get("gamma", 2.2), white_balance=tuple(d.get("white_balance", (1, 1, 1))))


def _require_rgb(img: ImageBuffer):
    if img.channels != 3:
        raise ContractError(f"expected a 3-channel image, got {img.channels} channels")
    if img.range != UNIT:
        raise ContractError(f"expected range {UNIT!r}, got {img.range!r}")


def inverse_isp(rgb: ImageBuffer, p: IspParams = IspParams()) -> ImageBuffer:
    """Display RGB to linear radiance: ``in**gamma / wb`` per channel, clamped to [0, 1]."""
    _require_rgb(rgb)
    wb = np.asarray(p.white_balance)
    lin = np.power(rgb.data.astype(np.float64), p.gamma) / wb
    return ImageBuffer(np.clip(lin, 0.0, 1.0), range=UNIT)


def forward_isp(radiance: ImageBuffer, p: IspParams = IspParams()) -> ImageBuffer:
    """Linear radiance to display RGB: ``(in * wb)**(1/gamma)`` clamped to [0, 1]."""
    _require_rgb(radiance)
    wb = np.asarray(p.white_balance)
    lin = np.clip(radiance.data.astype(np.float64) * wb, 0.0, 1.0)
    return ImageBuffer(np.power(lin, 1.0 / p.gamma), range=UNIT)


def cfa_masks(height: int, width: int, cfa: str = "RGGB") -> np.ndarray:
    """Boolean H x W x 3 array marking which channel each mosaic site records."""
    if cfa not in CFA_PATTERNS:
        raise ContractError(f"unknown CFA pattern {cfa!r}")
    masks = np.zeros((height, width, 3), dtype=bool)
    for k, letter in enumerate(cfa):
        dy, dx = divmod(k, 2)
        masks[dy::2, dx::2, _CHANNEL[letter]] = True
    return masks


def _require_even(img: ImageBuffer):
    if img.height % 2 or img.width % 2:
        raise ContractError(f"CFA operations need even dimensions, got {img.height}x{img.width}")


def mosaic(radiance: ImageBuffer, cfa: str = "RGGB") -> ImageBuffer:
    """Sample one channel per pixel according to the 2x2 CFA tile."""
    if radiance.channels != 3:
        raise ContractError("mosaic expects a 3-channel image")
    _require_even(radiance)
    masks = cfa_masks(radiance.height, radiance.width, cfa)
    raw = np.where(masks, radiance.data, 0.0).sum(axis=2)
    return radiance.with_data(raw[:, :, None])


_BILINEAR = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])


def demosaic(raw: ImageBuffer, cfa: str = "RGGB", method: str = "bilinear") -> ImageBuffer:
    """Reconstruct three colour planes from a 1-channel mosaic.

    ``bilinear`` fills each missing sample with the bilinear-weighted mean of
    the same-colour samples in its 3x3 neighbourhood (mirror borders); the
    weights of present samples are renormalised so every output is a convex
    combination of inputs. ``tile`` instead fills each 2x2 tile from its own
    samples only (the two greens averaged), which inverts :func:`mosaic`
    exactly on tile-constant images.
    """
    if raw.channels != 1:
        raise ContractError("demosaic expects a 1-channel mosaic")
    _require_even(raw)
    src = raw.data[:, :, 0].astype(np.float64)
    masks = cfa_masks(raw.height, raw.width, cfa)
    out = np.empty(src.shape + (3,))
    if method == "bilinear":
        for c in range(3):
            m = masks[:, :, c].astype(np.float64)
            num = ndimage.convolve(src * m, _BILINEAR, mode="mirror")
            den = ndimage.convolve(m, _BILINEAR, mode="mirror")
            out[:, :, c] = np.where(masks[:, :, c], src, num / den)
    elif method == "tile":
        h2, w2 = raw.height // 2, raw.width // 2
        tiles = src.reshape(h2, 2, w2, 2)
        tmask = masks.reshape(h2, 2, w2, 2, 3)
        for c in range(3):
            m = tmask[..., c]
            val = (tiles * m).sum(axis=(1, 3)) / m.sum(axis=(1, 3))
            out[:, :, c] = np.repeat(np.repeat(val, 2, axis=0), 2, axis=1)
    else:
        raise ContractError(f"unknown demosaic method {method!r}")
    out = np.clip(out, src.min(), src.max())
    return raw.with_data(out)


@dataclass(frozen=True)
class DegradeStages:
    """Intermediate arrays of :func:`degrade_stages` (all H x W float64)."""

    electron_mean: np.ndarray
    electrons: np.ndarray
    dn_pre_read: np.ndarray
    dn: np.ndarray


def _adc(electrons, profile: SensorProfile):
    return np.clip(round_half_away(electrons * profile.gain), 0, profile.max_dn)


def degrade_stages(radiance: ImageBuffer, profile: SensorProfile, rng: SeededRng) -> DegradeStages:
    if radiance.channels != 1:
        raise ContractError("degrade expects a 1-channel mosaic; apply mosaic() first")
    if radiance.range != UNIT:
        raise ContractError(f"degrade expects unit-linear radiance, got {radiance.range!r}")
    x = radiance.data[:, :, 0].astype(np.float64)
    mean = x * profile.electrons_per_unit + profile.dark_current
    # one stream per image; pixel i consumes the i-th draw of each vectorised call
    electrons = rng.split("shot").poisson(mean).astype(np.float64)
    read = rng.split("read").gaussian(x.shape)
    dn_clean = _adc(electrons, profile)
    if profile.read_noise_stage == "pre":
        dn = _adc(electrons + read * profile.read_noise, profile)
    else:
        read_dn = profile.read_noise * profile.gain
        dn = np.clip(dn_clean + round_half_away(read * read_dn), 0, profile.max_dn)
    return DegradeStages(mean, electrons, dn_clean, dn)


def degrade(radiance: ImageBuffer, profile: SensorProfile, rng: SeededRng) -> ImageBuffer:
    """Apply shot noise, dark current, ADC and read noise to a unit-linear mosaic."""
    st = degrade_stages(radiance, profile, rng)
    return ImageBuffer(st.dn[:, :, None], range=DN, bits=profile.bit_depth, source=radiance.source)


def dn_to_radiance(dn: ImageBuffer, profile: SensorProfile, reference_ppp: float | None = None) -> ImageBuffer:
    """Invert the ADC gain and subtract the dark level.

    With ``reference_ppp=None`` the gain uses the profile's own photon level, so
    the estimate is an unbiased radiance estimate. A fixed ``reference_ppp``
    keeps the exposure of a brighter reference capture, so images taken at
    fewer photons come out proportionally darker.
    """
    ppp = profile.photon_level if reference_ppp is None else float(reference_ppp)
    est = (dn.data.astype(np.float64) - profile.dark_dn) / profile.gain / (ppp * profile.quantum_efficiency)
    return ImageBuffer(np.clip(est, 0.0, 1.0), range=UNIT, source=dn.source)


def simulate_capture(
    rgb: ImageBuffer,
    profile: SensorProfile,
    isp: IspParams,
    rng: SeededRng,
    reference_ppp: float | None = None,
    demosaic_method: str = "bilinear",
) -> tuple[ImageBuffer, ImageBuffer]:
    """Full clean-RGB to noisy-RGB pipeline; returns ``(noisy_rgb, raw_dn_mosaic)``."""
    _require_rgb(rgb)
    raw_clean = mosaic(inverse_isp(rgb, isp), profile.cfa)
    raw_dn = degrade(raw_clean, profile, rng)
    est = dn_to_radiance(raw_dn, profile, reference_ppp)
    noisy = forward_isp(demosaic(est, profile.cfa, demosaic_method), isp)
    return noisy, raw_dn


def simulate_lowlight(
    rgb: ImageBuffer,
    profile: SensorProfile,
    isp: IspParams,
    rng: SeededRng,
    reference_ppp: float | None = None,
    demosaic_method: str = "bilinear",
) -> ImageBuffer:
    return simulate_capture(rgb, profile, isp, rng, reference_ppp, demosaic_method)[0]


def ptc_exposure(profile: SensorProfile, fill: float = 0.5) -> SensorProfile:
    """Same sensor with the photon level raised so unit radiance fills ``fill`` of the well.

    At low photon levels the ADC step (full_well / 2**bits electrons) exceeds
    the shot-noise spread and the photon-transfer curve measures quantisation
    instead of gain; this exposure keeps every grid point shot-noise limited.
    """
    return profile.with_ppp(fill * profile.full_well / profile.quantum_efficiency)


@dataclass
class PhotonTransfer:
    radiances: np.ndarray
    mean_signal_dn: np.ndarray  # mean(dn_pre_read) - dark_dn
    var_dn: np.ndarray          # var(dn_pre_read)
    slope: float                # least-squares slope of var against mean signal
    intercept: float
    electron_mean: np.ndarray   # empirical electron means per radiance
    electron_var: np.ndarray
    electron_expected: np.ndarray


def photon_transfer(
    profile: SensorProfile,
    radiances=np.linspace(0.1, 0.9, 9),
    n_pixels: int = 10**6,
    rng: SeededRng | None = None,
) -> PhotonTransfer:
    """Measure flat-field statistics over a radiance grid (photon-transfer curve)."""
    rng = rng or SeededRng(0, "ptc")
    radiances = np.asarray(radiances, dtype=np.float64)
    side = int(np.ceil(np.sqrt(n_pixels))) // 2 * 2
    flat = np.ones((side, side, 1))
    means, variances, e_mean, e_var, e_exp = [], [], [], [], []
    for i, r in enumerate(radiances):
        st = degrade_stages(ImageBuffer(flat * r), profile, rng.split(i))
        means.append(st.dn_pre_read.mean() - profile.dark_dn)
        variances.append(st.dn_pre_read.var(ddof=1))
        e_mean.append(st.electrons.mean())
        e_var.append(st.electrons.var(ddof=1))
        e_exp.append(st.electron_mean.flat[0])
    means, variances = np.array(means), np.array(variances)
    slope, intercept = np.polyfit(means, variances, 1)
    return PhotonTransfer(
        radiances, means, variances, float(slope), float(intercept),
        np.array(e_mean), np.array(e_var), np.array(e_exp),
    )
