"""Low-light sensor simulation, conditional diffusion restoration and
gallery-conditioned identity evaluation at desk scale."""

from .conditioning import build_condition, default_buffer_encoder
from .denoisers import AdamState, GaussianOracle, MlpDenoiser, adam_update, train_loop
from .diffusion import Condition, ddim_sample, ddpm_sample, forward_sample, sample, training_step
from .errors import CapacityError, ContractError, DomainError, FormatError, LumenError, NumericError
from .gallery import GalleryCodes, LinearCodec, PhysicalBuffers, aggregate, extract_buffers
from .image import DN, ELECTRONS, SIGNED, UNIT, ImageBuffer
from .imageio import read_image, write_image
from .metrics import frechet_distance, id_score, kernel_distance, psnr
from .rng import SeededRng
from .schedules import DiffusionSchedule, cosine_schedule, linear_schedule
from .sensor import IspParams, SensorProfile, degrade, demosaic, mosaic, simulate_lowlight

__version__ = "0.1.0"
