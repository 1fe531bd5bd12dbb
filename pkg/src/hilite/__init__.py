"""Non-learned building blocks for document specular-highlight removal.

Laplacian pyramids, the residual highlight location prior, image and mask
metrics, loss arithmetic, diffusion forward-process math and dataset QC.
"""

from .errors import HiliteError
from .imagecore import load_image, save_image, to_grayscale
from .metrics import LossWeights, psnr, rmse, ssim
from .prior import PriorConfig, generate_prior
from .pyramid import Pyramid, decompose, reconstruct

__all__ = [
    "HiliteError",
    "LossWeights",
    "PriorConfig",
    "Pyramid",
    "decompose",
    "generate_prior",
    "load_image",
    "psnr",
    "reconstruct",
    "rmse",
    "save_image",
    "ssim",
    "to_grayscale",
]

__version__ = "0.1.0"
