"""SMGAN: structurally-sensitive multi-scale GAN denoising for low-dose CT, on a numpy autodiff core."""
__version__ = "0.1.0"

from .config import CriticSpec, GeneratorSpec, LossConfig, TrainConfig, desk_config, load_config
from .losses import critic_loss, generator_objective, l1_loss, l2_loss, ms_ssim, ssl_loss, structural_loss
from .metrics import psnr, rmse, roi_stats, ssim_metric
from .nets import Critic, Generator
from .trainer import denoise, denoise_volume, train

__all__ = [
    "Critic",
    "CriticSpec",
    "Generator",
    "GeneratorSpec",
    "LossConfig",
    "TrainConfig",
    "__version__",
    "critic_loss",
    "denoise",
    "denoise_volume",
    "desk_config",
    "generator_objective",
    "l1_loss",
    "l2_loss",
    "load_config",
    "ms_ssim",
    "psnr",
    "rmse",
    "roi_stats",
    "ssim_metric",
    "ssl_loss",
    "structural_loss",
    "train",
]
