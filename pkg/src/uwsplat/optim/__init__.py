from .adam import AdamState, adam_step
from .loss import LossConfig, loss, ssim

__all__ = ["AdamState", "adam_step", "LossConfig", "loss", "ssim"]
