"""L1 + D-SSIM photometric loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F


class ShapeMismatch(ValueError):
    pass


@dataclass
class LossConfig:
    lambda1: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    c1: float = 0.01**2
    c2: float = 0.03**2

    def __post_init__(self):
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ValueError(f"lambda1 must lie in [0, 1], got {self.lambda1}")


def gaussian_window(size: int, sigma: float, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    return (g / g.sum()).to(dtype)


def _blur(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    """Separable blur of ``(C, H, W)`` with reflective padding."""
    r = win.numel() // 2
    c = x.shape[0]
    x = x[None]
    x = F.pad(x, (r, r, 0, 0), mode="reflect")
    x = F.conv2d(x, win.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    x = F.pad(x, (0, 0, r, r), mode="reflect")
    x = F.conv2d(x, win.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)
    return x[0]


def ssim_map(a: torch.Tensor, b: torch.Tensor, cfg: LossConfig | None = None) -> torch.Tensor:
    cfg = cfg or LossConfig()
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    win = gaussian_window(cfg.ssim_window, cfg.ssim_sigma, a.dtype)
    # (H, W, C) -> (C, H, W)
    x = a.permute(2, 0, 1)
    y = b.permute(2, 0, 1)
    # all five moments in one grouped convolution
    mu_x, mu_y, exx, eyy, exy = _blur(torch.cat([x, y, x * x, y * y, x * y]), win).chunk(5)
    sxx = exx - mu_x * mu_x
    syy = eyy - mu_y * mu_y
    sxy = exy - mu_x * mu_y
    num = (2 * mu_x * mu_y + cfg.c1) * (2 * sxy + cfg.c2)
    den = (mu_x * mu_x + mu_y * mu_y + cfg.c1) * (sxx + syy + cfg.c2)
    return num / den


def ssim(a: torch.Tensor, b: torch.Tensor, cfg: LossConfig | None = None) -> torch.Tensor:
    """Mean windowed SSIM of two ``(H, W, 3)`` images; exactly 1 for identical inputs."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    return ssim_map(a, b, cfg).mean()


def loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig | None = None) -> torch.Tensor:
    """``(1 - lambda1) * L1 + lambda1 * (1 - SSIM) / 2``."""
    cfg = cfg or LossConfig()
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{tuple(pred.shape)} vs {tuple(target.shape)}")
    l1 = (pred - target).abs().mean()
    if cfg.lambda1 == 0.0:
        return l1
    d_ssim = (1.0 - ssim(pred, target, cfg)) / 2.0
    return (1.0 - cfg.lambda1) * l1 + cfg.lambda1 * d_ssim


def psnr_torch(a: torch.Tensor, b: torch.Tensor) -> float:
    mse = float(((a.clamp(0, 1) - b.clamp(0, 1)) ** 2).mean())
    return 100.0 if mse < 1e-10 else -10.0 * math.log10(mse)
