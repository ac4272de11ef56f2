"""Underwater image formation: learned backscatter/attenuation heads and the
textbook simulator used to manufacture synthetic observations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


class ShapeMismatch(ValueError):
    pass


@dataclass
class MediumConfig:
    candidates: int = 4
    embed_dim: int = 32
    init_waterlight: float = 0.05
    init_depth_weight: float = 0.1
    init_atten_std: float = 0.1
    seed: int = 0


EXPONENT_CAP = 3.5


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


class MediumNet(nn.Module):
    """Per-pixel backscatter and attenuation heads driven by the rendered depth.

    A 1x1 convolution over a depth map is a per-pixel affine map, so each head
    is stored as plain weight/bias vectors.
    """

    def __init__(self, cfg: MediumConfig | None = None, dtype: torch.dtype = torch.float64):
        super().__init__()
        cfg = cfg or MediumConfig()
        self.cfg = cfg
        p, e = cfg.candidates, cfg.embed_dim
        gen = torch.Generator().manual_seed(cfg.seed)
        full = lambda v: nn.Parameter(torch.full((3,), float(v), dtype=dtype))  # noqa: E731
        self.wb = full(cfg.init_depth_weight)
        self.bb = full(0.0)
        self.wr = full(cfg.init_depth_weight)
        self.br = full(0.0)
        self.raw_binf = full(_logit(cfg.init_waterlight))
        self.raw_bres = full(_logit(cfg.init_waterlight))
        self.wa = nn.Parameter(cfg.init_atten_std * torch.randn(p, 1 + e, generator=gen, dtype=torch.float64).to(dtype))
        self.ba = nn.Parameter(torch.zeros(p, dtype=dtype))
        self.lam = nn.Parameter(torch.full((p,), 1.0 / p, dtype=dtype))

    # order is part of the checkpoint layout
    BACKSCATTER = ("wb", "bb", "wr", "br", "raw_binf", "raw_bres")
    ATTENUATION = ("wa", "ba", "lam")

    @property
    def binf(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_binf)

    @property
    def bres(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_bres)

    def backscatter(self, depth: torch.Tensor) -> torch.Tensor:
        """``B = Binf (1 - exp(-beta_b)) + Bres exp(-beta_r)``, shape ``(H, W, 3)``."""
        d = depth[..., None]
        beta_b = F.softplus(d * self.wb + self.bb)
        beta_r = F.softplus(d * self.wr + self.br)
        return self.binf * (1.0 - torch.exp(-beta_b)) + self.bres * torch.exp(-beta_r)

    def attenuation_coeff(self, depth: torch.Tensor, e_view: torch.Tensor) -> torch.Tensor:
        """Fused coefficient ``sum_k lambda_k a_k``, shape ``(H, W)``."""
        z = depth[..., None] * self.wa[:, 0] + (self.wa[:, 1:] @ e_view + self.ba)
        a = torch.sigmoid(z)
        return a @ self.lam

    def attenuation(self, depth: torch.Tensor, e_view: torch.Tensor) -> torch.Tensor:
        """``A = sigmoid(exp(-beta_D * D))`` broadcast to three channels."""
        beta_d = self.attenuation_coeff(depth, e_view)
        # a negative fused coefficient can push the logistic to exactly 1.0 in
        # floating point; capping the exponent keeps A strictly inside (0, 1)
        a = torch.sigmoid(torch.exp(torch.clamp_max(-beta_d * depth, EXPONENT_CAP)))
        return a[..., None].expand(*a.shape, 3)

    def maps(self, depth: torch.Tensor, e_view: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.attenuation(depth, e_view), self.backscatter(depth)


def compose_uifm(J, A, B):
    """``I = J * A + B`` element-wise; no clamping."""
    if J.shape != A.shape or J.shape != B.shape:
        raise ShapeMismatch(f"J {tuple(J.shape)}, A {tuple(A.shape)}, B {tuple(B.shape)}")
    return J * A + B


def simulate_uifm_gt(J_gt: np.ndarray, D_gt: np.ndarray, beta_d, beta_b, b_inf) -> np.ndarray:
    """Ground-truth degradation ``J exp(-beta_D D) + Binf (1 - exp(-beta_B D))``."""
    beta_d, beta_b, b_inf = (np.asarray(v, dtype=np.float64) for v in (beta_d, beta_b, b_inf))
    if np.any(beta_d < 0) or np.any(beta_b < 0):
        raise ValueError("attenuation coefficients must be non-negative")
    d = np.asarray(D_gt, dtype=np.float64)[..., None]
    atten = np.exp(-beta_d * d)
    back = b_inf * (1.0 - np.exp(-beta_b * d))
    return np.asarray(J_gt, dtype=np.float64) * atten + back
