"""Pose-conditioned affine correction of the diffuse Gaussian colour."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .scene import CameraPose, rotmat_to_quat


@dataclass
class AppearanceConfig:
    embed_dim: int = 32
    hidden: int = 128
    fourier_bands: int = 4
    seed: int = 0


class AppearanceNet(nn.Module):
    """``pose_mlp`` maps (centre, quaternion) to a view embedding; ``correct_mlp``
    maps (c0, e_view, gamma(mu)) to raw (eta, beta) offsets.

    The last layer of ``correct_mlp`` starts at zero so the correction is the
    identity until it is trained.
    """

    def __init__(self, cfg: AppearanceConfig | None = None, dtype: torch.dtype = torch.float64):
        super().__init__()
        cfg = cfg or AppearanceConfig()
        self.cfg = cfg
        e, h, n_fourier = cfg.embed_dim, cfg.hidden, 6 * cfg.fourier_bands
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.pose_mlp = nn.Sequential(nn.Linear(7, h), nn.ReLU(), nn.Linear(h, e))
            self.correct_mlp = nn.Sequential(nn.Linear(3 + e + n_fourier, h), nn.ReLU(), nn.Linear(h, 6))
        nn.init.zeros_(self.correct_mlp[2].weight)
        nn.init.zeros_(self.correct_mlp[2].bias)
        self.to(dtype)

    @property
    def embed_dim(self) -> int:
        return self.cfg.embed_dim

    @property
    def fourier_bands(self) -> int:
        return self.cfg.fourier_bands

    @property
    def dtype(self) -> torch.dtype:
        return self.pose_mlp[0].weight.dtype


def pose_encoding(pose: CameraPose) -> np.ndarray:
    """Camera centre followed by the rotation quaternion with non-negative w."""
    return np.concatenate([pose.center, rotmat_to_quat(pose.rotation)])


def encode_pose(pose: CameraPose, net: AppearanceNet) -> torch.Tensor:
    x = torch.as_tensor(pose_encoding(pose), dtype=net.dtype)
    return net.pose_mlp(x)


def fourier_features(mu: torch.Tensor, bands: int) -> torch.Tensor:
    """``[sin(2^k pi mu), cos(2^k pi mu)]`` for k < bands, shape ``(..., 6 * bands)``."""
    feats = []
    for k in range(bands):
        arg = (2.0**k * math.pi) * mu
        feats += [torch.sin(arg), torch.cos(arg)]
    return torch.cat(feats, dim=-1)


def correct_color(c0: torch.Tensor, e_view: torch.Tensor, gamma_mu: torch.Tensor, net: AppearanceNet) -> torch.Tensor:
    """``(1 + raw_eta) * c0 + raw_beta`` with the raw offsets predicted per Gaussian."""
    n = c0.shape[0]
    x = torch.cat([c0, e_view.expand(n, -1), gamma_mu], dim=-1)
    raw = net.correct_mlp(x)
    eta = 1.0 + raw[:, :3]
    beta = raw[:, 3:]
    return eta * c0 + beta


@dataclass
class AppearanceContext:
    """A network plus the embedding of the view being rendered."""

    net: AppearanceNet
    e_view: torch.Tensor
    scene_radius: float = 1.0

    @classmethod
    def for_pose(cls, net: AppearanceNet, pose: CameraPose, scene_radius: float) -> "AppearanceContext":
        return cls(net, encode_pose(pose, net), scene_radius)

    def corrected_dc(self, c0: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
        gamma = fourier_features(mu / self.scene_radius, self.net.fourier_bands)
        return correct_color(c0, self.e_view, gamma, self.net)
