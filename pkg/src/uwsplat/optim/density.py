"""Adaptive density control and the isotropic 3D smoothing filter."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .. import erp
from ..scene import GaussianScene, quat_to_rotmat

log = logging.getLogger(__name__)


@dataclass
class DensifyConfig:
    grad_threshold: float = 2e-5
    interval: int = 100
    start_iter: int = 500
    stop_fraction: float = 0.5
    prune_opacity: float = 0.005
    split_scale_threshold: float = 0.01
    prune_scale: float = 0.5
    split_factor: float = 1.6
    opacity_reset_interval: int = 3000
    reset_opacity: float = 0.01
    max_gaussians: int = 50_000

    def __post_init__(self):
        if self.grad_threshold <= 0:
            raise ValueError("grad_threshold must be positive")


@dataclass
class DensifyEvent:
    iteration: int
    before: int
    clones: int
    splits: int
    pruned: int
    after: int

    def consistent(self) -> bool:
        return self.after == self.before + self.clones + self.splits - self.pruned


class GradStats:
    """Running mean of the screen-space positional gradient norm per Gaussian."""

    def __init__(self, n: int):
        self.accum = torch.zeros(n, dtype=torch.float64)
        self.count = torch.zeros(n, dtype=torch.float64)

    def __len__(self) -> int:
        return self.accum.shape[0]

    def add(self, norms: torch.Tensor, visible: torch.Tensor) -> None:
        self.accum[visible] += norms[visible].to(torch.float64)
        self.count[visible] += 1

    def mean(self) -> torch.Tensor:
        return self.accum / torch.clamp_min(self.count, 1)

    def remap(self, keep: torch.Tensor, n_new: int) -> None:
        self.accum = torch.cat([self.accum[keep], torch.zeros(n_new, dtype=torch.float64)])
        self.count = torch.cat([self.count[keep], torch.zeros(n_new, dtype=torch.float64)])

    def reset(self) -> None:
        self.accum.zero_()
        self.count.zero_()


def pixel_space_grad_norm(grad_cam: torch.Tensor, mean_cam: torch.Tensor, width: int, height: int) -> torch.Tensor:
    """Norm of dL/d(px, py) for a centre moving tangentially on the view sphere.

    One pixel of longitude is ``r cos(theta) 2 pi / W`` of arc, one pixel of
    latitude ``r pi / H``.
    """
    m = mean_cam.detach().to(torch.float64)
    g = grad_cam.detach().to(torch.float64)
    r = m.norm(dim=-1).clamp_min(1e-12)
    phi, theta = erp.dir_to_angles((m / r[:, None]).numpy())
    phi = torch.as_tensor(phi)
    theta = torch.as_tensor(theta)
    e_phi = torch.stack([torch.cos(phi), torch.zeros_like(phi), torch.sin(phi)], dim=-1)
    e_theta = torch.stack([-torch.sin(phi) * torch.sin(theta), torch.cos(theta),
                           torch.cos(phi) * torch.sin(theta)], dim=-1)
    gx = (g * e_phi).sum(-1) * r * torch.cos(theta) * (2 * math.pi / width)
    gy = (g * e_theta).sum(-1) * r * (math.pi / height)
    return torch.sqrt(gx * gx + gy * gy)


def densify_and_prune(scene: GaussianScene, stats: GradStats, cfg: DensifyConfig, adam=None,
                      iteration: int = 0, generator: torch.Generator | None = None) -> DensifyEvent:
    """Clone small / split large high-gradient Gaussians, then prune.

    Mutates ``scene``, ``stats`` and the Adam moments in place. New Gaussians
    start with zero moments.
    """
    extent = scene.scene_radius
    n0 = len(scene)
    grads = stats.mean()
    scales = scene.scale.detach()
    max_scale = scales.max(dim=-1).values
    hot = grads > cfg.grad_threshold
    room = max(cfg.max_gaussians - n0, 0)
    small = max_scale <= cfg.split_scale_threshold * extent
    clone = hot & small
    split = hot & ~small
    # keep within the Gaussian budget: favour the strongest gradients
    if int(clone.sum() + split.sum()) > room:
        cand = torch.nonzero(hot).squeeze(1)
        order = cand[torch.argsort(grads[cand], descending=True, stable=True)]
        allowed = torch.zeros_like(hot)
        allowed[order[:room]] = True
        clone &= allowed
        split &= allowed
    n_clone = int(clone.sum())
    n_split = int(split.sum())

    params = scene.params()
    new_rows: dict[str, list[torch.Tensor]] = {k: [] for k in params}
    new_sigma = []
    if n_clone:
        for k, v in params.items():
            new_rows[k].append(v.detach()[clone])
        new_sigma.append(scene.filter_sigma[clone])
    if n_split:
        sel = split
        s = scales[sel]
        rot = quat_to_rotmat(scene.quat.detach()[sel])
        for _ in range(2):
            eps = torch.randn(s.shape, generator=generator, dtype=torch.float64).to(s.dtype)
            offs = (rot @ (eps * s)[..., None])[..., 0]
            new_rows["mu"].append(scene.mu.detach()[sel] + offs)
            new_rows["log_scale"].append(torch.log(s / cfg.split_factor))
            for k in ("quat", "raw_opacity", "sh"):
                new_rows[k].append(params[k].detach()[sel])
            new_sigma.append(scene.filter_sigma[sel])
    keep = ~split
    n_new = n_clone + 2 * n_split
    merged = {}
    for k, v in params.items():
        merged[k] = torch.cat([v.detach()[keep]] + new_rows[k]) if n_new else v.detach()[keep]
    sigma = torch.cat([scene.filter_sigma[keep]] + new_sigma) if n_new else scene.filter_sigma[keep]
    scene.set_params(merged)
    scene.filter_sigma = sigma
    if adam is not None:
        for k in params:
            adam.remap_rows(f"gaussian.{k}", keep, n_new)
    stats.remap(keep, n_new)

    opacity = scene.opacity.detach()
    big = scene.scale.detach().max(dim=-1).values > cfg.prune_scale * extent
    prune = (opacity < cfg.prune_opacity) | big | ~torch.isfinite(scene.mu.detach()).all(dim=-1)
    n_prune = int(prune.sum())
    if n_prune:
        keep2 = ~prune
        scene.set_params({k: v[keep2] for k, v in scene.params().items()})
        scene.filter_sigma = scene.filter_sigma[keep2]
        if adam is not None:
            for k in params:
                adam.remap_rows(f"gaussian.{k}", keep2, 0)
        stats.remap(keep2, 0)
    stats.reset()
    ev = DensifyEvent(iteration, n0, n_clone, n_split, n_prune, len(scene))
    log.debug("densify %s", ev)
    return ev


def reset_opacity(scene: GaussianScene, cap: float, adam=None) -> None:
    raw_cap = math.log(cap / (1 - cap))
    scene.raw_opacity = torch.clamp_max(scene.raw_opacity.detach(), raw_cap)
    if adam is not None:
        adam.reset("gaussian.raw_opacity")


def gaussian_3d_filter(scene: GaussianScene, train_centers: np.ndarray, width: int, kappa: float) -> torch.Tensor:
    """Per-Gaussian dilation ``kappa * (2 pi / W) * min_camera_distance``.

    The renderer adds ``sigma^2 I`` to the covariance and rescales opacity by
    ``sqrt(det S / det(S + sigma^2 I))``; stored in ``scene.filter_sigma``.
    """
    if len(train_centers) == 0:
        raise ValueError("the 3D filter needs at least one training pose")
    mu = scene.mu.detach().to(torch.float64)
    centers = torch.as_tensor(np.asarray(train_centers, dtype=np.float64))
    dist = torch.cdist(mu, centers).min(dim=1).values
    sigma = kappa * (2 * math.pi / width) * dist
    scene.filter_sigma = sigma.to(scene.dtype)
    return scene.filter_sigma
