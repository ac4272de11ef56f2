"""Gaussian scene representation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from . import sh as shlib

log = logging.getLogger(__name__)

SCALE_FLOOR = 1e-6
INIT_OPACITY = 0.1
PARAM_NAMES = ("mu", "quat", "log_scale", "raw_opacity", "sh")


class EmptyInput(ValueError):
    pass


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """(w, x, y, z) quaternions, normalised on the fly, to rotation matrices."""
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to a unit (w, x, y, z) quaternion with w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


@dataclass
class CameraPose:
    """World-to-camera rigid transform plus ERP resolution."""

    world_to_cam: np.ndarray
    width: int
    height: int
    image_id: str = ""

    def __post_init__(self):
        self.world_to_cam = np.asarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_cam[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_cam[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def from_center(cls, center, width: int, height: int, rotation=None, image_id: str = "") -> "CameraPose":
        rot = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        m = np.eye(4)
        m[:3, :3] = rot
        m[:3, 3] = -rot @ np.asarray(center, dtype=np.float64)
        return cls(m, width, height, image_id)


@dataclass
class GaussianScene:
    """Per-primitive parameters stored in their unconstrained form.

    ``sh`` has shape ``(N, (max_sh_degree+1)**2, 3)``; ``filter_sigma`` is the
    render-time isotropic dilation from the 3D filter (zero when off).
    """

    mu: torch.Tensor
    quat: torch.Tensor
    log_scale: torch.Tensor
    raw_opacity: torch.Tensor
    sh: torch.Tensor
    max_sh_degree: int = 3
    active_sh_degree: int = 0
    scene_radius: float = 1.0
    filter_sigma: torch.Tensor | None = field(default=None)

    def __post_init__(self):
        if self.filter_sigma is None:
            self.filter_sigma = torch.zeros(self.mu.shape[0], dtype=self.mu.dtype)

    def __len__(self) -> int:
        return self.mu.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.mu.dtype

    def params(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def set_params(self, params: dict[str, torch.Tensor]) -> None:
        for name in PARAM_NAMES:
            setattr(self, name, params[name])

    def requires_grad_(self, flag: bool = True) -> "GaussianScene":
        for name in PARAM_NAMES:
            setattr(self, name, getattr(self, name).detach().requires_grad_(flag))
        return self

    def detached(self) -> "GaussianScene":
        return self.map(lambda t: t.detach().clone())

    def map(self, fn) -> "GaussianScene":
        return GaussianScene(
            **{n: fn(getattr(self, n)) for n in PARAM_NAMES},
            max_sh_degree=self.max_sh_degree,
            active_sh_degree=self.active_sh_degree,
            scene_radius=self.scene_radius,
            filter_sigma=fn(self.filter_sigma),
        )

    def to(self, dtype: torch.dtype) -> "GaussianScene":
        return self.map(lambda t: t.to(dtype))

    def index(self, idx) -> "GaussianScene":
        return self.map(lambda t: t[idx])

    # activated quantities
    @property
    def opacity(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_opacity)

    @property
    def scale(self) -> torch.Tensor:
        return torch.clamp_min(torch.exp(self.log_scale), SCALE_FLOOR)

    @property
    def rotation(self) -> torch.Tensor:
        return quat_to_rotmat(self.quat)

    def filtered_scale_opacity(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Scales and opacities after the isotropic 3D filter dilation."""
        s = self.scale
        o = self.opacity
        sig2 = (self.filter_sigma**2)[:, None]
        if not torch.any(sig2 > 0):
            return s, o
        s2 = s * s
        s_eff2 = s2 + sig2
        return torch.sqrt(s_eff2), o * torch.sqrt(torch.prod(s2 / s_eff2, dim=-1))

    def normalize_quats_(self) -> None:
        with torch.no_grad():
            self.quat /= self.quat.norm(dim=-1, keepdim=True)


def covariance(quat: torch.Tensor, log_scale: torch.Tensor) -> torch.Tensor:
    rs = quat_to_rotmat(quat) * torch.clamp_min(torch.exp(log_scale), SCALE_FLOOR)[..., None, :]
    return rs @ rs.transpose(-1, -2)


def local_to_world(mu: torch.Tensor, quat: torch.Tensor, log_scale: torch.Tensor) -> torch.Tensor:
    """Homogeneous ``[[R S, mu], [0, 1]]`` per Gaussian."""
    rs = quat_to_rotmat(quat) * torch.clamp_min(torch.exp(log_scale), SCALE_FLOOR)[..., None, :]
    top = torch.cat([rs, mu[..., :, None]], dim=-1)
    bottom = torch.zeros(top.shape[:-2] + (1, 4), dtype=mu.dtype)
    bottom[..., 0, 3] = 1.0
    return torch.cat([top, bottom], dim=-2)


@dataclass
class InitConfig:
    sh_degree: int = 3
    knn: int = 3
    opacity: float = INIT_OPACITY
    fallback_points: int = 0
    fallback_radius: float = 1.0
    seed: int = 0


def init_scene(points: np.ndarray | None, colors: np.ndarray | None, cfg: InitConfig,
               dtype: torch.dtype = torch.float64, scene_radius: float | None = None) -> GaussianScene:
    """One isotropic Gaussian per point, sized by the mean distance to its nearest neighbours."""
    if points is None or len(points) == 0:
        if cfg.fallback_points <= 0:
            raise EmptyInput("no initial points and no random fallback configured")
        rng = np.random.default_rng(cfg.seed)
        n = cfg.fallback_points
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        points = v * cfg.fallback_radius * rng.uniform(size=(n, 1)) ** (1 / 3)
        colors = rng.uniform(size=(n, 3))
        log.info("random fallback initialisation with %d points", n)
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    n = len(points)

    if n == 1:
        nn_dist = np.full(1, 0.01 * (scene_radius or 1.0))
    else:
        k = min(cfg.knn, n - 1)
        dist, _ = cKDTree(points).query(points, k=k + 1)
        nn_dist = dist[:, 1:].mean(axis=1)
    nn_dist = np.maximum(nn_dist, 1e-7)

    sh = np.zeros((n, shlib.num_coeffs(cfg.sh_degree), 3))
    sh[:, 0] = shlib.rgb_to_dc(colors)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    if scene_radius is None:
        scene_radius = float(np.linalg.norm(points - points.mean(0), axis=1).max()) or 1.0

    def t(a):
        return torch.as_tensor(a, dtype=dtype)

    return GaussianScene(
        mu=t(points),
        quat=t(quat),
        log_scale=t(np.repeat(np.log(nn_dist)[:, None], 3, axis=1)),
        raw_opacity=t(np.full(n, logit(cfg.opacity))),
        sh=t(sh),
        max_sh_degree=cfg.sh_degree,
        active_sh_degree=0,
        scene_radius=float(scene_radius),
    )
