"""Analytic "sphere-room" benchmark: a textured sphere seen from inside, with
closed-form radiance and ray depth, degraded by the textbook water model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import sph_harm_y

from . import erp
from .medium import simulate_uifm_gt
from .scene import CameraPose

log = logging.getLogger(__name__)

PSNR_CAP = 100.0


class ShapeMismatch(ValueError):
    pass


class MissingGroundTruth(ValueError):
    pass


def real_sh_table(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Orthonormal real SH ``(..., (degree+1)**2)`` built from scipy's complex harmonics."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    polar = np.arccos(np.clip(z, -1.0, 1.0))
    azim = np.arctan2(y, x)
    cols = []
    for l in range(degree + 1):
        for m in range(-l, l + 1):
            ylm = sph_harm_y(l, abs(m), polar, azim)
            if m < 0:
                cols.append(np.sqrt(2) * (-1) ** m * ylm.imag)
            elif m == 0:
                cols.append(ylm.real)
            else:
                cols.append(np.sqrt(2) * (-1) ** m * ylm.real)
    return np.stack(cols, axis=-1)


@dataclass
class SphereRoom:
    radius: float = 5.0
    texture_degree: int = 4
    texture_seed: int = 0
    camera_centers: list = field(default_factory=list)
    beta_d: tuple = (0.08, 0.05, 0.03)
    beta_b: tuple = (0.05, 0.07, 0.10)
    b_inf: tuple = (0.08, 0.18, 0.25)

    def __post_init__(self):
        rng = np.random.default_rng(self.texture_seed)
        n = (self.texture_degree + 1) ** 2
        decay = np.array([1.0 / (1 + l) for l in range(self.texture_degree + 1) for _ in range(2 * l + 1)])
        coeffs = rng.normal(size=(n, 3)) * decay[:, None]
        coeffs[0] = 0.0
        # rescale so the pattern stays within [0.1, 0.9]
        probe = _fibonacci_sphere(4096)
        vals = real_sh_table(self.texture_degree, probe) @ coeffs
        self._coeffs = coeffs * (0.38 / np.abs(vals).max())
        for c in self.camera_centers:
            if np.linalg.norm(c) >= 0.8 * self.radius:
                raise ValueError(f"camera centre {c} is not inside 0.8 R")

    def texture(self, normals: np.ndarray) -> np.ndarray:
        return 0.5 + real_sh_table(self.texture_degree, normals) @ self._coeffs


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    ang = np.pi * (1 + 5**0.5) * i
    return np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)


def default_room(n_cameras: int = 12, seed: int = 0, radius: float = 5.0, **medium) -> SphereRoom:
    rng = np.random.default_rng(seed + 1)
    centers = []
    while len(centers) < n_cameras:
        c = rng.uniform(-0.5, 0.5, size=3) * radius
        if np.linalg.norm(c) < 0.5 * radius:
            centers.append(c)
    return SphereRoom(radius=radius, texture_seed=seed, camera_centers=centers, **medium)


def analytic_depth(radius: float, origin, dirs) -> np.ndarray:
    """Positive root of ``|o + t d| = R`` for cameras inside the sphere."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    od = d @ o
    return -od + np.sqrt(od * od + radius * radius - o @ o)


def yaw_rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass
class SynthView:
    pose: CameraPose
    raw: np.ndarray
    J: np.ndarray
    D: np.ndarray


def camera_poses(room: SphereRoom, width: int, height: int, seed: int = 0) -> list[CameraPose]:
    rng = np.random.default_rng(seed + 2)
    poses = []
    for i, c in enumerate(room.camera_centers):
        rot = yaw_rotation(rng.uniform(-np.pi, np.pi))
        poses.append(CameraPose.from_center(c, width, height, rotation=rot, image_id=f"frame_{i:03d}"))
    return poses


def render_view(room: SphereRoom, pose: CameraPose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(I_raw, J_gt, D_gt)`` for one pose, float64."""
    w, h = pose.width, pose.height
    frames = erp.pixel_frames(w, h)
    world_dirs = frames.dirs @ pose.rotation  # R^T d for row vectors
    o = pose.center
    depth = analytic_depth(room.radius, o, world_dirs)
    normals = (o + depth[:, None] * world_dirs) / room.radius
    J = room.texture(normals).reshape(h, w, 3)
    D = depth.reshape(h, w)
    raw = simulate_uifm_gt(J, D, room.beta_d, room.beta_b, room.b_inf)
    return raw, J, D


def generate_views(room: SphereRoom, width: int, height: int, seed: int = 0) -> list[SynthView]:
    if width != 2 * height:
        log.warning("ERP image is %dx%d, expected W = 2H", width, height)
    return [SynthView(p, *render_view(room, p)) for p in camera_poses(room, width, height, seed)]


def alternating_split(n: int) -> tuple[list[int], list[int]]:
    return list(range(0, n, 2)), list(range(1, n, 2))


def sample_points(views: list[SynthView], ids: list[int], per_view: int, seed: int = 0) -> np.ndarray:
    """Sparse coloured points on the observed surface, standing in for an SfM cloud."""
    rng = np.random.default_rng(seed + 3)
    rows = []
    for i in ids:
        v = views[i]
        h, w = v.D.shape
        frames = erp.pixel_frames(w, h)
        # area-uniform sampling over the sphere of directions
        pix = rng.choice(h * w, size=min(per_view, h * w), replace=False, p=_pixel_area(w, h))
        dirs = frames.dirs[pix] @ v.pose.rotation
        pts = v.pose.center + v.D.ravel()[pix, None] * dirs
        cols = np.clip(v.raw.reshape(-1, 3)[pix], 0.0, 1.0)
        rows.append(np.concatenate([pts, cols], axis=1))
    return np.concatenate(rows)


def _pixel_area(w: int, h: int) -> np.ndarray:
    theta = erp.pixel_to_angles(0.0, np.arange(h), w, h)[1]
    a = np.repeat(np.cos(theta), w)
    return a / a.sum()


def generate_dataset(out_dir, room: SphereRoom | None = None, width: int = 128, height: int = 64,
                     seed: int = 0, points_per_view: int = 400) -> Path:
    """Write a sphere-room dataset in the on-disk dataset layout."""
    from . import io

    room = room or default_room(seed=seed)
    views = generate_views(room, width, height, seed)
    train, test = alternating_split(len(views))
    points = sample_points(views, train, points_per_view, seed)
    return io.write_dataset(out_dir, views, points=points, split=None)


# ---------------------------------------------------------------------------
# metrics


def psnr(a, b) -> float:
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0)
    b = np.clip(np.asarray(b, dtype=np.float64), 0.0, 1.0)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(-10.0 * np.log10(mse))


@dataclass
class Metrics:
    psnr: float
    ssim: float
    per_view: list[tuple[str, float, float]] = field(default_factory=list)

    def summary(self) -> str:
        return f"PSNR={self.psnr:.4f} SSIM={self.ssim:.6f}"


EVAL_MODES = ("raw-render", "restored-J", "decomposition")


def _ssim_np(a: np.ndarray, b: np.ndarray) -> float:
    import torch

    from .optim.loss import ssim

    ta = torch.as_tensor(np.clip(a, 0.0, 1.0), dtype=torch.float64)
    tb = torch.as_tensor(np.clip(b, 0.0, 1.0), dtype=torch.float64)
    return float(ssim(ta, tb))


def dump_decomposition(res, out_dir, name: str) -> list[Path]:
    """Write ``J_``, ``A_``, ``B_`` panoramas and the ``D_`` depth map (+ sidecar) for one view.

    B is stored as the residual of the quantised render against the quantised
    J * A, so the 8-bit files recompose to the 8-bit render within half a code
    value instead of accumulating four independent rounding errors.
    """
    from . import io

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    q = lambda x: io.quantize(x.detach().numpy()).astype(np.float64) / 255.0  # noqa: E731
    b = q(res.image) - q(res.J) * q(res.A)
    paths = []
    for key, img in (("J", res.J.detach().numpy()), ("A", res.A.detach().numpy()), ("B", b)):
        p = out_dir / f"{key}_{name}.png"
        io.write_image(p, img)
        paths.append(p)
    p = out_dir / f"D_{name}.png"
    io.write_depth(p, res.depth.detach().numpy())
    paths.append(p)
    return paths


def evaluate(state, dataset, which: str = "raw-render", views=None, dump_dir=None, render_cfg=None) -> Metrics:
    """PSNR/SSIM over held-out views.

    ``raw-render`` compares the composed estimate to the observation,
    ``restored-J`` the clean radiance to ``gt_J`` and ``decomposition`` does
    the raw-render comparison while dumping J, A, B and D for every view into
    ``dump_dir``.
    """
    import torch

    from .diff import forward_view

    if which not in EVAL_MODES:
        raise ValueError(f"unknown evaluation mode {which!r}; expected one of {EVAL_MODES}")
    views = dataset.test if views is None else views
    if not views:
        raise ValueError("no views to evaluate")
    if which == "restored-J" and any(v.gt_J is None for v in views):
        raise MissingGroundTruth("restored-J needs gt_J images for every evaluated view")
    if which == "decomposition" and dump_dir is None:
        raise ValueError("decomposition needs an output directory")
    rows = []
    with torch.no_grad():
        for v in views:
            res = forward_view(state, v.pose, render_cfg)
            if which == "restored-J":
                pred, target = res.J.numpy(), v.gt_J
            else:
                pred, target = res.image.numpy(), v.image
            if which == "decomposition":
                dump_decomposition(res, dump_dir, v.pose.image_id)
            rows.append((v.pose.image_id, psnr(pred, target), _ssim_np(np.asarray(pred, np.float64), target)))
    return Metrics(float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])), rows)
