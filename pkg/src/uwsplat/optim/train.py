"""Joint optimisation of Gaussians, appearance correction and medium heads."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..appearance import AppearanceConfig, AppearanceNet
from ..medium import MediumConfig, MediumNet
from ..renderer import RenderConfig
from ..scene import InitConfig, init_scene
from .adam import AdamState, adam_step
from .density import (DensifyConfig, DensifyEvent, GradStats, densify_and_prune, gaussian_3d_filter,
                      pixel_space_grad_norm, reset_opacity)
from .loss import LossConfig, loss as photometric_loss, psnr_torch, ssim

log = logging.getLogger(__name__)

METRICS_HEADER = ("iter", "loss", "psnr_train", "psnr_test", "ssim_test", "n_gaussians")
DENSIFY_HEADER = ("iter", "before", "clones", "splits", "pruned", "after")


class EmptyDataset(ValueError):
    pass


@dataclass
class LearningRates:
    position_init: float = 1.6e-4
    position_final: float = 1.6e-6
    sh_dc: float = 0.0025
    sh_rest: float = 0.0025 / 20
    opacity: float = 0.05
    scaling: float = 0.005
    rotation: float = 0.001
    appearance: float = 1e-4
    medium: float = 1e-3


@dataclass
class TrainConfig:
    iterations: int = 4000
    seed: int = 0
    dtype: str = "float32"
    eval_interval: int = 500
    sh_unlock_interval: int = 1000
    filter_kappa: float = 0.3
    use_medium: bool = True
    densify_enabled: bool = True
    lr: LearningRates = field(default_factory=LearningRates)
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig)
    medium: MediumConfig = field(default_factory=MediumConfig)
    init: InitConfig = field(default_factory=InitConfig)

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


@dataclass
class MetricsRow:
    iter: int
    loss: float
    psnr_train: float
    psnr_test: float
    ssim_test: float
    n_gaussians: int

    def as_tuple(self):
        return (self.iter, f"{self.loss:.8f}", f"{self.psnr_train:.6f}", f"{self.psnr_test:.6f}",
                f"{self.ssim_test:.8f}", self.n_gaussians)


@dataclass
class TrainResult:
    state: "TrainState"  # noqa: F821
    metrics: list[MetricsRow]
    densify_events: list[DensifyEvent]
    seconds: float


def position_lr(cfg: LearningRates, step: int, total: int, extent: float) -> float:
    """Log-linear decay from ``position_init`` to ``position_final`` (scaled by extent)."""
    frac = min(max(step / max(total, 1), 0.0), 1.0)
    lr = math.exp((1 - frac) * math.log(cfg.position_init) + frac * math.log(cfg.position_final))
    return lr * extent


def group_lrs(cfg: TrainConfig, step: int, extent: float, state) -> dict[str, float]:
    lr = cfg.lr
    out = {
        "gaussian.mu": position_lr(lr, step, cfg.iterations, extent),
        "gaussian.quat": lr.rotation,
        "gaussian.log_scale": lr.scaling,
        "gaussian.raw_opacity": lr.opacity,
        "gaussian.sh": sh_lrs(lr, state.scene.sh.shape[1], state.dtype),
    }
    for n, _ in state.appearance.named_parameters():
        out[f"appearance.{n}"] = lr.appearance
    med = state.medium
    for n in med.BACKSCATTER + med.ATTENUATION:
        out[f"medium.{n}"] = lr.medium if state.use_medium else 0.0
    return out


def sh_lrs(cfg: LearningRates, n_coeffs: int, dtype) -> torch.Tensor:
    """Per-coefficient rate: the DC term learns faster than the view-dependent bands."""
    out = torch.full((n_coeffs, 1), cfg.sh_rest, dtype=dtype)
    out[0] = cfg.sh_dc
    return out


def scene_radius_for(points: np.ndarray | None, centers: np.ndarray) -> float:
    pts = centers if points is None or len(points) == 0 else np.concatenate([points, centers])
    c = pts.mean(axis=0)
    return float(np.linalg.norm(pts - c, axis=1).max()) or 1.0


def initial_state(dataset, cfg: TrainConfig):
    from ..state import TrainState

    dtype = cfg.torch_dtype
    centers = np.array([v.pose.center for v in dataset.train])
    pts = dataset.points
    points = None if pts is None else pts[:, :3]
    colors = None if pts is None else pts[:, 3:6]
    init_cfg = cfg.init
    if points is None and init_cfg.fallback_points <= 0:
        init_cfg = InitConfig(**{**init_cfg.__dict__, "fallback_points": 5000,
                                 "fallback_radius": 2.0 * scene_radius_for(None, centers)})
    radius = scene_radius_for(points, centers)
    scene = init_scene(points, colors, init_cfg, dtype=dtype, scene_radius=radius)
    app = AppearanceNet(AppearanceConfig(**{**cfg.appearance.__dict__, "seed": cfg.seed}), dtype=dtype)
    med = MediumNet(MediumConfig(**{**cfg.medium.__dict__, "embed_dim": cfg.appearance.embed_dim,
                                    "seed": cfg.seed}), dtype=dtype)
    return TrainState(scene=scene, appearance=app, medium=med, adam=AdamState(), use_medium=cfg.use_medium)


def evaluate_views(state, views, cfg: TrainConfig) -> tuple[float, float]:
    """Mean raw-render PSNR and SSIM over ``views``."""
    from ..diff import forward_view

    if not views:
        return float("nan"), float("nan")
    ps, ss = [], []
    with torch.no_grad():
        for v in views:
            res = forward_view(state, v.pose, cfg.render)
            target = torch.as_tensor(v.image, dtype=state.dtype)
            pred = res.image.clamp(0.0, 1.0)
            ps.append(psnr_torch(pred, target))
            ss.append(float(ssim(pred.double(), target.double(), cfg.loss)))
    return float(np.mean(ps)), float(np.mean(ss))


def train(dataset, cfg: TrainConfig, state=None, out_dir: Path | None = None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Optimise against the training views of ``dataset``.

    Writes ``metrics.csv`` and ``densify.csv`` into ``out_dir`` when given. A
    ``state`` from a checkpoint resumes at its iteration counter.
    """
    from ..diff import forward_view

    if len(dataset.train_ids) < 1 or len(dataset.views) == 0:
        raise EmptyDataset("dataset has no training views")
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    if state is None:
        state = initial_state(dataset, cfg)
    state.use_medium = cfg.use_medium
    scene = state.scene
    extent = scene.scene_radius
    train_views = dataset.train
    test_views = dataset.test
    centers = np.array([v.pose.center for v in train_views])
    targets = [torch.as_tensor(v.image, dtype=state.dtype) for v in train_views]
    width = train_views[0].pose.width

    if cfg.filter_kappa > 0:
        gaussian_3d_filter(scene, centers, width, cfg.filter_kappa)
    stats = GradStats(len(scene))
    dcfg = cfg.densify
    stop_iter = int(dcfg.stop_fraction * cfg.iterations)
    row_sparse = tuple(f"gaussian.{n}" for n in ("mu", "quat", "log_scale", "raw_opacity", "sh"))

    metrics: list[MetricsRow] = []
    events: list[DensifyEvent] = []
    mwriter = dwriter = None
    files = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if state.iteration > 0 and (out_dir / "metrics.csv").exists() else "w"
        fm = open(out_dir / "metrics.csv", mode, newline="")
        fd = open(out_dir / "densify.csv", mode, newline="")
        files = [fm, fd]
        mwriter, dwriter = csv.writer(fm), csv.writer(fd)
        if mode == "w":
            mwriter.writerow(METRICS_HEADER)
            dwriter.writerow(DENSIFY_HEADER)

    t0 = time.perf_counter()
    order: list[int] = []
    loss_sum, loss_n = 0.0, 0
    try:
        while state.iteration < cfg.iterations:
            it = state.iteration + 1
            if not order:
                order = list(rng.permutation(len(train_views)))
            vi = order.pop(0)
            pose = train_views[vi].pose
            densifying = cfg.densify_enabled and it <= stop_iter

            scene.requires_grad_(True)
            res = forward_view(state, pose, cfg.render, track_center_grad=densifying)
            lval = photometric_loss(res.image, targets[vi], cfg.loss)
            params = state.named_params()
            inputs = list(params.values())
            offset = res.render.center_offset
            if densifying and offset is not None:
                inputs.append(offset)
            if lval.requires_grad:
                grads = torch.autograd.grad(lval, inputs, allow_unused=True)
            else:
                grads = (None,) * len(inputs)
            scene.requires_grad_(False)
            gdict = dict(zip(params.keys(), grads[: len(params)]))
            for name, g in gdict.items():
                if g is not None and not torch.isfinite(g).all():
                    from ..diff import NonFiniteGradient
                    raise NonFiniteGradient(f"iteration {it}: non-finite gradient for {name}")

            mean_cam = _camera_means(scene, pose) if densifying else None
            params = state.named_params()
            adam_step(state.adam, params, gdict, group_lrs(cfg, it, extent, state), row_sparse=row_sparse)
            scene.normalize_quats_()
            state.iteration = it
            loss_sum += float(lval.detach())
            loss_n += 1

            if densifying and offset is not None and grads[-1] is not None:
                norms = pixel_space_grad_norm(grads[-1], mean_cam, pose.width, pose.height)
                stats.add(norms, res.render.visible)
                if it >= dcfg.start_iter and it % dcfg.interval == 0:
                    ev = densify_and_prune(scene, stats, dcfg, state.adam, it, gen)
                    events.append(ev)
                    if dwriter is not None:
                        dwriter.writerow((ev.iteration, ev.before, ev.clones, ev.splits, ev.pruned, ev.after))
                    if cfg.filter_kappa > 0:
                        gaussian_3d_filter(scene, centers, width, cfg.filter_kappa)
                if it % dcfg.opacity_reset_interval == 0:
                    reset_opacity(scene, dcfg.reset_opacity, state.adam)
            elif cfg.densify_enabled and it > stop_iter and it % dcfg.interval == 0 and cfg.filter_kappa > 0:
                gaussian_3d_filter(scene, centers, width, cfg.filter_kappa)

            if cfg.sh_unlock_interval > 0 and it % cfg.sh_unlock_interval == 0:
                scene.active_sh_degree = min(scene.active_sh_degree + 1, scene.max_sh_degree)

            if progress is not None:
                progress(it, float(lval.detach()))
            if it % cfg.eval_interval == 0 or it == cfg.iterations:
                p_train, _ = evaluate_views(state, train_views, cfg)
                p_test, s_test = evaluate_views(state, test_views, cfg)
                row = MetricsRow(it, loss_sum / max(loss_n, 1), p_train, p_test, s_test, len(scene))
                loss_sum, loss_n = 0.0, 0
                metrics.append(row)
                log.info("iter %d loss %.5f psnr train %.2f test %.2f n=%d", it, row.loss, p_train, p_test,
                         len(scene))
                if mwriter is not None:
                    mwriter.writerow(row.as_tuple())
                    for f in files:
                        f.flush()
    finally:
        for f in files:
            f.close()
    return TrainResult(state, metrics, events, time.perf_counter() - t0)


def _camera_means(scene, pose) -> torch.Tensor:
    rot = torch.as_tensor(pose.rotation, dtype=scene.dtype)
    return scene.mu.detach() @ rot.T + torch.as_tensor(pose.translation, dtype=scene.dtype)
