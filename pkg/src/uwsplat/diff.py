"""Differentiable forward model and its gradient checks.

Gradients come from torch autograd through the whole chain: SH colour,
appearance MLPs, ray-splat evaluation, compositing, medium heads and the
L1/D-SSIM loss. The alpha discard and the far-depth fill act as constant
gates. ``grad_check`` compares against central differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .appearance import AppearanceContext, encode_pose
from .medium import compose_uifm
from .optim.loss import LossConfig, loss as photometric_loss
from .renderer import RenderConfig, RenderOutput, render
from .scene import CameraPose
from .state import GAUSSIAN_GROUPS, TrainState

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class PipelineConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class ViewResult:
    image: torch.Tensor        # composed observation estimate I_hat
    J: torch.Tensor
    A: torch.Tensor
    B: torch.Tensor
    depth: torch.Tensor
    e_view: torch.Tensor
    render: RenderOutput


def forward_view(state: TrainState, pose: CameraPose, cfg: RenderConfig | None = None,
                 track_center_grad: bool = False, renderer: Callable = render) -> ViewResult:
    cfg = cfg or RenderConfig()
    e_view = encode_pose(pose, state.appearance)
    ctx = AppearanceContext(state.appearance, e_view, state.scene.scene_radius)
    out = renderer(state.scene, pose, ctx, cfg, track_center_grad)
    J, D = out.radiance, out.depth
    if state.use_medium:
        A, B = state.medium.maps(D, e_view)
    else:
        A, B = torch.ones_like(J), torch.zeros_like(J)
    return ViewResult(compose_uifm(J, A, B), J, A, B, D, e_view, out)


def forward_loss(state: TrainState, views: Sequence[tuple[CameraPose, torch.Tensor]],
                 cfg: PipelineConfig | None = None, renderer: Callable = render) -> torch.Tensor:
    """Sum of per-view photometric losses between rendered and raw observations."""
    if len(views) == 0:
        raise ValueError("forward_loss needs at least one view")
    cfg = cfg or PipelineConfig()
    total = None
    for pose, raw in views:
        res = forward_view(state, pose, cfg.render, renderer=renderer)
        raw = torch.as_tensor(raw, dtype=state.dtype)
        term = photometric_loss(res.image, raw, cfg.loss)
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# parameter groups


def param_groups(state: TrainState) -> dict[str, list[tuple[str, torch.Tensor]]]:
    """Named groups of tensors in a stable order."""
    named = state.named_params()
    groups: dict[str, list[tuple[str, torch.Tensor]]] = {f"gaussian.{n}": [] for n in GAUSSIAN_GROUPS}
    groups.update({"appearance.pose_mlp": [], "appearance.correct_mlp": [],
                   "medium.backscatter": [], "medium.attenuation": []})
    back = {f"medium.{n}" for n in state.medium.BACKSCATTER}
    for name, t in named.items():
        if name.startswith("gaussian."):
            groups[name].append((name, t))
        elif name.startswith("appearance.pose_mlp"):
            groups["appearance.pose_mlp"].append((name, t))
        elif name.startswith("appearance.correct_mlp"):
            groups["appearance.correct_mlp"].append((name, t))
        elif name in back:
            groups["medium.backscatter"].append((name, t))
        else:
            groups["medium.attenuation"].append((name, t))
    return groups


def flat_params(state: TrainState) -> dict[str, np.ndarray]:
    """ParamSet view: one flat float64 array per group."""
    return {g: np.concatenate([t.detach().reshape(-1).numpy().astype(np.float64) for _, t in items])
            for g, items in param_groups(state).items()}


def backward(state: TrainState, views: Sequence[tuple[CameraPose, torch.Tensor]],
             cfg: PipelineConfig | None = None, renderer: Callable = render) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its gradient, flattened per group like :func:`flat_params`."""
    state.scene.requires_grad_(True)
    groups = param_groups(state)
    tensors = [t for items in groups.values() for _, t in items]
    total = forward_loss(state, views, cfg, renderer)
    if total.requires_grad:
        grads = torch.autograd.grad(total, tensors, allow_unused=True)
    else:
        # nothing visible and no medium: the loss is a constant
        grads = [None] * len(tensors)
    state.scene.requires_grad_(False)
    out: dict[str, np.ndarray] = {}
    k = 0
    for g, items in groups.items():
        parts = []
        for _, t in items:
            gr = grads[k]
            k += 1
            parts.append(np.zeros(t.numel()) if gr is None else gr.reshape(-1).numpy().astype(np.float64))
        out[g] = np.concatenate(parts)
        if not np.all(np.isfinite(out[g])):
            raise NonFiniteGradient(f"non-finite gradient in group {g}")
    return float(total.detach()), out


def _scalar_slots(state: TrainState, group: str) -> list[tuple[torch.Tensor, int]]:
    items = param_groups(state)[group]
    return [(t, i) for _, t in items for i in range(t.numel())]


@dataclass
class GroupReport:
    count: int
    checked: int
    max_rel_error: float
    failing: list[int]

    @property
    def passed(self) -> bool:
        return not self.failing


@dataclass
class GradCheckReport:
    groups: dict[str, GroupReport]
    eps: float
    rel_tol: float
    abs_tol: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.groups.values())

    def lines(self) -> list[str]:
        out = []
        for g, r in self.groups.items():
            status = "PASS" if r.passed else "FAIL"
            out.append(f"{status} {g}: checked {r.checked}/{r.count}, max rel err {r.max_rel_error:.3e}"
                       + (f", failing {r.failing[:10]}" if r.failing else ""))
        return out


def grad_check(state: TrainState, views, cfg: PipelineConfig | None = None, eps: float = 1e-4,
               rel_tol: float = 1e-3, abs_tol: float = 1e-7, near_zero: float = 1e-5,
               max_per_group: int | None = None, seed: int = 0, renderer: Callable = render) -> GradCheckReport:
    """Central-difference check of :func:`backward`, per parameter group.

    An entry passes if ``|fd - g| <= rel_tol * max(|fd|, |g|)``, or, when both
    are below ``near_zero``, if ``|fd - g| <= abs_tol``. ``max_per_group``
    subsamples scalars (seeded) to bound the cost on large groups.
    """
    cfg = cfg or PipelineConfig()
    _, grads = backward(state, views, cfg, renderer)
    rng = np.random.default_rng(seed)
    report = {}
    with torch.inference_mode():
        for group in param_groups(state):
            slots = _scalar_slots(state, group)
            idx = np.arange(len(slots))
            if max_per_group is not None and len(idx) > max_per_group:
                idx = np.sort(rng.choice(idx, size=max_per_group, replace=False))
            worst = 0.0
            failing = []
            for i in idx:
                t, j = slots[i]
                flat = t.view(-1)
                orig = flat[j].item()
                flat[j] = orig + eps
                up = float(forward_loss(state, views, cfg, renderer))
                flat[j] = orig - eps
                down = float(forward_loss(state, views, cfg, renderer))
                flat[j] = orig
                fd = (up - down) / (2 * eps)
                g = grads[group][i]
                err = abs(fd - g)
                scale = max(abs(fd), abs(g))
                if scale < near_zero:
                    ok = err <= abs_tol
                    rel = 0.0 if ok else err / max(scale, 1e-300)
                else:
                    rel = err / scale
                    ok = rel <= rel_tol
                worst = max(worst, rel)
                if not ok:
                    failing.append(int(i))
            report[group] = GroupReport(len(slots), len(idx), worst, failing)
    return GradCheckReport(report, eps, rel_tol, abs_tol)


def gradcheck_fixture(n_gaussians: int = 10, width: int = 16, height: int = 8, n_views: int = 2,
                      seed: int = 0) -> tuple[TrainState, list[tuple[CameraPose, torch.Tensor]]]:
    """Small float64 problem for :func:`grad_check`.

    Gaussians sit on a shell around the cameras so every view sees them with
    depth variation; the zero-initialised last correction layer is randomised
    so appearance gradients are non-trivial. Targets are random images.
    """
    from .appearance import AppearanceConfig, AppearanceNet
    from .medium import MediumConfig, MediumNet
    from .optim.adam import AdamState
    from .scene import GaussianScene

    dtype = torch.float64
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_gaussians, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mu = dirs * rng.uniform(2.0, 4.0, size=(n_gaussians, 1))
    quat = rng.normal(size=(n_gaussians, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    log_scale = np.log(rng.uniform(0.6, 1.5, size=(n_gaussians, 3)))
    raw_opacity = rng.uniform(-1.0, 1.5, size=n_gaussians)
    sh = rng.normal(size=(n_gaussians, 16, 3)) * 0.3
    t = lambda a: torch.tensor(a, dtype=dtype)  # noqa: E731
    scene = GaussianScene(t(mu), t(quat), t(log_scale), t(raw_opacity), t(sh), max_sh_degree=3,
                          active_sh_degree=3, scene_radius=4.0)
    app = AppearanceNet(AppearanceConfig(seed=seed), dtype=dtype)
    with torch.no_grad():
        last = app.correct_mlp[2]
        gen = torch.Generator().manual_seed(seed)
        last.weight.copy_(torch.randn(last.weight.shape, generator=gen, dtype=dtype) * 0.05)
        last.bias.copy_(torch.randn(last.bias.shape, generator=gen, dtype=dtype) * 0.05)
    med = MediumNet(MediumConfig(seed=seed), dtype=dtype)
    state = TrainState(scene=scene, appearance=app, medium=med, adam=AdamState())
    views = []
    for i in range(n_views):
        pose = CameraPose.from_center(rng.normal(size=3) * 0.2, width, height, image_id=f"v{i}")
        views.append((pose, t(rng.uniform(0.0, 1.0, size=(height, width, 3)))))
    _clear_relu_kinks(state, views)
    return state, views


def _clear_relu_kinks(state: TrainState, views, margin: float = 1e-2) -> None:
    """Shift hidden biases so no ReLU input of the fixture lies within ``margin`` of 0.

    Central differences are meaningless across a kink; a unit sitting within
    eps of one makes the check fail for reasons unrelated to the backward pass.
    The pose network feeds the correction network, so it is fixed first.
    """
    for name in ("pose_mlp", "correct_mlp"):
        lin = getattr(state.appearance, name)[0]
        seen = []
        hook = lin.register_forward_hook(lambda m, i, o: seen.append(o.detach().reshape(-1, o.shape[-1])))
        with torch.no_grad():
            forward_loss(state, views)
        hook.remove()
        z = torch.cat(seen)
        with torch.no_grad():
            for u in range(z.shape[1]):
                for k in range(200):
                    shift = margin * ((k + 1) // 2) * (1 if k % 2 else -1)
                    if bool(torch.all(torch.abs(z[:, u] + shift) >= margin)):
                        break
                lin.bias[u] += shift
