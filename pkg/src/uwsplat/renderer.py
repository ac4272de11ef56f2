"""Omnidirectional ray-splat rasterizer.

Each ERP pixel defines two planes through the camera centre that contain its
ray. Pulled back into a Gaussian's local frame (where the Gaussian is a unit
normal) the planes intersect in the image of the ray, and the Gaussian's
response is evaluated at the point of that line closest to the local origin.

Writing ``S`` for the camera-space covariance, ``m`` for the camera-space
centre and ``n_x, n_y`` for the plane normals, the local plane normals are
``L^T n`` (``L = R_cam R S``) with offsets ``m . n``, so everything reduces to
the 2x2 Gram matrix ``G = [[n_x S n_x, n_x S n_y], [., n_y S n_y]]``::

    rho^2 = o^T G^-1 o,      o = (m . n_x, m . n_y)
    w     = -G^-1 o
    x     = S (w_1 n_x + w_2 n_y) + m          (lies on the ray)
    t     = d . x

Two rasterization paths share the per-pair arithmetic and the compositor:
``render`` culls Gaussians into tiles and compacts per-pixel candidate lists,
``render_naive`` evaluates every Gaussian at every pixel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch

from . import erp
from . import sh as shlib
from .appearance import AppearanceContext
from .scene import CameraPose, GaussianScene, local_to_world


@dataclass
class RenderConfig:
    tile_size: int = 16
    near_clip: float = 1e-4
    alpha_min: float = 1.0 / 255.0
    alpha_max: float = 0.999
    transmittance_min: float = 1e-4
    depth_alpha_min: float = 0.05
    det_min: float = 1e-18
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    d_max: float | None = None
    # candidate pass keeps alpha >= candidate_slack * alpha_min
    candidate_slack: float = 0.9

    def depth_fill(self, scene_radius: float) -> float:
        return self.d_max if self.d_max is not None else 2.0 * scene_radius


@dataclass
class RenderOutput:
    radiance: torch.Tensor
    depth: torch.Tensor
    accum_alpha: torch.Tensor
    # gaussians with at least one composited pair in this view
    visible: torch.Tensor | None = None
    # zero (N, 3) camera-space offset whose .grad is the screen-space statistic
    center_offset: torch.Tensor | None = None
    n_pairs: int = 0


# ---------------------------------------------------------------------------
# single-pair reference evaluation (literal homogeneous-plane form)


class Rejected(enum.Enum):
    BEHIND_CAMERA = "behind_camera"
    DEGENERATE = "degenerate"


@dataclass
class SplatHit:
    rho_sq: float
    t: float
    point_cam: np.ndarray


def ray_splat_eval(mu, quat, log_scale, pose: CameraPose, px: float, py: float,
                   near_clip: float = 1e-4, det_min: float = 1e-18) -> SplatHit | Rejected:
    """Evaluate one Gaussian against the ray of pixel ``(px, py)`` in float64."""
    t_local = local_to_world(*(torch.as_tensor(np.asarray(v, dtype=np.float64)) for v in (mu, quat, log_scale)))
    mt = pose.world_to_cam @ t_local.numpy()
    phi, theta, d = erp.pixel_to_dir(px, py, pose.width, pose.height)
    planes = erp.ray_planes(phi, theta)
    hx = mt.T @ planes.pix
    hy = mt.T @ planes.piy
    n1, n2 = hx[:3], hy[:3]
    g = np.array([[n1 @ n1, n1 @ n2], [n1 @ n2, n2 @ n2]])
    if np.linalg.det(g) < det_min:
        return Rejected.DEGENERATE
    w = np.linalg.solve(g, -np.array([hx[3], hy[3]]))
    p_local = w[0] * n1 + w[1] * n2
    x_cam = mt[:3, :3] @ p_local + mt[:3, 3]
    t = float(x_cam @ d)
    if t <= near_clip:
        return Rejected.BEHIND_CAMERA
    return SplatHit(rho_sq=float(p_local @ p_local), t=t, point_cam=x_cam)


# ---------------------------------------------------------------------------
# batched pair arithmetic

_SYM = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _sym_products(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Coefficients ``c`` such that ``u^T S v = c . (Sxx, Syy, Szz, Sxy, Sxz, Syz)``."""
    cols = []
    for i, j in _SYM:
        cols.append(u[:, i] * v[:, i] if i == j else u[:, i] * v[:, j] + u[:, j] * v[:, i])
    return np.stack(cols, axis=1)


@dataclass
class PixelFeatures:
    """Per-pixel plane features, each ``(H*W, k)``."""

    sxx: torch.Tensor
    sxy: torch.Tensor
    syy: torch.Tensor
    sdx: torch.Tensor
    sdy: torch.Tensor
    nx: torch.Tensor
    ny: torch.Tensor
    d: torch.Tensor

    def take(self, idx) -> "PixelFeatures":
        return PixelFeatures(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


_PIX_CACHE: dict[tuple[int, int, torch.dtype], PixelFeatures] = {}


def pixel_features(width: int, height: int, dtype: torch.dtype) -> PixelFeatures:
    key = (width, height, dtype)
    if key not in _PIX_CACHE:
        fr = erp.pixel_frames(width, height)
        arrs = (
            _sym_products(fr.nx, fr.nx),
            _sym_products(fr.nx, fr.ny),
            _sym_products(fr.ny, fr.ny),
            _sym_products(fr.dirs, fr.nx),
            _sym_products(fr.dirs, fr.ny),
            fr.nx, fr.ny, fr.dirs,
        )
        _PIX_CACHE[key] = PixelFeatures(*(torch.as_tensor(a, dtype=dtype) for a in arrs))
    return _PIX_CACHE[key]


@dataclass
class ViewGaussians:
    """Camera-space quantities of every Gaussian for one view, in sort order."""

    cov6: torch.Tensor       # (N, 6) Sxx Syy Szz Sxy Sxz Syz
    mean: torch.Tensor       # (N, 3)
    opacity: torch.Tensor    # (N,)
    rgb: torch.Tensor        # (N, 3)
    order: np.ndarray        # sorted position -> original index
    max_scale: np.ndarray    # (N,) effective, original order
    center_offset: torch.Tensor


def prepare_view(scene: GaussianScene, pose: CameraPose, appearance: AppearanceContext | None = None,
                 track_center_grad: bool = False) -> ViewGaussians:
    dtype = scene.dtype
    rot_w = torch.as_tensor(pose.rotation, dtype=dtype)
    t_w = torch.as_tensor(pose.translation, dtype=dtype)

    offset = torch.zeros_like(scene.mu, requires_grad=track_center_grad)
    mean = scene.mu @ rot_w.T + t_w + offset
    scale, opacity = scene.filtered_scale_opacity()
    lmat = (rot_w @ scene.rotation) * scale[:, None, :]
    cov = lmat @ lmat.transpose(-1, -2)
    cov6 = torch.stack([cov[:, i, j] for i, j in _SYM], dim=-1)

    view_dirs = scene.mu - torch.as_tensor(pose.center, dtype=dtype)
    view_dirs = view_dirs / torch.clamp_min(view_dirs.norm(dim=-1, keepdim=True), 1e-12)
    dc = shlib.dc_to_rgb(scene.sh[:, 0])
    if appearance is not None:
        dc = appearance.corrected_dc(dc, scene.mu)
    rgb = shlib.sh_to_rgb(scene.sh, view_dirs, scene.active_sh_degree, dc_rgb=dc)

    key = mean.detach().norm(dim=-1).numpy()
    order = np.argsort(key, kind="stable")
    o = torch.as_tensor(order)
    return ViewGaussians(
        cov6=cov6[o], mean=mean[o], opacity=opacity[o], rgb=rgb[o], order=order,
        max_scale=scale.detach().max(dim=-1).values.numpy(), center_offset=offset,
    )


def _pair_terms(prow: torch.Tensor, gfeat: torch.Tensor, opacity: torch.Tensor,
                cfg: RenderConfig) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-pair evaluation, pairs along the last axis.

    ``prow`` is ``(39, n)`` pixel features (see :func:`pair_pixel_rows`),
    ``gfeat`` the matching ``(9, n)`` Gaussian features ``(cov6, mean)``.
    Returns ``(alpha, t, valid)`` with alpha zeroed where invalid.
    """
    cov, mean = gfeat[:6], gfeat[6:]
    a, b, c, e, f = ((prow[6 * i:6 * i + 6] * cov).sum(0) for i in range(5))
    o1, o2, om = ((prow[30 + 3 * i:33 + 3 * i] * mean).sum(0) for i in range(3))
    det = a * c - b * b
    ok = det >= cfg.det_min
    det = torch.where(ok, det, torch.ones_like(det))
    w1 = (b * o2 - c * o1) / det
    w2 = (b * o1 - a * o2) / det
    rho_sq = -(o1 * w1 + o2 * w2)
    t = e * w1 + f * w2 + om
    alpha = opacity * torch.exp(-0.5 * torch.clamp_min(rho_sq, 0.0))
    valid = ok & (t > cfg.near_clip) & (alpha >= cfg.alpha_min)
    alpha = torch.where(valid, torch.clamp_max(alpha, cfg.alpha_max), torch.zeros_like(alpha))
    return alpha, t, valid


_ROW_CACHE: dict[tuple[int, int, torch.dtype], torch.Tensor] = {}


def pair_pixel_rows(width: int, height: int, dtype: torch.dtype) -> torch.Tensor:
    """``(39, H*W)``: ``sxx sxy syy sdx sdy`` (6 rows each) then ``nx ny d`` (3 each).

    Dotted with a Gaussian's ``cov6`` the first five blocks give the Gram
    entries ``a, b, c`` and the ``d S n`` cross terms ``e, f``; dotted with
    its mean the last three give the plane offsets and ``d . m``.
    """
    key = (width, height, dtype)
    if key not in _ROW_CACHE:
        pf = pixel_features(width, height, dtype)
        rows = torch.cat([pf.sxx, pf.sxy, pf.syy, pf.sdx, pf.sdy, pf.nx, pf.ny, pf.d], dim=1)
        _ROW_CACHE[key] = rows.T.contiguous()
    return _ROW_CACHE[key]


_MAT_CACHE: dict[tuple[int, int, torch.dtype], torch.Tensor] = {}


def _candidate_pixel_mats(width: int, height: int, dtype: torch.dtype) -> torch.Tensor:
    """``(H*W, 5, 9)`` rows taking ``(cov6, mean)`` to ``a, b, c, o1, o2``."""
    key = (width, height, dtype)
    if key not in _MAT_CACHE:
        pf = pixel_features(width, height, dtype)
        n = pf.nx.shape[0]
        z3 = torch.zeros(n, 3, dtype=dtype)
        z6 = torch.zeros(n, 6, dtype=dtype)
        rows = [torch.cat([x, z3], 1) for x in (pf.sxx, pf.sxy, pf.syy)]
        rows += [torch.cat([z6, x], 1) for x in (pf.nx, pf.ny)]
        _MAT_CACHE[key] = torch.stack(rows, dim=1)
    return _MAT_CACHE[key]


def _candidate_mask(pix_mat: torch.Tensor, gauss_mat: torch.Tensor, opacity: torch.Tensor,
                    alpha_cut: float) -> torch.Tensor:
    """Loose visibility test for a tile: ``(P, 5, 9) x (K, 9) -> (P, K)`` bool.

    Only the response is tested; depth and degeneracy gates are left to the
    exact pass.
    """
    p = pix_mat.shape[0]
    q = (pix_mat.reshape(p * 5, 9) @ gauss_mat.T).reshape(p, 5, -1)
    a, b, c, o1, o2 = q.unbind(1)
    det = a * c - b * b
    rho_sq = (c * o1 * o1 - 2 * b * o1 * o2 + a * o2 * o2) / det
    # rho^2 <= 2 ln(o / cut) written without the exp
    bound = 2.0 * torch.log(torch.clamp_min(opacity / alpha_cut, 1e-30))
    return (det > 0) & (rho_sq <= bound)


def _weights(alpha: torch.Tensor, cfg: RenderConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Blending weights ``alpha_i T_i`` and the final transmittance for ``(P, K)`` alphas.

    Contributions behind the early-termination point get zero alpha; the
    cut-off itself is a constant gate.
    """
    ones = torch.ones(alpha.shape[0], 1, dtype=alpha.dtype)
    with torch.no_grad():
        trans = torch.cat([ones, torch.cumprod(1.0 - alpha, dim=1)[:, :-1]], dim=1)
        live = trans >= cfg.transmittance_min
    alpha = torch.where(live, alpha, torch.zeros_like(alpha))
    incl = torch.cumprod(1.0 - alpha, dim=1)
    trans = torch.cat([ones, incl[:, :-1]], dim=1)
    return alpha * trans, incl[:, -1]


def _depth(weight: torch.Tensor, t: torch.Tensor, accum: torch.Tensor, d_max: float,
           cfg: RenderConfig) -> torch.Tensor:
    wsum = weight.sum(dim=1)
    expected = (weight * t).sum(dim=1) / torch.clamp_min(wsum, 1e-6)
    fill = torch.full_like(expected, d_max)
    return torch.where(accum.detach() >= cfg.depth_alpha_min, expected, fill)


def composite(alpha: torch.Tensor, t: torch.Tensor, rgb: torch.Tensor, background: torch.Tensor,
              d_max: float, cfg: RenderConfig) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Front-to-back compositing of depth-sorted contributions.

    ``alpha``/``t`` are ``(P, K)`` (zero alpha marks an empty slot), ``rgb`` is
    ``(P, K, 3)``. Returns per-pixel ``(rgb, depth, accum_alpha)``.
    """
    p, k = alpha.shape
    if k == 0:
        z = torch.zeros(p, dtype=background.dtype)
        return background.expand(p, 3).clone(), torch.full((p,), d_max, dtype=background.dtype), z
    weight, t_final = _weights(alpha, cfg)
    color = (weight[..., None] * rgb).sum(dim=1) + background * t_final[:, None]
    accum = 1.0 - t_final
    return color, _depth(weight, t, accum, d_max, cfg), accum


def composite_list(contribs, background, d_max: float, cfg: RenderConfig | None = None):
    """Convenience wrapper over :func:`composite` for one ray.

    ``contribs`` is a sequence of ``(alpha, t, rgb)`` already sorted front to back.
    """
    cfg = cfg or RenderConfig()
    bg = torch.as_tensor(background, dtype=torch.float64)
    if len(contribs) == 0:
        alpha = torch.zeros(1, 0, dtype=torch.float64)
        t = alpha
        rgb = torch.zeros(1, 0, 3, dtype=torch.float64)
    else:
        alpha = torch.tensor([[min(float(c[0]), cfg.alpha_max) for c in contribs]], dtype=torch.float64)
        t = torch.tensor([[float(c[1]) for c in contribs]], dtype=torch.float64)
        rgb = torch.tensor([[list(c[2]) for c in contribs]], dtype=torch.float64)
    color, depth, accum = composite(alpha, t, rgb, bg, d_max, cfg)
    return color[0].numpy(), float(depth[0]), float(accum[0])


# ---------------------------------------------------------------------------
# culling


def _influence_radius(max_scale: np.ndarray, opacity: np.ndarray, alpha_min: float) -> np.ndarray:
    """Euclidean radius outside which a Gaussian's alpha is below ``alpha_min``.

    ``o exp(-rho^2/2) >= alpha_min`` needs ``rho <= sqrt(2 ln(o / alpha_min))``
    and ``rho >= dist / max_scale``. Negative means never visible.
    """
    ratio = opacity / alpha_min
    k = np.sqrt(2.0 * np.log(np.maximum(ratio, 1.0)))
    return np.where(ratio >= 1.0, k * max_scale * 1.001 + 1e-9, -1.0)


def cull_and_tile(mean: np.ndarray, max_scale: np.ndarray, opacity: np.ndarray, width: int, height: int,
                  tile_size: int, cfg: RenderConfig, alpha_min: float | None = None) -> list[np.ndarray]:
    """Conservative per-tile candidate lists.

    Inputs are camera-space centres, effective max scales and opacities in the
    order the lists should follow. Each Gaussian is bounded by the cone of rays
    passing within its influence radius; the cone's latitude band and
    longitude extent become a pixel rectangle (split at the seam, widened to
    full rows when it reaches a pole). Returns index arrays, tiles row-major.
    """
    alpha_min = cfg.alpha_min * cfg.candidate_slack if alpha_min is None else alpha_min
    n_tx = math.ceil(width / tile_size)
    n_ty = math.ceil(height / tile_size)
    n = len(mean)
    if n == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(n_tx * n_ty)]

    radius = _influence_radius(max_scale, opacity, alpha_min)
    dist = np.linalg.norm(mean, axis=1)
    visible = radius > 0
    everywhere = visible & ((dist <= radius) | (dist < cfg.near_clip))

    safe = np.where(dist > 0, dist, 1.0)
    psi = np.arcsin(np.clip(radius / safe, 0.0, 1.0))
    dirs = mean / safe[:, None]
    phi_c, theta_c = erp.dir_to_angles(dirs)
    px_c = (phi_c / erp.TWO_PI + 0.5) * width - 0.5
    theta_lo = theta_c - psi
    theta_hi = theta_c + psi
    pole = (theta_lo <= -np.pi / 2) | (theta_hi >= np.pi / 2)

    row = lambda th: (th / np.pi + 0.5) * height - 0.5  # noqa: E731
    r0 = np.clip(np.floor(row(theta_lo)) - 1, 0, height - 1).astype(np.int64)
    r1 = np.clip(np.ceil(row(theta_hi)) + 1, 0, height - 1).astype(np.int64)
    r0 = np.where(theta_lo <= -np.pi / 2, 0, r0)
    r1 = np.where(theta_hi >= np.pi / 2, height - 1, r1)

    cos_c = np.cos(theta_c)
    ratio = np.sin(psi) / np.maximum(cos_c, 1e-300)
    dphi = np.where(pole | (ratio >= 1.0), np.pi, np.arcsin(np.clip(ratio, 0.0, 1.0)))
    half_cols = dphi * width / erp.TWO_PI + 1.0
    full_width = pole | (2 * half_cols + 1 >= width)
    c0 = np.floor(px_c - half_cols).astype(np.int64)
    c1 = np.ceil(px_c + half_cols).astype(np.int64)

    full_rows = everywhere
    r0 = np.where(full_rows, 0, r0)
    r1 = np.where(full_rows, height - 1, r1)
    full_width = full_width | full_rows

    tr0, tr1 = r0 // tile_size, r1 // tile_size
    # column interval may wrap: represent as up to two tile intervals
    a0 = np.where(full_width, 0, c0)
    a1 = np.where(full_width, width - 1, c1)
    # part inside [0, W)
    m0 = np.clip(a0, 0, width - 1)
    m1 = np.clip(a1, 0, width - 1)
    # wrapped parts
    left_wrap = (a0 < 0) & ~full_width      # [W + a0, W)
    right_wrap = (a1 >= width) & ~full_width  # [0, a1 - W]
    tiles_y = np.arange(n_ty)[:, None]
    tiles_x = np.arange(n_tx)[:, None]
    in_rows = (tiles_y >= tr0[None]) & (tiles_y <= tr1[None]) & visible[None]          # (n_ty, N)
    in_cols = (tiles_x >= (m0 // tile_size)[None]) & (tiles_x <= (m1 // tile_size)[None])
    in_cols |= left_wrap[None] & (tiles_x >= ((width + a0) // tile_size)[None])
    in_cols |= right_wrap[None] & (tiles_x <= ((a1 - width) // tile_size)[None])
    lists = []
    for ty in range(n_ty):
        for tx in range(n_tx):
            lists.append(np.flatnonzero(in_rows[ty] & in_cols[tx]))
    return lists


def tile_pixels(width: int, height: int, tile_size: int) -> list[np.ndarray]:
    n_tx = math.ceil(width / tile_size)
    n_ty = math.ceil(height / tile_size)
    out = []
    for ty in range(n_ty):
        for tx in range(n_tx):
            ys = np.arange(ty * tile_size, min((ty + 1) * tile_size, height))
            xs = np.arange(tx * tile_size, min((tx + 1) * tile_size, width))
            out.append((ys[:, None] * width + xs[None, :]).ravel())
    return out


# ---------------------------------------------------------------------------
# render paths


def _finish(vg: ViewGaussians, pix: torch.Tensor, gidx: torch.Tensor,
            pose: CameraPose, scene: GaussianScene, cfg: RenderConfig) -> RenderOutput:
    """Evaluate a flat pair list and composite.

    ``pix``/``gidx`` list (pixel, Gaussian in sort order) pairs grouped by
    pixel, front to back within a pixel. Pairs are evaluated flat, then laid
    out as ``(n_pix, K)`` for the transmittance products.
    """
    dtype = scene.dtype
    h, w = pose.height, pose.width
    n_pix = h * w
    bg = torch.as_tensor(cfg.background, dtype=dtype)
    d_max = cfg.depth_fill(scene.scene_radius)
    n_pairs = pix.shape[0]

    prow = torch.index_select(pair_pixel_rows(w, h, dtype), 1, pix)
    gfeat = torch.index_select(torch.cat([vg.cov6, vg.mean], dim=1).T, 1, gidx)
    alpha_f, t_f, valid = _pair_terms(prow, gfeat, vg.opacity[gidx], cfg)
    counts = torch.bincount(pix, minlength=n_pix)
    k = int(counts.max()) if n_pairs else 0
    if k == 0:
        color, depth, accum = composite(torch.zeros(n_pix, 0, dtype=dtype), torch.zeros(n_pix, 0, dtype=dtype),
                                        torch.zeros(n_pix, 0, 3, dtype=dtype), bg, d_max, cfg)
    else:
        # pairs arrive grouped by pixel (not necessarily in pixel order)
        idx = torch.arange(n_pairs)
        first = torch.ones(n_pairs, dtype=torch.bool)
        first[1:] = pix[1:] != pix[:-1]
        slot = idx - torch.cummax(torch.where(first, idx, 0), 0).values
        where = (pix, slot)
        alpha = torch.zeros(n_pix, k, dtype=dtype).index_put(where, alpha_f)
        t = torch.zeros(n_pix, k, dtype=dtype).index_put(where, t_f)
        weight, t_final = _weights(alpha, cfg)
        color = torch.zeros(n_pix, 3, dtype=dtype).index_add(0, pix, weight[where][:, None] * vg.rgb[gidx])
        color = color + bg * t_final[:, None]
        accum = 1.0 - t_final
        depth = _depth(weight, t, accum, d_max, cfg)

    vis_sorted = torch.zeros(len(vg.order), dtype=torch.bool)
    vis_sorted[gidx[valid]] = True
    visible = torch.zeros_like(vis_sorted)
    visible[torch.as_tensor(vg.order)] = vis_sorted
    return RenderOutput(
        radiance=color.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        accum_alpha=accum.reshape(h, w),
        visible=visible,
        center_offset=vg.center_offset,
        n_pairs=int(valid.sum()),
    )


def _empty_output(scene: GaussianScene, pose: CameraPose, cfg: RenderConfig) -> RenderOutput:
    h, w = pose.height, pose.width
    bg = torch.as_tensor(cfg.background, dtype=scene.dtype)
    return RenderOutput(
        radiance=bg.expand(h, w, 3).clone(),
        depth=torch.full((h, w), cfg.depth_fill(scene.scene_radius), dtype=scene.dtype),
        accum_alpha=torch.zeros(h, w, dtype=scene.dtype),
        visible=torch.zeros(len(scene), dtype=torch.bool),
        center_offset=None,
    )


def render(scene: GaussianScene, pose: CameraPose, appearance: AppearanceContext | None = None,
           cfg: RenderConfig | None = None, track_center_grad: bool = False) -> RenderOutput:
    """Tiled render of clean radiance, expected depth and accumulated alpha."""
    cfg = cfg or RenderConfig()
    if len(scene) == 0:
        return _empty_output(scene, pose, cfg)
    vg = prepare_view(scene, pose, appearance, track_center_grad)
    n_pix = pose.width * pose.height

    with torch.no_grad():
        mean_np = vg.mean.detach().numpy().astype(np.float64)
        lists = cull_and_tile(mean_np, vg.max_scale[vg.order], vg.opacity.detach().numpy().astype(np.float64),
                              pose.width, pose.height, cfg.tile_size, cfg)
        pix_mats = _candidate_pixel_mats(pose.width, pose.height, scene.dtype)
        gauss_mat = torch.cat([vg.cov6, vg.mean], dim=1).detach()
        alpha_cut = cfg.alpha_min * cfg.candidate_slack
        opacity = vg.opacity.detach()
        pix_parts, g_parts = [], []
        for pix, cand in zip(tile_pixels(pose.width, pose.height, cfg.tile_size), lists):
            if len(cand) == 0:
                continue
            ct = torch.as_tensor(cand)
            pt = torch.as_tensor(pix)
            keep = _candidate_mask(pix_mats[pt], gauss_mat[ct], opacity[ct], alpha_cut)
            rows, cols = keep.nonzero(as_tuple=True)
            pix_parts.append(pt[rows])
            g_parts.append(ct[cols])
        if pix_parts:
            # each pixel lives in one tile, so pairs are already grouped per pixel, front to back
            pix_all = torch.cat(pix_parts)
            g_all = torch.cat(g_parts)
        else:
            pix_all = g_all = torch.zeros(0, dtype=torch.long)
    return _finish(vg, pix_all, g_all, pose, scene, cfg)


def render_naive(scene: GaussianScene, pose: CameraPose, appearance: AppearanceContext | None = None,
                 cfg: RenderConfig | None = None, track_center_grad: bool = False) -> RenderOutput:
    """Every Gaussian at every pixel; no culling, no tiling."""
    cfg = cfg or RenderConfig()
    if len(scene) == 0:
        return _empty_output(scene, pose, cfg)
    vg = prepare_view(scene, pose, appearance, track_center_grad)
    n_pix = pose.width * pose.height
    n = len(scene)
    pix = torch.arange(n_pix).repeat_interleave(n)
    gidx = torch.arange(n).repeat(n_pix)
    return _finish(vg, pix, gidx, pose, scene, cfg)
