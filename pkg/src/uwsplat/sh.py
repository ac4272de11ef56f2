"""Real spherical harmonics up to degree 3 (3DGS sign and ordering convention)."""

import torch

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """Basis values ``Y_lm(dir)`` with shape ``(..., (degree+1)**2)``."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}], got {degree}")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [torch.full_like(x, C0)]
    if degree >= 1:
        out += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out += [
            C2[0] * xy,
            C2[1] * yz,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * xz,
            C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            C3[0] * y * (3 * xx - yy),
            C3[1] * xy * z,
            C3[2] * y * (4 * zz - xx - yy),
            C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            C3[4] * x * (4 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3 * yy),
        ]
    return torch.stack(out, dim=-1)


def dc_to_rgb(dc: torch.Tensor) -> torch.Tensor:
    return 0.5 + C0 * dc


def rgb_to_dc(rgb):
    return (rgb - 0.5) / C0


def sh_view_term(sh: torch.Tensor, dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """Contribution of the degree >= 1 bands. ``sh`` is ``(N, K, 3)``, ``dirs`` ``(N, 3)``."""
    if degree == 0:
        return torch.zeros(sh.shape[0], 3, dtype=sh.dtype, device=sh.device)
    basis = sh_basis(dirs, degree)[:, 1:]
    return torch.einsum("nk,nkc->nc", basis, sh[:, 1 : num_coeffs(degree)])


def sh_to_rgb(sh: torch.Tensor, dirs: torch.Tensor, degree: int, dc_rgb: torch.Tensor | None = None) -> torch.Tensor:
    """``max(0.5 + sum_lm Y_lm(dir) sh_lm, 0)``.

    ``dc_rgb`` optionally replaces the diffuse term ``0.5 + C0 * sh_00`` (used by
    the appearance correction); the higher bands are kept either way.
    """
    if dc_rgb is None:
        dc_rgb = dc_to_rgb(sh[:, 0])
    return torch.clamp_min(dc_rgb + sh_view_term(sh, dirs, degree), 0.0)
