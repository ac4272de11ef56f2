"""Equirectangular (ERP) camera geometry.

Conventions
-----------
Pixel ``(px, py)`` maps to longitude ``phi`` and latitude ``theta``::

    phi   = ((px + 0.5) / W - 0.5) * 2 pi
    theta = ((py + 0.5) / H - 0.5) * pi

and to the camera-space unit direction ``(sin phi cos theta, sin theta,
-cos phi cos theta)``. The camera looks down ``-z`` at the image centre,
``+x`` is to the right and, because ``theta`` grows with the row index, the
bottom of the image points to ``+y``.

The per-pixel frame ``(n_x, n_y, d)`` is orthonormal and right handed:
``n_x x n_y = d``.

Everything here is float64 numpy; the renderer downcasts after the planes
are built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class RayPlanes:
    nx: np.ndarray
    ny: np.ndarray

    @property
    def pix(self) -> np.ndarray:
        return np.concatenate([self.nx, np.zeros(self.nx.shape[:-1] + (1,))], axis=-1)

    @property
    def piy(self) -> np.ndarray:
        return np.concatenate([self.ny, np.zeros(self.ny.shape[:-1] + (1,))], axis=-1)


def pixel_to_angles(px, py, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    phi = ((px + 0.5) / width - 0.5) * TWO_PI
    theta = ((py + 0.5) / height - 0.5) * np.pi
    return phi, theta


def angles_to_dir(phi, theta) -> np.ndarray:
    cos_t = np.cos(theta)
    return np.stack([np.sin(phi) * cos_t, np.sin(theta), -np.cos(phi) * cos_t], axis=-1)


def pixel_to_dir(px, py, width: int, height: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(phi, theta, dir)`` for (possibly array-valued) pixel coordinates."""
    phi, theta = pixel_to_angles(px, py, width, height)
    return phi, theta, angles_to_dir(phi, theta)


def dir_to_angles(d) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    # + 0.0 turns -0.0 into +0.0 so the pole gets atan2(0, 0) = 0
    phi = np.arctan2(x + 0.0, -z + 0.0)
    # same value as asin(clamp(y)), better conditioned near the poles
    theta = np.arctan2(np.clip(y, -1.0, 1.0), np.hypot(x, z))
    return phi, theta


def dir_to_pixel(d, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pixel_to_dir`. Longitude is wrapped into ``[0, W)``.

    At the poles ``atan2(0, 0) = 0`` fixes the column to the image centre.
    """
    phi, theta = dir_to_angles(d)
    px = (phi / TWO_PI + 0.5) * width - 0.5
    py = (theta / np.pi + 0.5) * height - 0.5
    return np.mod(px, width), py


def ray_planes(phi, theta) -> RayPlanes:
    phi = np.asarray(phi, dtype=np.float64)
    d = angles_to_dir(phi, theta)
    nx = np.stack([np.cos(phi), np.zeros_like(phi), np.sin(phi)], axis=-1)
    ny = np.cross(d, nx)
    ny = ny / np.linalg.norm(ny, axis=-1, keepdims=True)
    return RayPlanes(nx=nx, ny=ny)


@dataclass(frozen=True)
class PixelFrames:
    """Per-pixel ray frames for a whole ERP grid, flattened row-major (H*W, 3)."""

    width: int
    height: int
    dirs: np.ndarray
    nx: np.ndarray
    ny: np.ndarray

    @property
    def theta_rows(self) -> np.ndarray:
        return pixel_to_angles(0.0, np.arange(self.height), self.width, self.height)[1]


_FRAME_CACHE: dict[tuple[int, int], PixelFrames] = {}


def pixel_frames(width: int, height: int) -> PixelFrames:
    key = (width, height)
    if key not in _FRAME_CACHE:
        py, px = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        phi, theta, dirs = pixel_to_dir(px.ravel(), py.ravel(), width, height)
        planes = ray_planes(phi, theta)
        _FRAME_CACHE[key] = PixelFrames(width, height, dirs, planes.nx, planes.ny)
    return _FRAME_CACHE[key]
