import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from uwsplat.scene import CameraPose, GaussianScene  # noqa: E402


def random_scene(rng, n, dtype=torch.float64, spread=2.0, scale=(0.05, 0.6), degree=3, radius=4.0):
    mu = rng.normal(size=(n, 3)) * spread
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    ls = np.log(rng.uniform(*scale, size=(n, 3)))
    ro = rng.uniform(-2, 3, size=n)
    sh = rng.normal(size=(n, 16, 3)) * 0.3
    t = lambda a: torch.tensor(a, dtype=dtype)  # noqa: E731
    return GaussianScene(t(mu), t(q), t(ls), t(ro), t(sh), max_sh_degree=3, active_sh_degree=degree,
                         scene_radius=radius)


def single_gaussian(mu, log_scale=(0.0, 0.0, 0.0), quat=(1.0, 0.0, 0.0, 0.0), opacity_raw=0.0, rgb=None,
                    dtype=torch.float64, radius=10.0):
    from uwsplat import sh as shlib

    sh = torch.zeros(1, 16, 3, dtype=dtype)
    if rgb is not None:
        sh[0, 0] = torch.as_tensor(shlib.rgb_to_dc(np.asarray(rgb, dtype=np.float64)), dtype=dtype)
    t = lambda a: torch.tensor([a], dtype=dtype)  # noqa: E731
    return GaussianScene(t(list(mu)), t(list(quat)), t(list(log_scale)), torch.tensor([opacity_raw], dtype=dtype),
                         sh, max_sh_degree=3, active_sh_degree=0, scene_radius=radius)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def origin_pose():
    return CameraPose.from_center([0.0, 0.0, 0.0], 64, 32)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Sphere-room at 32x16 with 4 cameras; cheap enough for training smoke tests."""
    from uwsplat import io
    from uwsplat.synthbench import default_room, generate_dataset

    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(root, default_room(n_cameras=4, seed=3), width=32, height=16, seed=3, points_per_view=150)
    return io.load_dataset(root)
