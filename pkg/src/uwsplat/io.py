"""Dataset layout, image codecs and the binary checkpoint format.

Dataset directory::

    transforms.json            manifest (see load_dataset)
    images/<id>.png            observed panoramas, 8-bit RGB
    images/gt_J_<id>.png       clean radiance (synthetic data only)
    images/gt_D_<id>.png       ray depth, 16-bit gray + gt_D_<id>.txt sidecar
    points3d.txt               optional "x y z r g b" initial point cloud

Checkpoint layout (little endian)::

    b"UW360GS"  u32 version  u32 flags
    u32 n_gaussians  u32 sh_degree  u32 embed_dim  u32 fourier_bands  u32 candidates
    u32 hidden  u32 active_sh_degree  u64 iteration  u64 adam_step  f64 scene_radius
    f32 arrays: mu quat log_scale raw_opacity sh
                appearance (pose_mlp, correct_mlp; per layer weight then bias)
                medium (wb bb wr br raw_binf raw_bres wa ba lambda)
    [flags & 1] f32 Adam first moments then second moments, same order
    [flags & 2] f32 filter_sigma
    flags & 4 marks a medium-free scene (A = 1, B = 0)
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .scene import CameraPose

log = logging.getLogger(__name__)

MANIFEST = "transforms.json"
MANIFEST_VERSION = 1
MAGIC = b"UW360GS"
CHECKPOINT_VERSION = 1
FLAG_MOMENTS = 1
FLAG_FILTER = 2
FLAG_NO_MEDIUM = 4


class DatasetError(ValueError):
    pass


class MissingManifest(DatasetError):
    pass


class MissingImage(DatasetError):
    pass


class BadPose(DatasetError):
    pass


class SizeMismatch(DatasetError):
    pass


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


class EncodeError(IOError):
    pass


class DecodeError(IOError):
    pass


# ---------------------------------------------------------------------------
# images


def quantize(data) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero to 0..255."""
    v = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def write_image(path, data, clamp: bool = True) -> None:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise EncodeError(f"expected HxWx3 image, got {arr.shape}")
    if not clamp and (arr.min() < 0.0 or arr.max() > 1.0):
        raise EncodeError("values outside [0, 1] with clamp disabled")
    if not np.all(np.isfinite(arr)):
        raise EncodeError("non-finite pixel values")
    try:
        Image.fromarray(quantize(arr), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise EncodeError(str(exc)) from exc


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise DecodeError(f"{path}: expected 8-bit RGB, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".txt")


def write_depth(path, depth) -> float:
    """16-bit gray PNG of ``depth / max``; the max goes to a ``.txt`` sidecar."""
    path = Path(path)
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2 or not np.all(np.isfinite(d)) or d.min() < 0:
        raise EncodeError("depth must be a finite, non-negative HxW map")
    dmax = float(d.max()) or 1.0
    q = np.floor(d / dmax * 65535.0 + 0.5).astype(np.uint16)
    try:
        Image.fromarray(q).save(path, format="PNG")
    except OSError as exc:
        raise EncodeError(str(exc)) from exc
    _sidecar(path).write_text(f"max_depth {dmax!r}\n")
    return dmax


def read_depth(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im).astype(np.float64)
        text = _sidecar(path).read_text().split()
    except (OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if len(text) != 2 or text[0] != "max_depth":
        raise DecodeError(f"{_sidecar(path)}: malformed depth sidecar")
    return arr / 65535.0 * float(text[1])


# ---------------------------------------------------------------------------
# datasets


@dataclass
class View:
    pose: CameraPose
    image: np.ndarray
    gt_J: np.ndarray | None = None
    gt_D: np.ndarray | None = None


@dataclass
class Dataset:
    root: Path
    views: list[View]
    train_ids: list[int]
    test_ids: list[int]
    points: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def train(self) -> list[View]:
        return [self.views[i] for i in self.train_ids]

    @property
    def test(self) -> list[View]:
        return [self.views[i] for i in self.test_ids]


def check_rotation(rot: np.ndarray, where: str, warn_tol: float = 1e-4, fail_tol: float = 1e-2) -> str | None:
    err = float(np.abs(rot @ rot.T - np.eye(3)).max())
    if err > fail_tol or np.linalg.det(rot) <= 0:
        raise BadPose(f"{where}: rotation is not orthonormal (error {err:.3g})")
    if err > warn_tol:
        return f"{where}: rotation orthonormality error {err:.3g}"
    return None


def write_dataset(out_dir, views, points: np.ndarray | None = None, split: dict | None = None) -> Path:
    """Write views (objects with ``pose``, ``raw`` and optional ``J``/``D``) plus a manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    frames = []
    for v in views:
        name = v.pose.image_id
        write_image(out / "images" / f"{name}.png", v.raw)
        if getattr(v, "J", None) is not None:
            write_image(out / "images" / f"gt_J_{name}.png", v.J)
        if getattr(v, "D", None) is not None:
            write_depth(out / "images" / f"gt_D_{name}.png", v.D)
        frames.append({
            "id": name,
            "file": f"images/{name}.png",
            "w2c": [float(x) for x in v.pose.world_to_cam.ravel()],
            "width": v.pose.width,
            "height": v.pose.height,
        })
    manifest = {"version": MANIFEST_VERSION, "pose_convention": "world_to_camera", "frames": frames}
    if split is not None:
        manifest["split"] = split
    if points is not None:
        np.savetxt(out / "points3d.txt", points, fmt="%.9g")
        manifest["points"] = "points3d.txt"
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return out


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise DatasetError(f"{where}: missing field '{key}'")
    val = obj[key]
    if not isinstance(val, kind) or isinstance(val, bool):
        raise DatasetError(f"{where}: field '{key}' has wrong type {type(val).__name__}")
    return val


def _read_manifest(root: Path) -> tuple[Path, dict]:
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise MissingManifest(f"{mpath} not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{mpath}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise DatasetError(f"{mpath}: top level must be an object")
    version = _require(manifest, "version", int, str(mpath))
    if version != MANIFEST_VERSION:
        raise DatasetError(f"{mpath}: unsupported manifest version {version}")
    return mpath, manifest


def _parse_frames(manifest: dict, mpath: Path, warnings: list[str]) -> list[tuple[CameraPose, str]]:
    convention = manifest.get("pose_convention", "world_to_camera")
    if convention not in ("world_to_camera", "camera_to_world"):
        raise DatasetError(f"{mpath}: unknown pose_convention {convention!r}")
    frames = _require(manifest, "frames", list, str(mpath))
    out = []
    for i, fr in enumerate(frames):
        where = f"{mpath}: frame {i}"
        if not isinstance(fr, dict):
            raise DatasetError(f"{where}: must be an object")
        file = _require(fr, "file", str, where)
        w = _require(fr, "width", int, where)
        h = _require(fr, "height", int, where)
        m = _require(fr, "w2c", list, where)
        if len(m) != 16 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in m):
            raise BadPose(f"{where}: w2c must hold 16 numbers")
        mat = np.array(m, dtype=np.float64).reshape(4, 4)
        if not np.all(np.isfinite(mat)) or not np.allclose(mat[3], [0, 0, 0, 1]):
            raise BadPose(f"{where}: bad homogeneous row {mat[3]}")
        msg = check_rotation(mat[:3, :3], where)
        if msg:
            warnings.append(msg)
        if convention == "camera_to_world":
            mat = np.linalg.inv(mat)
        if w <= 0 or h <= 0:
            raise DatasetError(f"{where}: image size must be positive")
        if w != 2 * h:
            warnings.append(f"{where}: {w}x{h} is not a 2:1 panorama")
        fid = str(fr.get("id", Path(file).stem))
        out.append((CameraPose(mat, w, h, fid), file))
    return out


def load_poses(root) -> list[CameraPose]:
    """Poses from a manifest without touching the images (for rendering)."""
    root = Path(root)
    mpath, manifest = _read_manifest(root)
    warnings: list[str] = []
    poses = [p for p, _ in _parse_frames(manifest, mpath, warnings)]
    for msg in warnings:
        log.warning(msg)
    return poses


def load_dataset(root) -> Dataset:
    """Read ``transforms.json`` and every referenced image.

    Manifest schema::

        {"version": 1,
         "pose_convention": "world_to_camera" | "camera_to_world",
         "frames": [{"id": str, "file": str, "w2c": [16 floats, row major],
                     "width": int, "height": int}, ...],
         "split": {"train": [ids], "test": [ids]},      # optional
         "points": "points3d.txt"}                       # optional

    With ``pose_convention = camera_to_world`` the 16 numbers under ``w2c``
    are inverted on load. Without a split, even frame indices train.
    """
    root = Path(root)
    mpath, manifest = _read_manifest(root)
    warnings: list[str] = []
    views: list[View] = []
    ids: list[str] = []
    for pose, file in _parse_frames(manifest, mpath, warnings):
        w, h = pose.width, pose.height
        path = root / file
        if not path.is_file():
            raise MissingImage(f"{path} not found")
        img = read_image(path)
        if img.shape[:2] != (h, w):
            raise SizeMismatch(f"{path}: image is {img.shape[1]}x{img.shape[0]}, manifest says {w}x{h}")
        gt_j = gt_d = None
        jp = path.parent / f"gt_J_{path.name}"
        dp = path.parent / f"gt_D_{path.name}"
        if jp.is_file():
            gt_j = read_image(jp)
        if dp.is_file():
            gt_d = read_depth(dp)
        views.append(View(pose, img, gt_j, gt_d))
        ids.append(pose.image_id)

    split = manifest.get("split")
    if split is None:
        train_ids, test_ids = list(range(0, len(views), 2)), list(range(1, len(views), 2))
    else:
        lookup = {fid: i for i, fid in enumerate(ids)}
        try:
            train_ids = [lookup[str(x)] for x in split["train"]]
            test_ids = [lookup[str(x)] for x in split["test"]]
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"{mpath}: bad split entry {exc}") from exc

    points = None
    if "points" in manifest:
        ppath = root / manifest["points"]
        if not ppath.is_file():
            raise DatasetError(f"{ppath} not found")
        points = np.loadtxt(ppath, ndmin=2)
        if points.shape[1] != 6:
            raise DatasetError(f"{ppath}: expected 6 columns, got {points.shape[1]}")
    for msg in warnings:
        log.warning(msg)
    return Dataset(root, views, train_ids, test_ids, points, warnings)


# ---------------------------------------------------------------------------
# checkpoints

_HEADER = struct.Struct("<7sII" + "I" * 7 + "QQd")


def _state_arrays(state) -> list[torch.Tensor]:
    s = state.scene
    arrays = [s.mu, s.quat, s.log_scale, s.raw_opacity, s.sh]
    arrays += [p for _, p in state.appearance.named_parameters()]
    arrays += [getattr(state.medium, n) for n in state.medium.BACKSCATTER + state.medium.ATTENUATION]
    return arrays


def _param_names(state) -> list[str]:
    names = [f"gaussian.{n}" for n in ("mu", "quat", "log_scale", "raw_opacity", "sh")]
    names += [f"appearance.{n}" for n, _ in state.appearance.named_parameters()]
    names += [f"medium.{n}" for n in state.medium.BACKSCATTER + state.medium.ATTENUATION]
    return names


def save_checkpoint(state, path) -> None:
    arrays = _state_arrays(state)
    adam = state.adam
    flags = 0
    if adam is not None and adam.m:
        flags |= FLAG_MOMENTS
    if state.scene.filter_sigma is not None and bool(torch.any(state.scene.filter_sigma != 0)):
        flags |= FLAG_FILTER
    if not state.use_medium:
        flags |= FLAG_NO_MEDIUM
    app, med = state.appearance, state.medium
    header = _HEADER.pack(
        MAGIC, CHECKPOINT_VERSION, flags,
        len(state.scene), state.scene.max_sh_degree, app.embed_dim, app.fourier_bands, med.cfg.candidates,
        app.cfg.hidden, state.scene.active_sh_degree,
        state.iteration, adam.step if adam is not None else 0, float(state.scene.scene_radius),
    )
    chunks = [header]
    chunks += [_f32(a) for a in arrays]
    if flags & FLAG_MOMENTS:
        names = _param_names(state)
        chunks += [_f32(adam.m[n]) for n in names]
        chunks += [_f32(adam.v[n]) for n in names]
    if flags & FLAG_FILTER:
        chunks.append(_f32(state.scene.filter_sigma))
    Path(path).write_bytes(b"".join(chunks))


def _f32(t: torch.Tensor) -> bytes:
    return t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()


def load_checkpoint(path):
    """Rebuild a float32 :class:`~uwsplat.state.TrainState` from disk."""
    from .appearance import AppearanceConfig, AppearanceNet
    from .medium import MediumConfig, MediumNet
    from .optim.adam import AdamState
    from .scene import GaussianScene
    from .state import TrainState

    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:7] != MAGIC:
        raise CorruptFile(f"{path}: bad magic or truncated header")
    (_, version, flags, n, sh_deg, e, l_bands, p, hidden, active, iteration, step, radius) = _HEADER.unpack_from(data)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")

    f32 = torch.float32
    n_sh = (sh_deg + 1) ** 2
    scene = GaussianScene(
        mu=torch.zeros(n, 3, dtype=f32), quat=torch.zeros(n, 4, dtype=f32),
        log_scale=torch.zeros(n, 3, dtype=f32), raw_opacity=torch.zeros(n, dtype=f32),
        sh=torch.zeros(n, n_sh, 3, dtype=f32), max_sh_degree=sh_deg, active_sh_degree=active,
        scene_radius=radius,
    )
    app = AppearanceNet(AppearanceConfig(embed_dim=e, hidden=hidden, fourier_bands=l_bands), dtype=f32)
    med = MediumNet(MediumConfig(candidates=p, embed_dim=e), dtype=f32)
    state = TrainState(scene=scene, appearance=app, medium=med, adam=AdamState(), iteration=iteration,
                       use_medium=not flags & FLAG_NO_MEDIUM)
    state.adam.step = step

    offset = _HEADER.size
    templates = _state_arrays(state)
    names = _param_names(state)

    def take(shape) -> torch.Tensor:
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(data):
            raise CorruptFile(f"{path}: truncated at byte {offset}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = end
        return torch.from_numpy(arr.astype(np.float32))

    values = [take(tuple(t.shape)) for t in templates]
    scene.mu, scene.quat, scene.log_scale, scene.raw_opacity, scene.sh = values[:5]
    k = 5
    with torch.no_grad():
        for (_, prm) in app.named_parameters():
            prm.copy_(values[k])
            k += 1
        for name in med.BACKSCATTER + med.ATTENUATION:
            getattr(med, name).copy_(values[k])
            k += 1
    if flags & FLAG_MOMENTS:
        state.adam.m = {nm: take(tuple(t.shape)) for nm, t in zip(names, templates)}
        state.adam.v = {nm: take(tuple(t.shape)) for nm, t in zip(names, templates)}
    scene.filter_sigma = take((n,)) if flags & FLAG_FILTER else torch.zeros(n, dtype=f32)
    if offset != len(data):
        raise CorruptFile(f"{path}: {len(data) - offset} trailing bytes")
    return state
