"""Analytic dynamic test scene: drifting Gaussian density blobs in the unit cube.

Ground truth is rendered through the same compositing quadrature as the model
(4x the sample count, deterministic midpoints), so training targets are
realizable by construction.  Datasets are written as PPM images plus a plain
text poses file and manifest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rendering import Camera, RayBatch, composite, generate_rays, read_ppm, sample_points, write_ppm

ORACLE_SAMPLES = 256
SIGMA_EPS = 1e-9


@dataclass
class Blob:
    center: np.ndarray  # (3,) rest position
    motion_amp: np.ndarray  # (3,) sinusoid amplitude per axis
    motion_freq: np.ndarray  # (3,) cycles over the whole sequence
    motion_phase: np.ndarray  # (3,) radians
    peak: float  # density at the center
    radius: float  # Gaussian radius
    color: np.ndarray  # (3,) rgb

    def center_at(self, t: float) -> np.ndarray:
        # t in [0, 1): fraction of the sequence
        return self.center + self.motion_amp * np.sin(
            2.0 * np.pi * self.motion_freq * t + self.motion_phase
        )


@dataclass
class BlobScene:
    blobs: list[Blob]
    background: np.ndarray
    n_frames: int
    period: int = 40  # frames per motion cycle; fixed so short clips are prefixes

    def __post_init__(self):
        for b in self.blobs:
            if b.radius <= 0 or b.peak < 0:
                raise ConfigError("blob needs radius > 0 and peak >= 0")

    def time_of(self, frame: int) -> float:
        return frame / self.period


def default_scene(n_frames: int = 40, static: bool = False) -> BlobScene:
    """Three colored blobs on slow sinusoidal paths (<= 0.02 units per frame)."""
    amp = 0.0 if static else 0.09
    mk = lambda c, f, ph, col, pk, r: Blob(  # noqa: E731
        np.array(c), np.full(3, amp) * np.array(f), np.array([1.0, 1.0, 1.0]),
        np.array(ph), pk, r, np.array(col),
    )
    blobs = [
        mk([0.38, 0.40, 0.45], [1.0, 0.8, 0.5], [0.0, 1.6, 3.1], [0.85, 0.25, 0.2], 40.0, 0.10),
        mk([0.62, 0.55, 0.50], [0.7, 1.0, 0.6], [2.1, 0.4, 5.0], [0.2, 0.7, 0.3], 32.0, 0.12),
        mk([0.50, 0.62, 0.58], [0.5, 0.6, 1.0], [4.2, 2.8, 1.0], [0.25, 0.35, 0.85], 36.0, 0.09),
    ]
    return BlobScene(blobs, np.array([1.0, 1.0, 1.0]), n_frames)


def oracle_field(scene: BlobScene, x: np.ndarray, t: float):
    """(rgb, sigma) at points x (m,3) and sequence fraction t."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = x.shape[0]
    sigma = np.zeros(m)
    rgb_acc = np.zeros((m, 3))
    for b in scene.blobs:
        d2 = ((x - b.center_at(t)) ** 2).sum(axis=1)
        w = b.peak * np.exp(-d2 / (2.0 * b.radius**2))
        sigma += w
        rgb_acc += w[:, None] * b.color
    safe = np.maximum(sigma, SIGMA_EPS)
    rgb = np.where(sigma[:, None] < SIGMA_EPS, scene.background, rgb_acc / safe[:, None])
    return rgb, sigma


def oracle_render(
    scene: BlobScene, cam: Camera, t: float, n_samples: int = ORACLE_SAMPLES
) -> np.ndarray:
    """Ground-truth render with the model's own compositing code."""
    img = np.empty((cam.height, cam.width, 3))
    img[:] = scene.background
    cols, rows = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    pixels = np.stack([cols.reshape(-1), rows.reshape(-1)], axis=1)
    rays = generate_rays(cam, pixels)
    chunk = 4096
    for s in range(0, len(rays), chunk):
        e = min(s + chunk, len(rays))
        sub = RayBatch(rays.origins[s:e], rays.dirs[s:e], rays.near[s:e], rays.far[s:e], rays.pixels[s:e])
        samp = sample_points(sub, n_samples, stratified=False)
        mflat = (e - s) * n_samples
        rgb, sigma = oracle_field(scene, samp.positions.reshape(mflat, 3), t)
        pix, _, _ = composite(
            rgb.reshape(e - s, n_samples, 3), sigma.reshape(e - s, n_samples),
            samp.deltas, scene.background,
        )
        img[sub.pixels[:, 1], sub.pixels[:, 0]] = pix
    return np.clip(img, 0.0, 1.0)


def look_at_camera(position, target, width: int, height: int, focal_scale: float = 0.9) -> Camera:
    """Camera at `position` with -z aimed at `target`; world +z is up."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    fwd /= np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    # columns: camera x, y, z axes in world coordinates (camera looks along -z)
    rot = np.stack([right, true_up, -fwd], axis=1)
    return Camera(
        fx=focal_scale * width, fy=focal_scale * width,
        cx=width / 2.0, cy=height / 2.0,
        rotation=rot, translation=position, width=width, height=height,
    )


def hemisphere_rig(
    n_views: int, width: int, height: int, radius: float = 2.5,
    elevations_deg: tuple[float, float] = (20.0, 45.0),
) -> list[Camera]:
    """Two rings of evenly spaced azimuths at fixed radius from the cube center."""
    center = np.array([0.5, 0.5, 0.5])
    cams = []
    n_lower = (n_views + 1) // 2
    counts = [n_lower, n_views - n_lower]
    for ring, count in enumerate(counts):
        if count == 0:
            continue
        el = np.deg2rad(elevations_deg[ring])
        for k in range(count):
            az = 2.0 * np.pi * k / count + ring * np.pi / max(count, 1)
            pos = center + radius * np.array(
                [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
            )
            cams.append(look_at_camera(pos, center, width, height))
    return cams


@dataclass
class Dataset:
    """On-disk dataset handle; images are read lazily."""

    root: str
    cameras: list[Camera]
    n_frames: int
    width: int
    height: int
    train_views: list[int]
    test_views: list[int]
    _cache: dict = field(default_factory=dict, repr=False)

    def image_path(self, frame: int, view: int) -> str:
        return os.path.join(self.root, f"f{frame:04d}_v{view:02d}.ppm")

    def image(self, frame: int, view: int) -> np.ndarray:
        key = (frame, view)
        if key not in self._cache:
            self._cache[key] = read_ppm(self.image_path(frame, view))
        return self._cache[key]


def make_dataset(scene: BlobScene, cameras: list[Camera], out_dir, n_test_views: int = 4) -> Dataset:
    """Render frames x views to PPM, write poses + manifest; last views are the test split."""
    os.makedirs(out_dir, exist_ok=True)
    n_views = len(cameras)
    if n_test_views >= n_views:
        raise ConfigError("need at least one training view")
    for frame in range(scene.n_frames):
        t = scene.time_of(frame)
        for v, cam in enumerate(cameras):
            img = oracle_render(scene, cam, t)
            write_ppm(os.path.join(out_dir, f"f{frame:04d}_v{v:02d}.ppm"), img)
    with open(os.path.join(out_dir, "poses.txt"), "w") as f:
        for cam in cameras:
            pose = np.concatenate([cam.rotation, cam.translation[:, None]], axis=1)
            nums = [cam.fx, cam.fy, cam.cx, cam.cy, *pose.reshape(-1)]
            f.write(" ".join(f"{x:.17g}" for x in nums) + "\n")
    train = list(range(n_views - n_test_views))
    test = list(range(n_views - n_test_views, n_views))
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write(f"frames={scene.n_frames}\n")
        f.write(f"views={n_views}\n")
        f.write(f"width={cameras[0].width}\n")
        f.write(f"height={cameras[0].height}\n")
        f.write(f"train_views={','.join(map(str, train))}\n")
        f.write(f"test_views={','.join(map(str, test))}\n")
    return load_dataset(out_dir)


def load_dataset(root) -> Dataset:
    manifest_path = os.path.join(root, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise FormatError(f"no manifest.txt under {root}")
    kv = {}
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
    n_frames = int(kv["frames"])
    n_views = int(kv["views"])
    width = int(kv["width"])
    height = int(kv["height"])
    train = [int(x) for x in kv["train_views"].split(",") if x]
    test = [int(x) for x in kv["test_views"].split(",") if x]
    if set(train) & set(test):
        raise FormatError("train and test views overlap")
    cameras = []
    with open(os.path.join(root, "poses.txt")) as f:
        for line in f:
            nums = [float(x) for x in line.split()]
            if not nums:
                continue
            fx, fy, cx, cy = nums[:4]
            pose = np.array(nums[4:16]).reshape(3, 4)
            cameras.append(
                Camera(fx=fx, fy=fy, cx=cx, cy=cy, rotation=pose[:, :3],
                       translation=pose[:, 3], width=width, height=height)
            )
    if len(cameras) != n_views:
        raise FormatError(f"manifest says {n_views} views, poses file has {len(cameras)}")
    ds = Dataset(str(root), cameras, n_frames, width, height, train, test)
    missing = [
        ds.image_path(f, v)
        for f in range(n_frames)
        for v in range(n_views)
        if not os.path.exists(ds.image_path(f, v))
    ]
    if missing:
        raise FormatError(f"{len(missing)} dataset images missing, first: {missing[0]}")
    return ds
