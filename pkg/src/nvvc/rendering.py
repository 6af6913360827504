"""Pinhole cameras, ray generation, stratified sampling, alpha compositing.

Images are float64 arrays of shape (H, W, 3) in [0, 1], row 0 at the top.
The scene volume is the unit cube; rays that miss it take the background
color and carry no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractError
from .grids import BasisPyramid, Grid3D, basis_sample, fuse, trilinear_sample
from .mlp import TinyMlp, encode_direction, mlp_eval

# rays per internal evaluation chunk; keeps MLP matmul buffers cache-resident
RENDER_CHUNK_RAYS = 512

WHITE = np.array([1.0, 1.0, 1.0])
BLACK = np.array([0.0, 0.0, 0.0])


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # 3x3, world-from-camera
    translation: np.ndarray  # camera center in world coordinates
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise ConfigError("camera rotation is not orthonormal")


@dataclass
class RayBatch:
    origins: np.ndarray  # (k,3)
    dirs: np.ndarray  # (k,3) unit
    near: np.ndarray  # (k,)
    far: np.ndarray  # (k,)
    pixels: np.ndarray  # (k,2) integer (col, row)

    def __len__(self) -> int:
        return self.origins.shape[0]


@dataclass
class SampleBatch:
    t: np.ndarray  # (k,n) distances along each ray, strictly increasing
    positions: np.ndarray  # (k,n,3)
    deltas: np.ndarray  # (k,n); last entry is far - t[:, -1]


@dataclass
class FieldSet:
    """A renderable frame: coefficient grid, basis pyramid, decoder MLP."""

    coef: Grid3D
    basis: BasisPyramid
    mlp: TinyMlp
    dir_octaves: int


def intersect_unit_cube(origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test against [0,1]^3. Returns (hit mask, near, far); near >= 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (0.0 - origins) * inv
        t1 = (1.0 - origins) * inv
    # axis-parallel rays: replace nan (0 * inf) by +-inf consistent with inside/outside
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    par = dirs == 0.0
    inside = (origins >= 0.0) & (origins <= 1.0)
    lo[par] = np.where(inside[par], -np.inf, np.inf)
    hi[par] = np.where(inside[par], np.inf, -np.inf)
    near = lo.max(axis=1)
    far = hi.min(axis=1)
    near = np.maximum(near, 0.0)
    hit = far > near
    return hit, near, far


def generate_rays(cam: Camera, pixels: np.ndarray) -> RayBatch:
    """Rays through the given (col, row) pixel centers; misses are dropped."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.int64))
    if np.any(pixels[:, 0] >= cam.width) or np.any(pixels[:, 1] >= cam.height) or np.any(pixels < 0):
        raise ConfigError("pixel index outside image bounds")
    u = (pixels[:, 0] + 0.5 - cam.cx) / cam.fx
    v = -(pixels[:, 1] + 0.5 - cam.cy) / cam.fy
    d_cam = np.stack([u, v, -np.ones_like(u)], axis=1)
    d_world = d_cam @ cam.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.translation, d_world.shape).copy()
    hit, near, far = intersect_unit_cube(origins, d_world)
    return RayBatch(
        origins=origins[hit],
        dirs=d_world[hit],
        near=near[hit],
        far=far[hit],
        pixels=pixels[hit],
    )


def sample_points(
    rays: RayBatch, n: int, stratified: bool, rng: np.random.Generator | None = None
) -> SampleBatch:
    """n samples per ray: bin midpoints, or one uniform draw per bin if stratified."""
    if n < 1:
        raise ConfigError(f"need at least one sample per ray, got {n}")
    k = len(rays)
    span = (rays.far - rays.near)[:, None]
    if stratified:
        if rng is None:
            raise ConfigError("stratified sampling needs a random generator")
        u = rng.random((k, n))
    else:
        u = np.full((k, n), 0.5)
    t = rays.near[:, None] + span * (np.arange(n) + u) / n
    positions = rays.origins[:, None, :] + t[:, :, None] * rays.dirs[:, None, :]
    deltas = np.empty_like(t)
    deltas[:, :-1] = np.diff(t, axis=1)
    deltas[:, -1] = rays.far - t[:, -1]
    return SampleBatch(t=t, positions=positions, deltas=deltas)


def composite(
    colors: np.ndarray, sigmas: np.ndarray, deltas: np.ndarray, background: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Alpha-composite samples front to back.

    Returns (pixel colors (k,3), per-sample weights (k,n), residual
    transmittance after the last sample (k,)); the pixel color includes the
    background weighted by that residual transmittance.
    """
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    sigmas = np.ascontiguousarray(sigmas, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    if not (colors.shape[:2] == sigmas.shape == deltas.shape):
        raise ConfigError(
            f"length mismatch: colors {colors.shape}, sigmas {sigmas.shape}, deltas {deltas.shape}"
        )
    if np.any(sigmas < 0.0) or np.any(deltas < 0.0):
        raise ContractError("negative density or spacing")
    k, n = sigmas.shape
    pix = np.empty((k, 3))
    weights = np.empty((k, n))
    t_end = np.empty(k)
    bg = np.ascontiguousarray(background, dtype=np.float64)
    _kernels.composite_fwd(colors, sigmas, deltas, bg, pix, weights, t_end)
    return pix, weights, t_end


def composite_bwd(
    colors: np.ndarray,
    sigmas: np.ndarray,
    deltas: np.ndarray,
    background: np.ndarray,
    dpix: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of composite wrt sample colors and densities."""
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    sigmas = np.ascontiguousarray(sigmas, dtype=np.float64)
    deltas = np.ascontiguousarray(deltas, dtype=np.float64)
    dpix = np.ascontiguousarray(dpix, dtype=np.float64)
    dcolors = np.empty_like(colors)
    dsigmas = np.empty_like(sigmas)
    bg = np.ascontiguousarray(background, dtype=np.float64)
    _kernels.composite_bwd(colors, sigmas, deltas, bg, dpix, dcolors, dsigmas)
    return dcolors, dsigmas


def eval_points(fields: FieldSet, positions: np.ndarray, dirs_per_point: np.ndarray):
    """(rgb, sigma) of the radiance field at flat (m,3) points, no noise."""
    cf = trilinear_sample(fields.coef, positions)
    bf = basis_sample(fields.basis, positions)
    fused = fuse(cf, bf)
    enc = encode_direction(dirs_per_point, fields.dir_octaves)
    rgb, sigma, _ = mlp_eval(fields.mlp, fused, enc)
    return rgb, sigma


def render_rays(
    fields: FieldSet, rays: RayBatch, n_samples: int, background: np.ndarray
) -> np.ndarray:
    """Deterministic (midpoint-sampled) colors for a ray batch, chunked internally."""
    k = len(rays)
    out = np.empty((k, 3))
    for s in range(0, k, RENDER_CHUNK_RAYS):
        e = min(s + RENDER_CHUNK_RAYS, k)
        sub = RayBatch(rays.origins[s:e], rays.dirs[s:e], rays.near[s:e], rays.far[s:e], rays.pixels[s:e])
        samp = sample_points(sub, n_samples, stratified=False)
        m = e - s
        flat_pos = samp.positions.reshape(m * n_samples, 3)
        flat_dirs = np.repeat(sub.dirs, n_samples, axis=0)
        rgb, sigma, _ = _eval_chunk(fields, flat_pos, flat_dirs)
        pix, _, _ = composite(
            rgb.reshape(m, n_samples, 3), sigma.reshape(m, n_samples), samp.deltas, background
        )
        out[s:e] = pix
    return out


def _eval_chunk(fields: FieldSet, positions: np.ndarray, dirs: np.ndarray):
    cf = trilinear_sample(fields.coef, positions)
    bf = basis_sample(fields.basis, positions)
    fused = fuse(cf, bf)
    enc = encode_direction(dirs, fields.dir_octaves)
    return mlp_eval(fields.mlp, fused, enc)


def render_image(fields: FieldSet, cam: Camera, n_samples: int, background: np.ndarray) -> np.ndarray:
    """Full-frame deterministic render; rays missing the volume get background."""
    img = np.empty((cam.height, cam.width, 3))
    img[:] = background
    cols, rows = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    pixels = np.stack([cols.reshape(-1), rows.reshape(-1)], axis=1)
    rays = generate_rays(cam, pixels)
    if len(rays):
        pix = render_rays(fields, rays, n_samples, background)
        img[rays.pixels[:, 1], rays.pixels[:, 0]] = pix
    return np.clip(img, 0.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-peak images, capped at 99 dB."""
    if a.shape != b.shape:
        raise ConfigError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 1e-10:
        return 99.0
    return min(10.0 * np.log10(1.0 / mse), 99.0)


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P6, maxval 255; real -> byte is round(255*v) clamped."""
    img = np.asarray(img)
    h, w, c = img.shape
    if c != 3:
        raise ConfigError(f"PPM wants 3 channels, got {c}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    fields = []
    pos = 0
    # header: magic, width, height, maxval, separated by whitespace/comments
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ConfigError(f"not a binary PPM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ConfigError(f"unsupported maxval {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0
