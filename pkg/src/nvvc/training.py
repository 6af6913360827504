"""Per-frame rate-distortion optimization and the GOF encode loop.

I-frames train coefficient grid + basis pyramid + MLP from scratch; P-frames
train coefficient grid + residual pyramid against the frozen decoded basis and
frozen MLP.  The objective per batch of rays is

    sum_r ||C(r) - C_hat(r)||^2  +  (lambda1 * B) * L_rate  +  (lambda2 * B) * L_reg

with L_rate the mean bits/entry of the noisy-quantized tensor bundle and
L_reg the residual L1.  The distortion is the plain sum over the batch, so
both lambda weights are rescaled by the batch size B to keep the trade-off
independent of batching.

The encoder always conditions on decoded state: after each frame is entropy
coded it is decoded back, and the decoded basis/MLP are what the next frame
trains against, so encoder and decoder buffers can never drift.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels
from .codec import (
    FRAME_I, FRAME_P, TENSOR_BASIS0, TENSOR_COEF,
    FrameRecord, GofBitstream, StreamHeader, encode_tensor,
)
from .errors import ConfigError
from .grids import BasisPyramid, Grid3D, ResidualPyramid
from .mlp import TinyMlp, direction_encoding_width, encode_direction, mlp_eval, mlp_eval_bwd
from .rate import LaplaceModel, RateTensor, rate_loss
from .rendering import BLACK, WHITE, Camera, FieldSet, generate_rays
from .scene import Dataset

TRAIN_CHUNK_RAYS = 512


@dataclass
class TrainConfig:
    """Training/encoding knobs; readable from key=value files, overridable via CLI."""

    lambda1: float = 0.0001
    lambda2: float = 0.0001
    gof_length: int = 20
    iters_iframe: int = 4000
    iters_pframe: int = 1500
    rays_per_batch: int = 4096
    n_samples: int = 64
    lr_grids: float = 0.02
    lr_mlp: float = 0.001
    lr_laplace: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-15
    seed: int = 0
    warm_start: bool = True
    background: str = "white"
    coef_size: int = 64
    coef_channels: int = 12
    basis_sizes: tuple[int, ...] = (16, 24, 32)
    basis_channels: int = 4
    basis_freqs: tuple[int, ...] = (2, 4, 8)
    dir_octaves: int = 2
    mlp_hidden: tuple[int, ...] = (64, 64)
    coef_init_mean: float = 1.0
    coef_init_std: float = 0.25
    basis_init_std: float = 0.5
    frame_limit: int = 0  # 0 = encode every dataset frame
    # joint-optimization switches (the ablation harness disables them)
    feature_noise: bool = True
    rate_penalty: bool = True
    # > 0: ignore the trained entropy models and quantize post hoc with a
    # per-tensor step spanning the value range in 2^post_hoc_bits levels,
    # fitting (mu, b) to the quantized symbols (ablation row 2)
    post_hoc_bits: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda weights must be >= 0")
        if self.gof_length < 1:
            raise ConfigError("gof_length must be >= 1")
        if len(self.basis_sizes) != len(self.basis_freqs):
            raise ConfigError("basis_sizes and basis_freqs must align")
        if self.background not in ("white", "black"):
            raise ConfigError(f"background must be white or black, got {self.background}")

    @property
    def background_color(self) -> np.ndarray:
        return WHITE if self.background == "white" else BLACK

    @property
    def fused_channels(self) -> int:
        return self.coef_channels

    @property
    def mlp_input_width(self) -> int:
        return self.fused_channels + direction_encoding_width(self.dir_octaves)

    def validate_shapes(self) -> None:
        total = self.basis_channels * len(self.basis_sizes)
        if total != self.coef_channels:
            raise ConfigError(
                f"basis channels total {total} must equal coefficient channels "
                f"{self.coef_channels} (features are fused elementwise)"
            )


_TUPLE_FIELDS = {"basis_sizes", "basis_freqs", "mlp_hidden"}
_BOOL_FIELDS = {"warm_start", "feature_noise", "rate_penalty"}


def _convert(name: str, value: str):
    if name in _TUPLE_FIELDS:
        return tuple(int(x) for x in value.split(",") if x.strip())
    if name in _BOOL_FIELDS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {name}: {value!r}")
    if name == "background":
        return value
    if name in ("gof_length", "iters_iframe", "iters_pframe", "rays_per_batch",
                "n_samples", "seed", "coef_size", "coef_channels", "basis_channels",
                "dir_octaves", "frame_limit", "post_hoc_bits"):
        return int(value)
    return float(value)


def load_config(path=None, overrides: dict[str, str] | None = None) -> TrainConfig:
    """key=value config file (# comments), then overrides on top."""
    known = {f.name for f in fields(TrainConfig)}
    kv: dict = {}
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                k, v = (s.strip() for s in line.split("=", 1))
                if k not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {k!r}")
                kv[k] = _convert(k, v)
    for k, v in (overrides or {}).items():
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        kv[k] = _convert(k, v) if isinstance(v, str) else v
    cfg = TrainConfig(**kv)
    cfg.validate_shapes()
    return cfg


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def create(cls, params: list[np.ndarray], beta1: float, beta2: float, eps: float) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            0, beta1, beta2, eps,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected adaptive-moment update, in place."""
    if len(params) != len(grads):
        raise ConfigError("params and grads length mismatch")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ConfigError(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# ray pool


@dataclass
class RayPool:
    origins: np.ndarray
    dirs: np.ndarray
    near: np.ndarray
    far: np.ndarray
    enc: np.ndarray  # per-ray direction encoding
    pixels: np.ndarray  # (n,2)
    view_slices: list[tuple[int, slice]]  # (view id, pool slice)
    gt: np.ndarray  # (n,3), refreshed per frame

    @property
    def n(self) -> int:
        return self.origins.shape[0]


def build_ray_pool(cameras: list[Camera], views: list[int], dir_octaves: int) -> RayPool:
    """All cube-hitting rays of the given views; ground truth filled later."""
    parts = []
    view_slices = []
    start = 0
    for v in views:
        cam = cameras[v]
        cols, rows = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        pixels = np.stack([cols.reshape(-1), rows.reshape(-1)], axis=1)
        rb = generate_rays(cam, pixels)
        parts.append(rb)
        view_slices.append((v, slice(start, start + len(rb))))
        start += len(rb)
    origins = np.concatenate([p.origins for p in parts])
    dirs = np.concatenate([p.dirs for p in parts])
    return RayPool(
        origins=origins,
        dirs=dirs,
        near=np.concatenate([p.near for p in parts]),
        far=np.concatenate([p.far for p in parts]),
        enc=encode_direction(dirs, dir_octaves),
        pixels=np.concatenate([p.pixels for p in parts]),
        view_slices=view_slices,
        gt=np.zeros((start, 3)),
    )


def load_pool_gt(pool: RayPool, dataset: Dataset, frame: int) -> None:
    for v, sl in pool.view_slices:
        img = dataset.image(frame, v)
        pix = pool.pixels[sl]
        pool.gt[sl] = img[pix[:, 1], pix[:, 0]]


# ---------------------------------------------------------------------------
# loss


def total_loss(
    rendered: np.ndarray,
    ground_truth: np.ndarray,
    bundle: list[RateTensor],
    residual: ResidualPyramid | None,
    cfg: TrainConfig,
    rng: np.random.Generator,
):
    """Objective value with its parts and the direct gradients of each term.

    Returns (value, parts, dpix, rate_grads, reg_grads); parts holds the
    distortion sum, the raw rate bits/entry, and the raw residual L1 so the
    composition  value = distortion + lam1*B*rate + lam2*B*reg  can be checked
    term by term.
    """
    if rendered.shape != ground_truth.shape:
        raise ConfigError("rendered/ground truth shape mismatch")
    nrays = rendered.shape[0]
    diff = rendered - ground_truth
    distortion = float((diff**2).sum())
    dpix = 2.0 * diff
    rate_bits, rate_grads = (0.0, None)
    if cfg.rate_penalty and cfg.lambda1 > 0 and bundle:
        rate_bits, rate_grads = rate_loss(bundle, rng)
    reg = 0.0
    reg_grads = None
    if residual is not None:
        reg = sum(float(np.abs(g.values).sum()) for g in residual.levels)
        reg_grads = [np.sign(g.values) for g in residual.levels]
    value = distortion + cfg.lambda1 * nrays * rate_bits + cfg.lambda2 * nrays * reg
    parts = {"distortion": distortion, "rate_bits": rate_bits, "reg": reg}
    return value, parts, dpix, rate_grads, reg_grads


# ---------------------------------------------------------------------------
# per-frame training


def _init_fields(cfg: TrainConfig, rng: np.random.Generator):
    n = cfg.coef_size
    coef = Grid3D(
        (n, n, n), cfg.coef_channels,
        rng.normal(cfg.coef_init_mean, cfg.coef_init_std, size=(n, n, n, cfg.coef_channels)),
    )
    levels = []
    for size, freq in zip(cfg.basis_sizes, cfg.basis_freqs):
        g = Grid3D(
            (size, size, size), cfg.basis_channels,
            rng.normal(0.0, cfg.basis_init_std, size=(size, size, size, cfg.basis_channels)),
        )
        levels.append((g, freq))
    return coef, BasisPyramid(levels)


def _fresh_models(names: list[str]) -> list[LaplaceModel]:
    return [LaplaceModel(n) for n in names]


@dataclass
class _Problem:
    """One frame's trainable state plus everything the iteration loop needs."""

    cfg: TrainConfig
    pool: RayPool
    coef: Grid3D
    mlp: TinyMlp
    train_mlp: bool
    # I-frame: `opt_levels` are the basis grids themselves (freq-paired);
    # P-frame: they are the residual grids, and sampling sees buffer + residual.
    opt_levels: list[Grid3D]
    level_freqs: list[int]
    buffer_levels: list[Grid3D] | None
    models: list[LaplaceModel]  # coef first, then per level
    metrics: dict = field(default_factory=lambda: {"loss": [], "distortion": [], "rate_bits": [], "reg": []})

    def sample_levels(self) -> list[np.ndarray]:
        if self.buffer_levels is None:
            return [g.values for g in self.opt_levels]
        return [b.values + r.values for b, r in zip(self.buffer_levels, self.opt_levels)]


def batch_loss_and_grads(prob: _Problem, idx: np.ndarray, u: np.ndarray, rng: np.random.Generator):
    """Forward + hand-derived backward over one ray batch.

    `idx` selects pool rays, `u` holds the per-bin stratification draws, and
    `rng` supplies the feature/rate quantization noise, so the whole loss is a
    deterministic function of (parameters, idx, u, noise stream): exactly what
    a finite-difference check needs.

    Returns (parts, grads) where parts has the loss and its terms, and grads
    maps "coef" / "levels" / "mlp" / "laplace" to gradient arrays (levels are
    the basis on I-frames, the residual on P-frames).
    """
    cfg = prob.cfg
    nsamp = cfg.n_samples
    nrays = idx.shape[0]
    cch = prob.coef.channels
    bch = sum(g.channels for g in prob.opt_levels)
    bg = cfg.background_color
    coef_flat = prob.coef.values.reshape(-1)
    level_dims = [g.dims for g in prob.opt_levels]
    level_ch = [g.channels for g in prob.opt_levels]
    lam1_eff = cfg.lambda1 * nrays if cfg.rate_penalty else 0.0
    lam2_eff = cfg.lambda2 * nrays
    nx, ny, nz = prob.coef.dims

    sample_vals = prob.sample_levels()
    coef_grad = np.zeros(prob.coef.values.size)
    level_grads = [np.zeros(g.values.size) for g in prob.opt_levels]
    mlp_grads = [np.zeros_like(p) for p in prob.mlp.parameters()] if prob.train_mlp else []
    dist_sum = 0.0

    for c0 in range(0, nrays, TRAIN_CHUNK_RAYS):
        c1 = min(c0 + TRAIN_CHUNK_RAYS, nrays)
        ridx = idx[c0:c1]
        m = c1 - c0
        near = prob.pool.near[ridx]
        span = prob.pool.far[ridx] - near
        t = near[:, None] + span[:, None] * (np.arange(nsamp) + u[c0:c1]) / nsamp
        deltas = np.empty_like(t)
        deltas[:, :-1] = np.diff(t, axis=1)
        deltas[:, -1] = prob.pool.far[ridx] - t[:, -1]
        pos = (
            prob.pool.origins[ridx][:, None, :]
            + t[:, :, None] * prob.pool.dirs[ridx][:, None, :]
        ).reshape(m * nsamp, 3)
        pos = np.ascontiguousarray(pos)

        cf = np.empty((m * nsamp, cch))
        _kernels.tri_gather(coef_flat, nx, ny, nz, cch, pos, 0, cf)
        bf = np.empty((m * nsamp, bch))
        cstart = 0
        for vals, dims, ch, freq in zip(sample_vals, level_dims, level_ch, prob.level_freqs):
            _kernels.tri_gather(
                vals.reshape(-1), dims[0], dims[1], dims[2], ch, pos, freq,
                bf[:, cstart : cstart + ch],
            )
            cstart += ch
        if cfg.feature_noise:
            cf += rng.random((m * nsamp, cch)) - 0.5
            bf += rng.random((m * nsamp, bch)) - 0.5
        fused = cf * bf
        enc = np.repeat(prob.pool.enc[ridx], nsamp, axis=0)
        rgb, sigma, cache = mlp_eval(prob.mlp, fused, enc)

        colors = rgb.reshape(m, nsamp, 3)
        sigmas = sigma.reshape(m, nsamp)
        pix = np.empty((m, 3))
        weights = np.empty((m, nsamp))
        t_end = np.empty(m)
        _kernels.composite_fwd(colors, sigmas, deltas, bg, pix, weights, t_end)

        diff = pix - prob.pool.gt[ridx]
        dist_sum += float((diff**2).sum())
        dpix = 2.0 * diff
        dcolors = np.empty_like(colors)
        dsigmas = np.empty_like(sigmas)
        _kernels.composite_bwd(colors, sigmas, deltas, bg, dpix, dcolors, dsigmas)

        layer_grads, dfused = mlp_eval_bwd(
            prob.mlp, cache, dcolors.reshape(m * nsamp, 3), dsigmas.reshape(m * nsamp),
            want_params=prob.train_mlp,
        )
        if prob.train_mlp:
            for acc, g in zip(mlp_grads, layer_grads):
                acc += g
        dcf = dfused * bf
        dbf = dfused * cf
        _kernels.tri_scatter(coef_grad, nx, ny, nz, cch, pos, 0, dcf)
        cstart = 0
        for lg, dims, ch, freq in zip(level_grads, level_dims, level_ch, prob.level_freqs):
            _kernels.tri_scatter(
                lg, dims[0], dims[1], dims[2], ch, pos, freq,
                np.ascontiguousarray(dbf[:, cstart : cstart + ch]),
            )
            cstart += ch

    rate_bits = 0.0
    lap_grads = [np.zeros(1) for _ in range(2 * len(prob.models))]
    if lam1_eff > 0.0:
        bundle = [RateTensor("coef", prob.coef.values, prob.models[0])] + [
            RateTensor(f"level{i}", g.values, prob.models[1 + i])
            for i, g in enumerate(prob.opt_levels)
        ]
        rate_bits, rg = rate_loss(bundle, rng)
        coef_grad += lam1_eff * rg.d_values[0].reshape(-1)
        for lg, dv in zip(level_grads, rg.d_values[1:]):
            lg += lam1_eff * dv.reshape(-1)
        for i, model in enumerate(prob.models):
            lap_grads[2 * i][0] = lam1_eff * rg.d_mu[i]
            lap_grads[2 * i + 1][0] = lam1_eff * rg.d_b[i] * model.b

    reg = 0.0
    if prob.buffer_levels is not None and lam2_eff > 0.0:
        for g, lg in zip(prob.opt_levels, level_grads):
            reg += float(np.abs(g.values).sum())
            lg += lam2_eff * np.sign(g.values).reshape(-1)

    parts = {
        "loss": dist_sum + lam1_eff * rate_bits + lam2_eff * reg,
        "distortion": dist_sum,
        "rate_bits": rate_bits,
        "reg": reg,
    }
    grads = {
        "coef": coef_grad.reshape(prob.coef.values.shape),
        "levels": [lg.reshape(g.values.shape) for lg, g in zip(level_grads, prob.opt_levels)],
        "mlp": mlp_grads,
        "laplace": lap_grads,
    }
    return parts, grads


def _run_iterations(prob: _Problem, iters: int, rng: np.random.Generator) -> None:
    cfg = prob.cfg
    grid_params = [prob.coef.values] + [g.values for g in prob.opt_levels]
    grid_state = AdamState.create(grid_params, cfg.beta1, cfg.beta2, cfg.eps)
    if prob.train_mlp:
        mlp_params = prob.mlp.parameters()
        mlp_state = AdamState.create(mlp_params, cfg.beta1, cfg.beta2, cfg.eps)
    lap_params = []
    for m in prob.models:
        lap_params.extend([m.mu, m.log_b])
    lap_state = AdamState.create(lap_params, cfg.beta1, cfg.beta2, cfg.eps)
    rate_on = cfg.rate_penalty and cfg.lambda1 > 0.0

    for _ in range(iters):
        idx = rng.integers(0, prob.pool.n, size=cfg.rays_per_batch)
        u = rng.random((cfg.rays_per_batch, cfg.n_samples))
        parts, grads = batch_loss_and_grads(prob, idx, u, rng)

        adam_step(grid_params, [grads["coef"]] + grads["levels"], grid_state, cfg.lr_grids)
        if prob.train_mlp:
            adam_step(mlp_params, grads["mlp"], mlp_state, cfg.lr_mlp)
        if rate_on:
            adam_step(lap_params, grads["laplace"], lap_state, cfg.lr_laplace)
            for model in prob.models:
                model.clamp()

        for key in ("loss", "distortion", "rate_bits", "reg"):
            prob.metrics[key].append(parts[key])


def train_iframe(pool: RayPool, cfg: TrainConfig, rng: np.random.Generator):
    """Fit coefficient + basis + MLP on the pooled frame rays.

    Returns (coef, basis, mlp, laplace models, metrics).
    """
    if pool.n == 0:
        raise ConfigError("no training rays (no views?)")
    cfg.validate_shapes()
    coef, basis = _init_fields(cfg, rng)
    net = TinyMlp.create(cfg.mlp_input_width, cfg.mlp_hidden, rng)
    models = _fresh_models(["coef"] + [f"basis{i}" for i in range(len(basis.levels))])
    prob = _Problem(
        cfg=cfg, pool=pool, coef=coef, mlp=net, train_mlp=True,
        opt_levels=[g for g, _ in basis.levels],
        level_freqs=[f for _, f in basis.levels],
        buffer_levels=None, models=models,
    )
    _run_iterations(prob, cfg.iters_iframe, rng)
    return coef, basis, net, models, prob.metrics


def train_pframe(
    pool: RayPool,
    buffer_basis: BasisPyramid,
    buffer_mlp: TinyMlp,
    cfg: TrainConfig,
    rng: np.random.Generator,
    init_coef: Grid3D | None = None,
):
    """Fit coefficient + residual against the frozen decoded basis and MLP.

    Returns (coef, residual, laplace models, metrics).
    """
    if pool.n == 0:
        raise ConfigError("no training rays (no views?)")
    cfg.validate_shapes()
    if init_coef is not None and cfg.warm_start:
        coef = init_coef.copy()
    else:
        coef, _ = _init_fields(cfg, rng)
    residual = ResidualPyramid.zeros_like(buffer_basis)
    models = _fresh_models(["coef"] + [f"residual{i}" for i in range(len(residual.levels))])
    prob = _Problem(
        cfg=cfg, pool=pool, coef=coef, mlp=buffer_mlp, train_mlp=False,
        opt_levels=residual.levels,
        level_freqs=[f for _, f in buffer_basis.levels],
        buffer_levels=[g for g, _ in buffer_basis.levels],
        models=models,
    )
    _run_iterations(prob, cfg.iters_pframe, rng)
    return coef, residual, models, prob.metrics


# ---------------------------------------------------------------------------
# sequence encoding


def _sha(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def _encode_grid(values: np.ndarray, tensor_id: int, model: LaplaceModel, cfg: TrainConfig):
    """Entropy-code one tensor under the configured quantization policy."""
    if cfg.post_hoc_bits <= 0:
        return encode_tensor(values, tensor_id, model.mean, model.b)
    lo, hi = float(values.min()), float(values.max())
    step = (hi - lo) / (2**cfg.post_hoc_bits - 1) if hi > lo else 1.0
    v = values / step
    q = np.where(v >= 0, np.floor(v + 0.5), np.ceil(v - 0.5))
    mu = float(np.median(q))
    b = max(float(np.mean(np.abs(q - mu))), 1e-6)
    return encode_tensor(values, tensor_id, mu, b, step=step)


@dataclass
class EncodeTrace:
    """Encoder-side decoded-state fingerprints, for drift checks."""

    buffer_basis_hashes: list[list[str]] = field(default_factory=list)  # per frame, per level
    coef_hashes: list[str] = field(default_factory=list)
    mlp_hashes: list[str] = field(default_factory=list)
    frame_types: list[int] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    trained_fields: list = field(default_factory=list)  # optional raw FieldSets


def encode_sequence(
    dataset: Dataset, cfg: TrainConfig, keep_trained_fields: bool = False,
    progress=None,
) -> tuple[GofBitstream, EncodeTrace]:
    """Train and entropy-code every frame, I-frame each gof_length frames."""
    cfg.validate_shapes()
    n_frames = dataset.n_frames if cfg.frame_limit == 0 else min(cfg.frame_limit, dataset.n_frames)
    pool = build_ray_pool(dataset.cameras, dataset.train_views, cfg.dir_octaves)
    header = StreamHeader(
        gof_length=cfg.gof_length, frame_count=n_frames,
        width=dataset.width, height=dataset.height,
        n_samples=cfg.n_samples, dir_octaves=cfg.dir_octaves,
        background=cfg.background_color.astype(np.float32),
        coef_dims=(cfg.coef_size,) * 3, coef_channels=cfg.coef_channels,
        level_dims=[(s, s, s) for s in cfg.basis_sizes],
        level_channels=[cfg.basis_channels] * len(cfg.basis_sizes),
        level_freqs=list(cfg.basis_freqs),
        mlp_input_width=cfg.mlp_input_width, mlp_hidden=tuple(cfg.mlp_hidden),
    )
    records: list[FrameRecord] = []
    trace = EncodeTrace()
    buffer_basis: BasisPyramid | None = None
    buffer_mlp: TinyMlp | None = None
    prev_coef: Grid3D | None = None

    for frame in range(n_frames):
        load_pool_gt(pool, dataset, frame)
        rng = np.random.default_rng([cfg.seed, frame])
        is_iframe = frame % cfg.gof_length == 0
        if is_iframe:
            coef, basis, net, models, metrics = train_iframe(pool, cfg, rng)
            tensors = []
            rec_c, dec_c = _encode_grid(coef.values, TENSOR_COEF, models[0], cfg)
            tensors.append(rec_c)
            dec_levels = []
            for i, (g, freq) in enumerate(basis.levels):
                rec_b, dec_b = _encode_grid(g.values, TENSOR_BASIS0 + i, models[1 + i], cfg)
                tensors.append(rec_b)
                dec_levels.append(Grid3D(g.dims, g.channels, dec_b))
            mlp_raw = net.pack_f32()
            records.append(FrameRecord(FRAME_I, tensors, mlp_raw))
            buffer_basis = BasisPyramid(
                [(g, f) for g, f in zip(dec_levels, cfg.basis_freqs)]
            )
            buffer_mlp = net.roundtrip_f32()
            prev_coef = coef
        else:
            if buffer_basis is None or buffer_mlp is None:
                raise ConfigError("P-frame scheduled before any I-frame")
            coef, residual, models, metrics = train_pframe(
                pool, buffer_basis, buffer_mlp, cfg, rng, init_coef=prev_coef
            )
            tensors = []
            rec_c, dec_c = _encode_grid(coef.values, TENSOR_COEF, models[0], cfg)
            tensors.append(rec_c)
            dec_levels = []
            for i, g in enumerate(residual.levels):
                rec_r, dec_r = _encode_grid(g.values, TENSOR_BASIS0 + i, models[1 + i], cfg)
                tensors.append(rec_r)
                dec_levels.append(Grid3D(g.dims, g.channels, dec_r))
            records.append(FrameRecord(FRAME_P, tensors))
            buffer_basis = BasisPyramid(
                [
                    (Grid3D(b.dims, b.channels, b.values + r.values), f)
                    for (b, f), r in zip(buffer_basis.levels, dec_levels)
                ]
            )
            prev_coef = coef
        trace.frame_types.append(FRAME_I if is_iframe else FRAME_P)
        trace.buffer_basis_hashes.append([_sha(g.values) for g, _ in buffer_basis.levels])
        trace.coef_hashes.append(_sha(dec_c))
        trace.mlp_hashes.append(_sha(buffer_mlp.pack_f32()))
        trace.metrics.append(metrics)
        if keep_trained_fields:
            trace.trained_fields.append(
                FieldSet(
                    Grid3D(coef.dims, coef.channels, dec_c),
                    buffer_basis, buffer_mlp, cfg.dir_octaves,
                )
            )
        if progress is not None:
            progress(frame, n_frames, metrics)
    return GofBitstream(header, records), trace
