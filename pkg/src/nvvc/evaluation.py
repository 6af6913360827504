"""Rate-distortion evaluation: per-stream metrics, BD-rate, bitrate allocation,
and the three-row step-by-step ablation harness."""

from __future__ import annotations

import lzma
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .codec import (
    FRAME_I, GofBitstream, decode_sequence, stream_bytes, write_frame, write_header,
)
from .errors import ConfigError, FormatError
from .rendering import FieldSet, psnr, render_image
from .scene import Dataset
from .training import EncodeTrace, TrainConfig, encode_sequence, train_iframe, build_ray_pool, load_pool_gt


@dataclass
class RdPoint:
    bits_per_frame: float
    psnr_train: float
    psnr_test: float


@dataclass
class RdCurve:
    label: str
    points: list[RdPoint]

    def rates(self) -> np.ndarray:
        return np.array([p.bits_per_frame for p in self.points])

    def quality(self, split: str = "test") -> np.ndarray:
        if split == "train":
            return np.array([p.psnr_train for p in self.points])
        return np.array([p.psnr_test for p in self.points])


@dataclass
class FrameEval:
    frame: int
    frame_type: int
    bits: int
    psnr_train: float
    psnr_test: float


def _mean_view_psnr(fieldset: FieldSet, dataset: Dataset, frame: int, views, n_samples, background) -> float:
    vals = []
    for v in views:
        img = render_image(fieldset, dataset.cameras[v], n_samples, background)
        vals.append(psnr(img, dataset.image(frame, v)))
    return float(np.mean(vals)) if vals else float("nan")


def eval_sequence(stream: GofBitstream, dataset: Dataset) -> tuple[RdPoint, list[FrameEval]]:
    """Decode and render every frame against train and test views.

    Mean bits/frame is the whole file (header included) divided by the frame
    count; per-frame rows carry each record's own bits.
    """
    h = stream.header
    if (h.width, h.height) != (dataset.width, dataset.height):
        raise FormatError(
            f"stream is {h.width}x{h.height}, dataset is {dataset.width}x{dataset.height}"
        )
    if h.frame_count > dataset.n_frames:
        raise FormatError(
            f"stream has {h.frame_count} frames, dataset only {dataset.n_frames}"
        )
    decoded = decode_sequence(stream)
    rows = []
    for frame, (ftype, fs) in enumerate(decoded):
        bits = 8 * stream.frames[frame].byte_length()
        tr = _mean_view_psnr(fs, dataset, frame, dataset.train_views, h.n_samples, h.background)
        te = _mean_view_psnr(fs, dataset, frame, dataset.test_views, h.n_samples, h.background)
        rows.append(FrameEval(frame, ftype, bits, tr, te))
    total_bits = 8 * stream_bytes(stream)
    point = RdPoint(
        bits_per_frame=total_bits / len(decoded),
        psnr_train=float(np.mean([r.psnr_train for r in rows])),
        psnr_test=float(np.mean([r.psnr_test for r in rows])),
    )
    return point, rows


# ---------------------------------------------------------------------------
# BD-rate


def bd_rate_values(
    anchor_rates, anchor_quality, test_rates, test_quality
) -> float:
    """Bjontegaard delta rate, percent; negative means the test curve is cheaper.

    Classic method: polynomial fit of log-rate over quality per curve (cubic
    when there are >= 4 points, else the highest determined degree), averaged
    over the overlapping quality interval.
    """
    ar = np.asarray(anchor_rates, dtype=np.float64)
    aq = np.asarray(anchor_quality, dtype=np.float64)
    tr = np.asarray(test_rates, dtype=np.float64)
    tq = np.asarray(test_quality, dtype=np.float64)
    for r, q in ((ar, aq), (tr, tq)):
        if r.size != q.size or r.size < 2:
            raise ConfigError("each curve needs >= 2 (rate, quality) points")
        if np.any(r <= 0):
            raise ConfigError("rates must be strictly positive")
    if min(ar.size, tr.size) < 4:
        warnings.warn("BD-rate on fewer than 4 points is poorly conditioned", stacklevel=2)
    lo = max(aq.min(), tq.min())
    hi = min(aq.max(), tq.max())
    if not hi > lo:
        raise ConfigError(f"no quality overlap between curves ([{aq.min()},{aq.max()}] vs [{tq.min()},{tq.max()}])")

    def integral(q, logr):
        deg = min(3, q.size - 1)
        poly = np.polyfit(q, logr, deg)
        anti = np.polyint(poly)
        return np.polyval(anti, hi) - np.polyval(anti, lo)

    diff = (integral(tq, np.log(tr)) - integral(aq, np.log(ar))) / (hi - lo)
    return float(100.0 * (np.exp(diff) - 1.0))


def bd_rate(anchor: RdCurve, test: RdCurve, split: str = "test") -> float:
    return bd_rate_values(
        anchor.rates(), anchor.quality(split), test.rates(), test.quality(split)
    )


# ---------------------------------------------------------------------------
# bitrate allocation


@dataclass
class AllocationReport:
    bytes_by_component: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.bytes_by_component.values())

    def percents(self) -> dict[str, float]:
        t = self.total
        return {k: 100.0 * v / t for k, v in self.bytes_by_component.items()}


def allocation_report(stream: GofBitstream) -> AllocationReport:
    """Byte share of metadata / MLP / coefficient payloads / basis payloads."""
    meta = len(write_header(stream.header))
    mlp_bytes = 0
    coef = 0
    basis = 0
    for rec in stream.frames:
        total = len(write_frame(rec))
        payloads = 0
        for t in rec.tensors:
            payloads += len(t.payload)
            if t.tensor_id == 0:
                coef += len(t.payload)
            else:
                basis += len(t.payload)
        m = 4 * rec.mlp_params.size if rec.mlp_params is not None else 0
        mlp_bytes += m
        meta += total - payloads - m
    return AllocationReport(
        {"meta": meta, "mlp": mlp_bytes, "coefficient": coef, "basis": basis}
    )


# ---------------------------------------------------------------------------
# ablation harness


@dataclass
class AblationRow:
    label: str
    bits_per_frame: float
    psnr_train: float
    psnr_test: float


def _fields_f32(coef, basis, net, dir_octaves) -> FieldSet:
    # the lossless pipeline stores float32, so evaluate what it stores
    from .grids import BasisPyramid, Grid3D

    c32 = Grid3D(coef.dims, coef.channels, coef.values.astype(np.float32).astype(np.float64))
    lv = [
        (Grid3D(g.dims, g.channels, g.values.astype(np.float32).astype(np.float64)), f)
        for g, f in basis.levels
    ]
    return FieldSet(c32, BasisPyramid(lv), net.roundtrip_f32(), dir_octaves)


def _baseline_row(dataset: Dataset, cfg: TrainConfig, n_frames: int) -> AblationRow:
    """Independent per-frame fields, packed losslessly (float32 + LZMA)."""
    pool = build_ray_pool(dataset.cameras, dataset.train_views, cfg.dir_octaves)
    total_bytes = 0
    tr, te = [], []
    for frame in range(n_frames):
        load_pool_gt(pool, dataset, frame)
        rng = np.random.default_rng([cfg.seed, frame])
        coef, basis, net, _, _ = train_iframe(pool, cfg, rng)
        blob = b"".join(
            [coef.values.astype(np.float32).tobytes()]
            + [g.values.astype(np.float32).tobytes() for g, _ in basis.levels]
            + [net.pack_f32().tobytes()]
        )
        total_bytes += len(lzma.compress(blob, preset=6))
        fs = _fields_f32(coef, basis, net, cfg.dir_octaves)
        tr.append(_mean_view_psnr(fs, dataset, frame, dataset.train_views, cfg.n_samples, cfg.background_color))
        te.append(_mean_view_psnr(fs, dataset, frame, dataset.test_views, cfg.n_samples, cfg.background_color))
    return AblationRow(
        "baseline", 8.0 * total_bytes / n_frames, float(np.mean(tr)), float(np.mean(te))
    )


def _coded_row(label: str, dataset: Dataset, cfg: TrainConfig) -> AblationRow:
    stream, _ = encode_sequence(dataset, cfg)
    point, _ = eval_sequence(stream, dataset)
    return AblationRow(label, point.bits_per_frame, point.psnr_train, point.psnr_test)


def ablation_run(dataset: Dataset, cfg: TrainConfig) -> list[AblationRow]:
    """Step-by-step table: baseline / + dynamic modeling / + joint optimization.

    Row 1 trains every frame independently and packs it losslessly; row 2 uses
    the dynamic (coefficient + residual) representation but trains without the
    quantization/rate terms and quantizes post hoc; row 3 is the full method.
    """
    n_frames = dataset.n_frames if cfg.frame_limit == 0 else min(cfg.frame_limit, dataset.n_frames)
    base_cfg = replace(cfg, rate_penalty=False, feature_noise=False)
    rows = [_baseline_row(dataset, base_cfg, n_frames)]
    posthoc_cfg = replace(cfg, rate_penalty=False, feature_noise=False, post_hoc_bits=10)
    rows.append(_coded_row("+ dynamic modeling", dataset, posthoc_cfg))
    rows.append(_coded_row("+ joint optimization", dataset, cfg))
    return rows


# ---------------------------------------------------------------------------
# CSV interchange

RD_CSV_HEADER = "rate_bits,psnr_train,psnr_test"


def write_rd_csv(path, curve: RdCurve) -> None:
    with open(path, "w") as f:
        f.write(RD_CSV_HEADER + "\n")
        for p in curve.points:
            f.write(f"{p.bits_per_frame:.17g},{p.psnr_train:.17g},{p.psnr_test:.17g}\n")


def read_rd_csv(path, label: str | None = None) -> RdCurve:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != RD_CSV_HEADER:
        raise FormatError(f"{path}: expected header {RD_CSV_HEADER!r}")
    pts = []
    for ln in lines[1:]:
        vals = ln.split(",")
        if len(vals) != 3:
            raise FormatError(f"{path}: bad row {ln!r}")
        pts.append(RdPoint(float(vals[0]), float(vals[1]), float(vals[2])))
    return RdCurve(label or str(path), pts)
