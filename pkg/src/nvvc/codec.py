"""Quantization, Laplace-driven range coding, and the GOF bitstream container.

The on-disk layout (magic "NVVC", little-endian throughout) is documented
field by field in FORMAT.md.  Frequency tables are rebuilt at decode time
from the float32 (mu, b) stored in each tensor record through the exact same
code path as the encoder, so both sides always agree.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _rangecoder
from .errors import ConfigError, DecodeError, FormatError, RangeError
from .grids import BasisPyramid, Grid3D, ResidualPyramid, apply_residual
from .mlp import TinyMlp
from .rate import B_MIN, LaplaceModel, pmf
from .rendering import FieldSet

MAGIC = b"NVVC"
VERSION = 1
FREQ_TOTAL = 1 << 16
MAX_SYMBOLS = 1 << 16
QUANT_LIMIT = 1 << 30

FRAME_I = 0
FRAME_P = 1

# tensor ids inside a frame record
TENSOR_COEF = 0
TENSOR_BASIS0 = 1  # basis (I) / residual (P) level i is id 1 + i


@dataclass
class QuantizedGrid:
    dims: tuple[int, int, int]
    channels: int
    values: np.ndarray  # int32, shaped (nx, ny, nz, channels)
    vmin: int
    vmax: int
    step: float = 1.0


def quantize(grid: Grid3D, step: float = 1.0) -> QuantizedGrid:
    """Round half away from zero at the given step; records empirical bounds."""
    v = grid.values / step if step != 1.0 else grid.values
    if not np.all(np.isfinite(v)):
        raise RangeError("non-finite grid values")
    if np.any(np.abs(v) > QUANT_LIMIT):
        raise RangeError("grid values exceed 2^30 quantization range (diverged?)")
    q = np.where(v >= 0, np.floor(v + 0.5), np.ceil(v - 0.5)).astype(np.int32)
    return QuantizedGrid(
        grid.dims, grid.channels, q, int(q.min()), int(q.max()), float(step)
    )


def dequantize(q: QuantizedGrid) -> Grid3D:
    vals = q.values.astype(np.float64)
    if q.step != 1.0:
        vals *= q.step
    return Grid3D(q.dims, q.channels, vals)


@dataclass
class FreqTable:
    vmin: int
    vmax: int
    freq: np.ndarray  # int64 (S,), every entry >= 1, sums to FREQ_TOTAL
    cum: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.cum is None:
            self.cum = np.concatenate([[0], np.cumsum(self.freq)])

    @property
    def n_symbols(self) -> int:
        return self.vmax - self.vmin + 1


def _apportion(scaled: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of sum(scaled) = FREQ_TOTAL reals."""
    n = scaled.size
    f = np.floor(scaled).astype(np.int64)
    remainder = scaled - f
    deficit = FREQ_TOTAL - int(f.sum())
    if deficit > 0:
        # stable: largest remainder first, then lowest symbol
        order = np.lexsort((np.arange(n), -remainder))
        f[order[:deficit]] += 1
    return f


def _apportion_mirror(scaled: np.ndarray) -> np.ndarray:
    """Apportionment that preserves exact mirror symmetry of `scaled`.

    Pairs (s, -s) are bumped together (two units at a time, largest remainder
    first); a lone center symbol absorbs the parity unit.  Every entry still
    lands within one unit of its real-valued target.
    """
    n = scaled.size
    m = n // 2
    has_center = n % 2 == 1
    f = np.floor(scaled).astype(np.int64)
    deficit = FREQ_TOTAL - int(f.sum())
    rem = scaled - np.floor(scaled)
    pair_order = np.lexsort((np.arange(m), -rem[:m]))  # remainders mirror exactly
    k = 0
    while deficit >= 2 and k < m:
        j = pair_order[k]
        f[j] += 1
        f[n - 1 - j] += 1
        deficit -= 2
        k += 1
    if deficit > 0 and has_center:
        f[m] += deficit  # 1 unit (or 2 if every pair is already bumped)
    elif deficit > 0:
        f[pair_order[0] if m else 0] += deficit
    return f


def build_freq_table(mu: float, b: float, vmin: int, vmax: int) -> FreqTable:
    """Discretize the Laplace bin probabilities to integer frequencies.

    Largest-remainder apportionment to a total of 2^16 with a floor of 1 per
    symbol; exactly mirror-symmetric bin masses keep a mirror-symmetric table.
    Evaluation order is fixed (symbol-ascending), double precision.
    """
    if vmin > vmax:
        raise ConfigError(f"empty symbol range [{vmin}, {vmax}]")
    n = vmax - vmin + 1
    if n > MAX_SYMBOLS:
        raise RangeError(f"{n} symbols exceed the 2^16 coder alphabet; widen b or clamp")
    model = LaplaceModel("table", np.array([mu]), np.array([np.log(max(b, B_MIN))]))
    sym = np.arange(vmin, vmax + 1, dtype=np.float64)
    p = pmf(sym, model)
    total_p = float(p.sum())
    if not np.isfinite(total_p) or total_p <= 0.0:
        p = np.full(n, 1.0 / n)
        total_p = 1.0
    scaled = p * (FREQ_TOTAL / total_p)
    symmetric = bool(np.array_equal(scaled, scaled[::-1]))
    f = _apportion_mirror(scaled) if symmetric else _apportion(scaled)
    # enforce the >= 1 floor, stealing from the currently largest entries
    # (mirrored stealing when the table is symmetric)
    zeros = np.flatnonzero(f == 0)
    for z in zeros:
        if f[z] != 0:
            continue
        donor = int(np.argmax(f))
        if symmetric and z != n - 1 - z:
            f[donor] -= 1
            f[n - 1 - donor] -= 1
            f[z] = 1
            f[n - 1 - z] = 1
        else:
            f[donor] -= 1
            f[z] = 1
    assert int(f.sum()) == FREQ_TOTAL and f.min() >= 1
    return FreqTable(vmin, vmax, f)


def range_encode(symbols: np.ndarray, table: FreqTable) -> bytes:
    """Entropy-code value symbols (already within [vmin, vmax])."""
    symbols = np.asarray(symbols).reshape(-1)
    if symbols.size == 0:
        return b""
    if symbols.min() < table.vmin or symbols.max() > table.vmax:
        raise RangeError(
            f"symbol outside table range [{table.vmin}, {table.vmax}]"
        )
    idx = (symbols.astype(np.int64) - table.vmin).astype(np.int32)
    out = np.empty(2 * symbols.size + 64, dtype=np.uint8)
    nbytes = _rangecoder.rc_encode(idx, table.freq, table.cum, out)
    if nbytes < 0:
        raise AssertionError("range coder output overflow")
    return out[:nbytes].tobytes()


def range_decode(data: bytes, table: FreqTable, n: int) -> np.ndarray:
    """Recover exactly n symbols; raises DecodeError on truncated payloads."""
    if n == 0:
        return np.empty(0, dtype=np.int32)
    payload = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    sym_of = np.repeat(
        np.arange(table.n_symbols, dtype=np.int32), table.freq
    )
    out = np.empty(n, dtype=np.int32)
    status = _rangecoder.rc_decode(payload, n, table.freq, table.cum, sym_of, out)
    if status != 0:
        raise DecodeError("range payload truncated")
    return out + table.vmin


# ---------------------------------------------------------------------------
# bitstream container


@dataclass
class TensorRecord:
    tensor_id: int
    mu: float  # float32-rounded, symbol units
    b: float  # float32-rounded, symbol units
    step: float
    vmin: int
    vmax: int
    n_values: int
    payload: bytes


@dataclass
class FrameRecord:
    frame_type: int
    tensors: list[TensorRecord]
    mlp_params: np.ndarray | None = None  # float32, I-frames only

    def byte_length(self) -> int:
        return len(write_frame(self))

    def payload_bytes_by_id(self) -> dict[int, int]:
        return {t.tensor_id: len(t.payload) for t in self.tensors}


@dataclass
class StreamHeader:
    gof_length: int
    frame_count: int
    width: int
    height: int
    n_samples: int
    dir_octaves: int
    background: np.ndarray  # (3,) float32-rounded
    coef_dims: tuple[int, int, int]
    coef_channels: int
    level_dims: list[tuple[int, int, int]]
    level_channels: list[int]
    level_freqs: list[int]
    mlp_input_width: int
    mlp_hidden: tuple[int, ...]


@dataclass
class GofBitstream:
    header: StreamHeader
    frames: list[FrameRecord]


def encode_tensor(
    values: np.ndarray, tensor_id: int, mu: float, b: float, step: float = 1.0
) -> tuple[TensorRecord, np.ndarray]:
    """Quantize + entropy-code one tensor.

    (mu, b) are in symbol units and are rounded to float32 before the table is
    built, so the record alone reproduces the decoder's table.  Returns the
    record and the decoded (dequantized) values the decoder will see.
    """
    v = values / step if step != 1.0 else values
    if np.any(np.abs(v) > QUANT_LIMIT):
        raise RangeError("values exceed 2^30 quantization range")
    q = np.where(v >= 0, np.floor(v + 0.5), np.ceil(v - 0.5)).astype(np.int64)
    vmin = int(q.min())
    vmax = int(q.max())
    mu32 = float(np.float32(mu))
    b32 = float(np.float32(max(b, B_MIN)))
    table = build_freq_table(mu32, b32, vmin, vmax)
    payload = range_encode(q, table)
    rec = TensorRecord(
        tensor_id, mu32, b32, float(np.float32(step)), vmin, vmax, int(q.size), payload
    )
    decoded = q.astype(np.float64).reshape(values.shape)
    if rec.step != 1.0:
        decoded *= rec.step
    return rec, decoded


def decode_tensor(rec: TensorRecord, shape: tuple[int, ...]) -> np.ndarray:
    table = build_freq_table(rec.mu, rec.b, rec.vmin, rec.vmax)
    q = range_decode(rec.payload, table, rec.n_values)
    vals = q.astype(np.float64).reshape(shape)
    if rec.step != 1.0:
        vals *= rec.step
    return vals


def _pack(fmt: str, *vals) -> bytes:
    return struct.pack("<" + fmt, *vals)


def _read(f, fmt: str):
    size = struct.calcsize("<" + fmt)
    data = f.read(size)
    if len(data) != size:
        raise FormatError("unexpected end of stream")
    return struct.unpack("<" + fmt, data)


def write_frame(rec: FrameRecord) -> bytes:
    out = io.BytesIO()
    out.write(_pack("BB", rec.frame_type, len(rec.tensors)))
    for t in rec.tensors:
        out.write(
            _pack(
                "BfffiiII",
                t.tensor_id, t.mu, t.b, t.step, t.vmin, t.vmax, t.n_values, len(t.payload),
            )
        )
        out.write(t.payload)
    if rec.frame_type == FRAME_I:
        if rec.mlp_params is None:
            raise FormatError("I-frame record missing MLP parameters")
        out.write(_pack("I", rec.mlp_params.size))
        out.write(rec.mlp_params.astype(np.float32).tobytes())
    return out.getvalue()


def read_frame(f) -> FrameRecord:
    frame_type, n_tensors = _read(f, "BB")
    if frame_type not in (FRAME_I, FRAME_P):
        raise FormatError(f"unknown frame type {frame_type}")
    tensors = []
    for _ in range(n_tensors):
        tid, mu, b, step, vmin, vmax, n_values, plen = _read(f, "BfffiiII")
        payload = f.read(plen)
        if len(payload) != plen:
            raise FormatError("tensor payload truncated")
        tensors.append(TensorRecord(tid, mu, b, step, vmin, vmax, n_values, payload))
    mlp_params = None
    if frame_type == FRAME_I:
        (count,) = _read(f, "I")
        raw = f.read(4 * count)
        if len(raw) != 4 * count:
            raise FormatError("MLP parameter block truncated")
        mlp_params = np.frombuffer(raw, dtype=np.float32).copy()
    return FrameRecord(frame_type, tensors, mlp_params)


def write_header(h: StreamHeader) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(_pack("HHIIIHB", VERSION, h.gof_length, h.frame_count, h.width, h.height,
                    h.n_samples, h.dir_octaves))
    out.write(_pack("fff", *[float(np.float32(c)) for c in h.background]))
    out.write(_pack("HHHH", *h.coef_dims, h.coef_channels))
    out.write(_pack("B", len(h.level_dims)))
    for dims, ch, freq in zip(h.level_dims, h.level_channels, h.level_freqs):
        out.write(_pack("HHHHH", *dims, ch, freq))
    out.write(_pack("HB", h.mlp_input_width, len(h.mlp_hidden)))
    for w in h.mlp_hidden:
        out.write(_pack("H", w))
    return out.getvalue()


def read_header(f) -> StreamHeader:
    magic = f.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, not an NVVC stream")
    version, gof_length, frame_count, width, height, n_samples, dir_octaves = _read(f, "HHIIIHB")
    if version != VERSION:
        raise FormatError(f"unsupported stream version {version}")
    background = np.array(_read(f, "fff"))
    cd = _read(f, "HHHH")
    coef_dims, coef_channels = (cd[0], cd[1], cd[2]), cd[3]
    (n_levels,) = _read(f, "B")
    level_dims, level_channels, level_freqs = [], [], []
    for _ in range(n_levels):
        ld = _read(f, "HHHHH")
        level_dims.append((ld[0], ld[1], ld[2]))
        level_channels.append(ld[3])
        level_freqs.append(ld[4])
    mlp_input_width, n_hidden = _read(f, "HB")
    hidden = tuple(_read(f, "H")[0] for _ in range(n_hidden))
    return StreamHeader(
        gof_length, frame_count, width, height, n_samples, dir_octaves, background,
        coef_dims, coef_channels, level_dims, level_channels, level_freqs,
        mlp_input_width, hidden,
    )


def write_stream(stream: GofBitstream, path) -> None:
    with open(path, "wb") as f:
        f.write(write_header(stream.header))
        for rec in stream.frames:
            f.write(write_frame(rec))


def read_stream(path) -> GofBitstream:
    with open(path, "rb") as f:
        header = read_header(f)
        frames = [read_frame(f) for _ in range(header.frame_count)]
        if f.read(1):
            raise FormatError("trailing bytes after last frame record")
    return GofBitstream(header, frames)


def stream_bytes(stream: GofBitstream) -> int:
    return len(write_header(stream.header)) + sum(
        len(write_frame(r)) for r in stream.frames
    )


# ---------------------------------------------------------------------------
# sequence decoding


def _grid_from(vals: np.ndarray, dims, channels) -> Grid3D:
    return Grid3D(tuple(dims), channels, vals)


def decode_frame_tensors(header: StreamHeader, rec: FrameRecord):
    """Decode a record's tensors -> (coef Grid3D, per-level grids list)."""
    by_id = {t.tensor_id: t for t in rec.tensors}
    if TENSOR_COEF not in by_id:
        raise FormatError("frame record missing coefficient tensor")
    nx, ny, nz = header.coef_dims
    coef = _grid_from(
        decode_tensor(by_id[TENSOR_COEF], (nx, ny, nz, header.coef_channels)),
        header.coef_dims, header.coef_channels,
    )
    levels = []
    for i, (dims, ch) in enumerate(zip(header.level_dims, header.level_channels)):
        tid = TENSOR_BASIS0 + i
        if tid not in by_id:
            raise FormatError(f"frame record missing tensor {tid}")
        vals = decode_tensor(by_id[tid], (*dims, ch))
        levels.append(_grid_from(vals, dims, ch))
    return coef, levels


def decode_sequence(stream: GofBitstream):
    """Decode every frame; yields (frame_type, FieldSet) in stream order.

    Maintains the decoded frame buffer: the basis is carried across P-frames
    as B_t = B_{t-1} + R_t; the MLP comes from the most recent I-frame.
    """
    header = stream.header
    basis: BasisPyramid | None = None
    net: TinyMlp | None = None
    out = []
    for rec in stream.frames:
        coef, levels = decode_frame_tensors(header, rec)
        if rec.frame_type == FRAME_I:
            basis = BasisPyramid(list(zip(levels, header.level_freqs)))
            net = TinyMlp.unpack_f32(header.mlp_input_width, header.mlp_hidden, rec.mlp_params)
        else:
            if basis is None or net is None:
                raise FormatError("P-frame before any I-frame")
            basis = apply_residual(basis, ResidualPyramid(levels))
        out.append((rec.frame_type, FieldSet(coef, basis, net, header.dir_octaves)))
    return out
