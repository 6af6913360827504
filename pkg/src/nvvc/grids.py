"""Dense 3D feature grids: coefficient field, multiscale basis pyramid, residuals.

A point batch is a float64 array of shape (n, 3) in scene coordinates; feature
batches are (n, channels).  All sampling is trilinear over the unit cube with
out-of-domain points clamped to the boundary.  Basis levels are indexed through
the periodic wrap ``frac(x * frequency)``, which tiles each level ``frequency``
times along every axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError


@dataclass
class Grid3D:
    """A dense (nx, ny, nz, channels) float64 grid over the unit cube."""

    dims: tuple[int, int, int]
    channels: int
    values: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 2 or self.channels < 1:
            raise ConfigError(f"grid needs dims >= 2 and channels >= 1, got {self.dims} x {self.channels}")
        if self.values is None:
            self.values = np.zeros((nx, ny, nz, self.channels))
        else:
            self.values = np.ascontiguousarray(self.values, dtype=np.float64)
            if self.values.shape != (nx, ny, nz, self.channels):
                raise ConfigError(
                    f"values shape {self.values.shape} != {(nx, ny, nz, self.channels)}"
                )

    @property
    def n_entries(self) -> int:
        return self.values.size

    def copy(self) -> "Grid3D":
        return Grid3D(self.dims, self.channels, self.values.copy())


@dataclass
class BasisPyramid:
    """Ordered multiscale basis levels, each a (Grid3D, wrap frequency) pair."""

    levels: list[tuple[Grid3D, int]]

    def __post_init__(self):
        if not self.levels:
            raise ConfigError("basis pyramid needs at least one level")
        freqs = [f for _, f in self.levels]
        if any(f < 1 for f in freqs):
            raise ConfigError(f"wrap frequencies must be >= 1, got {freqs}")
        if any(b >= a for a, b in zip(freqs[1:], freqs)):
            raise ConfigError(f"wrap frequencies must be strictly increasing, got {freqs}")

    @property
    def total_channels(self) -> int:
        return sum(g.channels for g, _ in self.levels)

    def copy(self) -> "BasisPyramid":
        return BasisPyramid([(g.copy(), f) for g, f in self.levels])


@dataclass
class ResidualPyramid:
    """Per-level additive update, shape-congruent to a basis pyramid."""

    levels: list[Grid3D]

    def copy(self) -> "ResidualPyramid":
        return ResidualPyramid([g.copy() for g in self.levels])

    @classmethod
    def zeros_like(cls, basis: BasisPyramid) -> "ResidualPyramid":
        return cls([Grid3D(g.dims, g.channels) for g, _ in basis.levels])


def _check_congruent(basis: BasisPyramid, res: ResidualPyramid) -> None:
    if len(basis.levels) != len(res.levels):
        raise ConfigError(
            f"residual has {len(res.levels)} levels, basis has {len(basis.levels)}"
        )
    for (bg, _), rg in zip(basis.levels, res.levels):
        if bg.dims != rg.dims or bg.channels != rg.channels:
            raise ConfigError(
                f"residual level shape {rg.dims}x{rg.channels} != basis {bg.dims}x{bg.channels}"
            )


def trilinear_sample(grid: Grid3D, pts: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of the grid at each point; returns (n, channels)."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    nx, ny, nz = grid.dims
    out = np.empty((pts.shape[0], grid.channels))
    _kernels.tri_gather(grid.values.reshape(-1), nx, ny, nz, grid.channels, pts, 0, out)
    return out


def trilinear_sample_bwd(
    grid: Grid3D, pts: np.ndarray, dfeat: np.ndarray, want_dpts: bool = False
) -> tuple[np.ndarray, np.ndarray | None]:
    """Backward of trilinear_sample.

    Returns (dvalues, dpts): dvalues has the grid's shape and is built by
    scatter-adding the trilinear weights in point order; dpts is the analytic
    spatial derivative (None unless requested, zero at clamped points).
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    dfeat = np.ascontiguousarray(dfeat, dtype=np.float64)
    if dfeat.shape != (pts.shape[0], grid.channels):
        raise ConfigError(f"dfeat shape {dfeat.shape} != {(pts.shape[0], grid.channels)}")
    nx, ny, nz = grid.dims
    dvals = np.zeros(grid.values.size)
    _kernels.tri_scatter(dvals, nx, ny, nz, grid.channels, pts, 0, dfeat)
    dpts = None
    if want_dpts:
        dpts = np.empty_like(pts)
        _kernels.tri_point_grad(
            grid.values.reshape(-1), nx, ny, nz, grid.channels, pts, dfeat, dpts
        )
    return dvals.reshape(grid.values.shape), dpts


def sawtooth_map(pts: np.ndarray, frequency: int) -> np.ndarray:
    """Periodic wrap frac(x * frequency), per axis; output in [0, 1)."""
    if frequency < 1:
        raise ConfigError(f"sawtooth frequency must be >= 1, got {frequency}")
    pts = np.asarray(pts, dtype=np.float64)
    scaled = pts * frequency
    return scaled - np.floor(scaled)


def basis_sample(basis: BasisPyramid, pts: np.ndarray) -> np.ndarray:
    """Sample every level at its wrapped coordinates, concatenated in level order."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n = pts.shape[0]
    out = np.empty((n, basis.total_channels))
    c0 = 0
    for grid, freq in basis.levels:
        nx, ny, nz = grid.dims
        _kernels.tri_gather(
            grid.values.reshape(-1), nx, ny, nz, grid.channels, pts, freq,
            out[:, c0 : c0 + grid.channels],
        )
        c0 += grid.channels
    return out


def basis_sample_bwd(basis: BasisPyramid, pts: np.ndarray, dfeat: np.ndarray) -> list[np.ndarray]:
    """Backward of basis_sample: per-level d(loss)/d(grid values)."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    dfeat = np.ascontiguousarray(dfeat, dtype=np.float64)
    if dfeat.shape != (pts.shape[0], basis.total_channels):
        raise ConfigError(
            f"dfeat shape {dfeat.shape} != {(pts.shape[0], basis.total_channels)}"
        )
    grads = []
    c0 = 0
    for grid, freq in basis.levels:
        nx, ny, nz = grid.dims
        dvals = np.zeros(grid.values.size)
        _kernels.tri_scatter(
            dvals, nx, ny, nz, grid.channels, pts, freq,
            np.ascontiguousarray(dfeat[:, c0 : c0 + grid.channels]),
        )
        grads.append(dvals.reshape(grid.values.shape))
        c0 += grid.channels
    return grads


def fuse(coef_feat: np.ndarray, basis_feat: np.ndarray) -> np.ndarray:
    """Hadamard product of coefficient and basis features."""
    if coef_feat.shape != basis_feat.shape:
        raise ConfigError(f"fuse width mismatch: {coef_feat.shape} vs {basis_feat.shape}")
    return coef_feat * basis_feat


def fuse_bwd(
    coef_feat: np.ndarray, basis_feat: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    return dout * basis_feat, dout * coef_feat


def apply_residual(prev: BasisPyramid, res: ResidualPyramid) -> BasisPyramid:
    """B_t = B_prev + R_t, per level; inputs are left untouched."""
    _check_congruent(prev, res)
    return BasisPyramid(
        [
            (Grid3D(g.dims, g.channels, g.values + rg.values), f)
            for (g, f), rg in zip(prev.levels, res.levels)
        ]
    )


def l1_penalty(res: ResidualPyramid) -> tuple[float, list[np.ndarray]]:
    """Sum of |r| over all residual entries, with the sign subgradient per level."""
    total = 0.0
    grads = []
    for g in res.levels:
        total += float(np.abs(g.values).sum())
        grads.append(np.sign(g.values))
    return total, grads
