"""Simulated quantization and differentiable bit-rate estimation.

Quantization (unit step) is replaced during training by additive uniform
noise in [-1/2, 1/2); the probability of a quantized value is the Laplace
CDF difference across its bin, with trainable per-tensor (mu, b).  The scale
parameter is kept as log(b) internally so optimization preserves positivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

B_MIN = 1e-6
P_MIN = 2.0**-32
LOG2_E = 1.0 / np.log(2.0)


@dataclass
class LaplaceModel:
    """Trainable (mu, b) for one tensor; b = exp(log_b), clamped >= B_MIN."""

    name: str
    mu: np.ndarray = field(default_factory=lambda: np.zeros(1))
    log_b: np.ndarray = field(default_factory=lambda: np.full(1, np.log(0.01)))

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        self.log_b = np.atleast_1d(np.asarray(self.log_b, dtype=np.float64))

    @property
    def b(self) -> float:
        return max(float(np.exp(self.log_b[0])), B_MIN)

    @property
    def mean(self) -> float:
        return float(self.mu[0])

    def clamp(self) -> None:
        np.maximum(self.log_b, np.log(B_MIN), out=self.log_b)


@dataclass
class RateTensor:
    """One array subject to the rate penalty, paired with its entropy model."""

    name: str
    values: np.ndarray
    model: LaplaceModel


TensorBundle = list[RateTensor]


def bundle_size(bundle: TensorBundle) -> int:
    return sum(t.values.size for t in bundle)


def simulate_quantize(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """values + iid uniform noise in [-1/2, 1/2); the input is not modified."""
    return values + (rng.random(values.shape) - 0.5)


def laplace_cdf(x, mu: float, b: float):
    """Laplace CDF; b > 0."""
    if b <= 0:
        raise ConfigError(f"laplace scale must be positive, got {b}")
    x = np.asarray(x, dtype=np.float64)
    u = (x - mu) / b
    return np.where(u < 0, 0.5 * np.exp(-np.abs(u)), 1.0 - 0.5 * np.exp(-np.abs(u)))


def _bin_exps(u: np.ndarray, b: float):
    # e^{-|u+1/2|/b}, e^{-|u-1/2|/b}: every exponent <= 0, no overflow
    ea = np.exp(-np.abs(u + 0.5) / b)
    eb = np.exp(-np.abs(u - 0.5) / b)
    return ea, eb


def pmf(y, model: LaplaceModel, floor: bool = True):
    """P(round(y)) = CDF(y + 1/2) - CDF(y - 1/2).

    Evaluated through tail-stable exponentials (no cancellation far from mu);
    floored at P_MIN unless floor=False.
    """
    y = np.asarray(y, dtype=np.float64)
    mu, b = model.mean, model.b
    u = y - mu
    ea, eb = _bin_exps(u, b)
    p = np.where(
        u >= 0.5,
        0.5 * (eb - ea),
        np.where(u <= -0.5, 0.5 * (ea - eb), 1.0 - 0.5 * (ea + eb)),
    )
    if not floor:
        return p
    return np.maximum(p, P_MIN)


def pmf_with_grads(y: np.ndarray, mu: float, b: float):
    """Returns (p, dp/dy, dp/db) with p floored at P_MIN (gradients zeroed there).

    dp/dmu is -dp/dy.
    """
    u = y - mu
    ea, eb = _bin_exps(u, b)
    p = np.where(
        u >= 0.5,
        0.5 * (eb - ea),
        np.where(u <= -0.5, 0.5 * (ea - eb), 1.0 - 0.5 * (ea + eb)),
    )
    dp_dy = (ea - eb) / (2.0 * b)
    dp_db = -((u + 0.5) * ea - (u - 0.5) * eb) / (2.0 * b * b)
    floored = p < P_MIN
    p = np.maximum(p, P_MIN)
    dp_dy = np.where(floored, 0.0, dp_dy)
    dp_db = np.where(floored, 0.0, dp_db)
    return p, dp_dy, dp_db


@dataclass
class RateGrads:
    d_values: list[np.ndarray]  # per tensor, shaped like the tensor
    d_mu: list[float]
    d_b: list[float]


def rate_loss(bundle: TensorBundle, rng: np.random.Generator) -> tuple[float, RateGrads]:
    """Mean bits per entry over the bundle under simulated quantization.

    Noise is drawn per tensor in bundle order from `rng`.  Gradients flow into
    the entries (straight through the additive noise) and into each (mu, b).
    """
    if not bundle:
        raise ConfigError("rate loss needs a non-empty tensor bundle")
    n_total = bundle_size(bundle)
    bits = 0.0
    d_values, d_mu, d_b = [], [], []
    for t in bundle:
        y = simulate_quantize(t.values, rng)
        p, dp_dy, dp_db = pmf_with_grads(y.reshape(-1), t.model.mean, t.model.b)
        bits += float(-np.log2(p).sum())
        # d(-log2 p)/dx = -(1/ln 2) * (dp/dx) / p, averaged over N
        scale = -LOG2_E / (n_total)
        gy = scale * dp_dy / p
        d_values.append(gy.reshape(t.values.shape))
        d_mu.append(float(-gy.sum()))
        d_b.append(float((scale * dp_db / p).sum()))
    return bits / n_total, RateGrads(d_values, d_mu, d_b)


def rate_bits_rounded(values: np.ndarray, mu: float, b: float) -> float:
    """Total bits of the tensor under true rounding (deterministic Eq.-8 analog)."""
    q = np.where(values >= 0, np.floor(values + 0.5), np.ceil(values - 0.5))
    model = LaplaceModel("tmp", np.array([mu]), np.array([np.log(max(b, B_MIN))]))
    return float(-np.log2(pmf(q.reshape(-1), model)).sum())
