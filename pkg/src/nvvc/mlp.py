"""Tiny view-conditioned decoder MLP with hand-derived forward/backward.

Maps fused grid features plus an encoded view direction to (rgb, sigma):
two relu hidden layers, sigmoid on the three color pre-activations,
softplus on the density pre-activation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def direction_encoding_width(octaves: int) -> int:
    return 3 + 6 * octaves


def encode_direction(dirs: np.ndarray, octaves: int) -> np.ndarray:
    """(n,3) unit directions -> (n, 3+6*octaves): d, then (sin, cos) of 2^k * d.

    Non-unit rows are normalized with a warning.
    """
    if octaves < 0:
        raise ConfigError(f"octaves must be >= 0, got {octaves}")
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        warnings.warn("non-unit view directions, normalizing", stacklevel=2)
        dirs = dirs / norms[:, None]
    parts = [dirs]
    for k in range(octaves):
        scaled = dirs * float(2**k)
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=1)


@dataclass
class TinyMlp:
    """Fully-connected net; weights[i] has shape (fan_in, fan_out), biases 1-D."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise ConfigError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ConfigError(
                    f"layer {i}: fan_in {w.shape[0]} != previous fan_out "
                    f"{self.weights[i - 1].shape[1]}"
                )
        if self.weights[-1].shape[1] != 4:
            raise ConfigError("output layer must have width 4 (rgb + density)")

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @classmethod
    def create(cls, input_width: int, hidden: tuple[int, ...], rng: np.random.Generator) -> "TinyMlp":
        """Glorot-uniform weights, zero biases."""
        widths = (input_width, *hidden, 4)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths, widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def pack_f32(self) -> np.ndarray:
        """All parameters flattened to one float32 vector, layer order, W then b."""
        return np.concatenate([p.reshape(-1) for p in self.parameters()]).astype(np.float32)

    @classmethod
    def unpack_f32(
        cls, input_width: int, hidden: tuple[int, ...], data: np.ndarray
    ) -> "TinyMlp":
        widths = (input_width, *hidden, 4)
        weights, biases = [], []
        pos = 0
        for fan_in, fan_out in zip(widths, widths[1:]):
            weights.append(
                data[pos : pos + fan_in * fan_out].astype(np.float64).reshape(fan_in, fan_out)
            )
            pos += fan_in * fan_out
            biases.append(data[pos : pos + fan_out].astype(np.float64))
            pos += fan_out
        if pos != data.size:
            raise ConfigError(f"parameter vector length {data.size}, expected {pos}")
        return cls(weights, biases)

    def roundtrip_f32(self) -> "TinyMlp":
        """The MLP as a decoder reconstructs it (parameters rounded to float32)."""
        return TinyMlp.unpack_f32(self.input_width, self.hidden_widths, self.pack_f32())

    def copy(self) -> "TinyMlp":
        return TinyMlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp_eval(mlp: TinyMlp, fused: np.ndarray, dir_enc: np.ndarray):
    """Forward pass. Returns (rgb (n,3), sigma (n,), cache for mlp_eval_bwd)."""
    if fused.shape[1] + dir_enc.shape[1] != mlp.input_width:
        raise ConfigError(
            f"input width {fused.shape[1]}+{dir_enc.shape[1]} != MLP {mlp.input_width}"
        )
    x = np.concatenate([fused, dir_enc], axis=1)
    acts = [x]
    h = x
    for w, b in zip(mlp.weights[:-1], mlp.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    pre = h @ mlp.weights[-1] + mlp.biases[-1]
    rgb = _sigmoid(pre[:, :3])
    sigma = _softplus(pre[:, 3])
    cache = (acts, pre, rgb, fused.shape[1])
    return rgb, sigma, cache


def mlp_eval_bwd(
    mlp: TinyMlp, cache, drgb: np.ndarray, dsigma: np.ndarray, want_params: bool = True
):
    """Backward pass. Returns (param grads aligned with parameters(), dfused).

    With want_params=False the (frozen-MLP) parameter gradients are skipped and
    an empty list is returned in their place.
    """
    acts, pre, rgb, nfused = cache
    dpre = np.empty_like(pre)
    dpre[:, :3] = drgb * rgb * (1.0 - rgb)
    dpre[:, 3] = dsigma * _sigmoid(pre[:, 3])
    grads: list[np.ndarray] = []
    dh = dpre
    for i in range(len(mlp.weights) - 1, -1, -1):
        if want_params:
            a = acts[i]
            grads.insert(0, dh.sum(axis=0))
            grads.insert(0, a.T @ dh)
        if i > 0:
            dh = dh @ mlp.weights[i].T
            dh[acts[i] <= 0.0] = 0.0
    dx = dh @ mlp.weights[0].T
    return grads, dx[:, :nfused]
