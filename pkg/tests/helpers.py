"""Shared test utilities: finite differences and brute-force oracles."""

import numpy as np


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def oracle_trilinear_point(values: np.ndarray, pt: np.ndarray) -> np.ndarray:
    """Straightforward 8-corner weighted sum for one point; values (nx,ny,nz,c)."""
    dims = np.array(values.shape[:3])
    p = np.clip(pt, 0.0, 1.0) * (dims - 1)
    i = np.minimum(p.astype(int), dims - 2)
    f = p - i
    out = np.zeros(values.shape[-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (f[0] if dx else 1 - f[0])
                    * (f[1] if dy else 1 - f[1])
                    * (f[2] if dz else 1 - f[2])
                )
                out += w * values[i[0] + dx, i[1] + dy, i[2] + dz]
    return out
