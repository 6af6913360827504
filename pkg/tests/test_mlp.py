import math

import numpy as np
import pytest

from nvvc.errors import ConfigError
from nvvc.grids import BasisPyramid, Grid3D, basis_sample, fuse, trilinear_sample
from nvvc.mlp import TinyMlp, encode_direction, mlp_eval, mlp_eval_bwd

from helpers import central_diff, rel_err


def make_mlp(rng, input_width=7, hidden=(16, 16)) -> TinyMlp:
    return TinyMlp.create(input_width, hidden, rng)


# ---------------------------------------------------------------------------
# direction encoding


def test_encoding_zero_octaves_is_identity():
    d = np.array([[0.0, 0.6, 0.8]])
    np.testing.assert_array_equal(encode_direction(d, 0), d)


def test_encoding_closed_form():
    d = np.array([[0.0, 0.0, 1.0]])
    out = encode_direction(d, 1)[0]
    expect = [0, 0, 1, 0, 0, math.sin(1.0), 1, 1, math.cos(1.0)]
    np.testing.assert_allclose(out, expect, atol=1e-15)


@pytest.mark.parametrize("octaves", [0, 1, 2, 3, 4])
def test_encoding_width(octaves):
    rng = np.random.default_rng(octaves)
    d = rng.normal(size=(5, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    assert encode_direction(d, octaves).shape == (5, 3 + 6 * octaves)


def test_encoding_normalizes_with_warning():
    with pytest.warns(UserWarning):
        out = encode_direction(np.array([[0.0, 0.0, 2.0]]), 0)
    np.testing.assert_allclose(out, [[0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# mlp_eval


def test_zero_parameters_closed_form():
    mlp = TinyMlp(
        [np.zeros((5, 8)), np.zeros((8, 4))],
        [np.zeros(8), np.zeros(4)],
    )
    rgb, sigma, _ = mlp_eval(mlp, np.ones((3, 2)), np.ones((3, 3)))
    np.testing.assert_allclose(rgb, 0.5)
    np.testing.assert_allclose(sigma, math.log(2.0))


def test_output_ranges():
    rng = np.random.default_rng(1)
    mlp = make_mlp(rng)
    for _ in range(10):
        fused = rng.normal(size=(100, 4))
        enc = rng.normal(size=(100, 3))
        rgb, sigma, _ = mlp_eval(mlp, fused, enc)
        assert np.all(rgb > 0.0) and np.all(rgb < 1.0)
        assert np.all(sigma >= 0.0) and np.all(np.isfinite(sigma))
    # extreme inputs may saturate the sigmoid but never leave [0, 1]
    rgb, sigma, _ = mlp_eval(mlp, 1e6 * rng.normal(size=(100, 4)), rng.normal(size=(100, 3)))
    assert np.all(rgb >= 0.0) and np.all(rgb <= 1.0)
    assert np.all(sigma >= 0.0) and np.all(np.isfinite(sigma))


def test_width_mismatch_raises():
    rng = np.random.default_rng(2)
    mlp = make_mlp(rng, input_width=7)
    with pytest.raises(ConfigError):
        mlp_eval(mlp, np.ones((2, 3)), np.ones((2, 3)))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    mlp = make_mlp(rng, input_width=6, hidden=(8, 8))
    fused = rng.normal(size=(5, 3))
    enc = rng.normal(size=(5, 3))
    wr = rng.normal(size=(5, 3))
    ws = rng.normal(size=5)

    def loss_for(mlp_: TinyMlp) -> float:
        rgb, sigma, _ = mlp_eval(mlp_, fused, enc)
        return float((rgb * wr).sum() + (sigma * ws).sum())

    rgb, sigma, cache = mlp_eval(mlp, fused, enc)
    grads, dfused = mlp_eval_bwd(mlp, cache, wr, ws)
    params = mlp.parameters()
    assert len(grads) == len(params)
    for p, g in zip(params, grads):
        def f(x, p=p):
            saved = p.copy()
            p[...] = x
            out = loss_for(mlp)
            p[...] = saved
            return out

        fd = central_diff(f, p.copy())
        assert rel_err(g, fd) < 1e-5

    fd_fused = central_diff(
        lambda x: float(
            (mlp_eval(mlp, x, enc)[0] * wr).sum() + (mlp_eval(mlp, x, enc)[1] * ws).sum()
        ),
        fused.copy(),
    )
    assert rel_err(dfused, fd_fused) < 1e-5


def test_backward_without_param_grads():
    rng = np.random.default_rng(4)
    mlp = make_mlp(rng, input_width=6, hidden=(8,))
    fused = rng.normal(size=(4, 3))
    enc = rng.normal(size=(4, 3))
    _, _, cache = mlp_eval(mlp, fused, enc)
    g_full, dfused_full = mlp_eval_bwd(mlp, cache, np.ones((4, 3)), np.ones(4))
    g_none, dfused_none = mlp_eval_bwd(mlp, cache, np.ones((4, 3)), np.ones(4), want_params=False)
    assert g_none == []
    np.testing.assert_array_equal(dfused_full, dfused_none)


def test_f32_roundtrip_packs_all_parameters():
    rng = np.random.default_rng(5)
    mlp = make_mlp(rng, input_width=9, hidden=(8, 8))
    packed = mlp.pack_f32()
    back = TinyMlp.unpack_f32(9, (8, 8), packed)
    for a, b in zip(mlp.parameters(), back.parameters()):
        np.testing.assert_array_equal(a.astype(np.float32), b.astype(np.float32))
    rt = mlp.roundtrip_f32()
    np.testing.assert_array_equal(rt.pack_f32(), packed)


# ---------------------------------------------------------------------------
# full point-evaluation chain


def _full_chain(coef, pyramid, mlp, pts, dirs, octaves=1):
    cf = trilinear_sample(coef, pts)
    bf = basis_sample(pyramid, pts)
    fused = fuse(cf, bf)
    enc = encode_direction(dirs, octaves)
    rgb, sigma, _ = mlp_eval(mlp, fused, enc)
    return rgb, sigma


def test_chain_is_deterministic():
    rng = np.random.default_rng(6)
    coef = Grid3D((4, 4, 4), 4, rng.normal(size=(4, 4, 4, 4)))
    pyr = BasisPyramid([(Grid3D((3, 3, 3), 4, rng.normal(size=(3, 3, 3, 4))), 2)])
    mlp = make_mlp(rng, input_width=4 + 9, hidden=(8, 8))
    pts = rng.random((6, 3))
    dirs = rng.normal(size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    a = _full_chain(coef, pyr, mlp, pts, dirs)
    b = _full_chain(coef, pyr, mlp, pts, dirs)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_chain_jacobian_wrt_grid_values():
    rng = np.random.default_rng(7)
    coef = Grid3D((3, 3, 3), 2, rng.normal(size=(3, 3, 3, 2)))
    pyr = BasisPyramid([(Grid3D((3, 3, 3), 2, rng.normal(size=(3, 3, 3, 2))), 1)])
    mlp = make_mlp(rng, input_width=2 + 3, hidden=(8,))
    pts = rng.random((4, 3))
    dirs = np.tile(np.array([[0.0, 0.0, 1.0]]), (4, 1))
    wr = rng.normal(size=(4, 3))
    ws = rng.normal(size=4)

    from nvvc.grids import basis_sample_bwd, fuse_bwd, trilinear_sample_bwd

    cf = trilinear_sample(coef, pts)
    bf = basis_sample(pyr, pts)
    fused = fuse(cf, bf)
    enc = encode_direction(dirs, 0)
    rgb, sigma, cache = mlp_eval(mlp, fused, enc)
    _, dfused = mlp_eval_bwd(mlp, cache, wr, ws)
    dcf, dbf = fuse_bwd(cf, bf, dfused)
    dcoef, _ = trilinear_sample_bwd(coef, pts, dcf)
    dbasis = basis_sample_bwd(pyr, pts, dbf)

    def loss_coef(values):
        g = Grid3D(coef.dims, coef.channels, values)
        r, s = _full_chain(g, pyr, mlp, pts, dirs, octaves=0)
        return float((r * wr).sum() + (s * ws).sum())

    fd = central_diff(loss_coef, coef.values.copy())
    assert rel_err(dcoef, fd) < 1e-4

    def loss_basis(values):
        p = BasisPyramid([(Grid3D((3, 3, 3), 2, values), 1)])
        r, s = _full_chain(coef, p, mlp, pts, dirs, octaves=0)
        return float((r * wr).sum() + (s * ws).sum())

    fd = central_diff(loss_basis, pyr.levels[0][0].values.copy())
    assert rel_err(dbasis[0], fd) < 1e-4
