import math

import numpy as np
import pytest

from nvvc.errors import ConfigError
from nvvc.rate import (
    B_MIN, P_MIN, LaplaceModel, RateTensor,
    laplace_cdf, pmf, pmf_with_grads, rate_bits_rounded, rate_loss, simulate_quantize,
)

from helpers import rel_err


def model(mu=0.0, b=1.0, name="t") -> LaplaceModel:
    return LaplaceModel(name, np.array([mu]), np.array([math.log(b)]))


# ---------------------------------------------------------------------------
# simulate_quantize


def test_noise_bound():
    rng = np.random.default_rng(0)
    y = rng.normal(size=10_000)
    yt = simulate_quantize(y, rng)
    d = yt - y
    assert np.all(d >= -0.5) and np.all(d < 0.5)


def test_noise_mean_is_centered():
    rng = np.random.default_rng(1)
    y = np.zeros(1_000_000)
    d = simulate_quantize(y, rng) - y
    assert abs(d.mean()) < 0.002


def test_noise_reproducible_and_pure():
    y = np.arange(100, dtype=np.float64)
    orig = y.copy()
    a = simulate_quantize(y, np.random.default_rng(42))
    b = simulate_quantize(y, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(y, orig)


# ---------------------------------------------------------------------------
# laplace_cdf / pmf


def test_cdf_closed_forms():
    assert laplace_cdf(0.0, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert laplace_cdf(0.5, 0.0, 1.0) == pytest.approx(1.0 - 0.5 * math.exp(-0.5), abs=1e-12)
    assert float(laplace_cdf(40.0, 0.0, 1.0)) >= 1.0 - 1e-12
    x = np.linspace(-5, 5, 101)
    c = laplace_cdf(x, 0.3, 0.7)
    assert np.all(np.diff(c) > 0.0)
    with pytest.raises(ConfigError):
        laplace_cdf(0.0, 0.0, 0.0)


def test_pmf_center_value():
    p = pmf(np.array([0.0]), model())
    assert p[0] == pytest.approx(1.0 - math.exp(-0.5), abs=1e-12)


def test_pmf_sums_to_one_over_bins():
    # the raw bin mass sums to 1; the floor only ever adds P_MIN-sized mass
    for mu, b in [(0.0, 1.0), (3.2, 0.3), (-1.7, 5.0)]:
        k = np.arange(math.floor(mu - 40 * b), math.ceil(mu + 40 * b) + 1, dtype=np.float64)
        m = model(mu, b)
        raw = pmf(k, m, floor=False)
        assert raw.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_array_equal(pmf(k, m), np.maximum(raw, P_MIN))
        # independent check against direct CDF differences where they are accurate
        direct = laplace_cdf(k + 0.5, mu, b) - laplace_cdf(k - 0.5, mu, b)
        keep = direct >= 1e-6
        np.testing.assert_allclose(raw[keep], direct[keep], rtol=1e-9)


def test_pmf_symmetry():
    m = model(1.5, 0.8)
    a = np.linspace(0.0, 10.0, 50)
    np.testing.assert_allclose(pmf(1.5 + a, m), pmf(1.5 - a, m), rtol=1e-12)


def test_pmf_floor():
    p = pmf(np.array([1e6]), model(0.0, 0.01))
    assert p[0] == P_MIN


def test_pmf_gradients_match_fd():
    rng = np.random.default_rng(2)
    y = np.concatenate([rng.normal(0, 3, 50), np.array([0.0, 0.49, 0.51, -0.5])])
    mu, b = 0.4, 1.3
    p, dp_dy, dp_db = pmf_with_grads(y, mu, b)
    eps = 1e-6
    fd_y = (
        pmf_with_grads(y + eps, mu, b)[0] - pmf_with_grads(y - eps, mu, b)[0]
    ) / (2 * eps)
    fd_b = (
        pmf_with_grads(y, mu, b + eps)[0] - pmf_with_grads(y, mu, b - eps)[0]
    ) / (2 * eps)
    # skip points within eps of the |u|=1/2 kinks, the derivative jumps there
    smooth = np.minimum(np.abs(np.abs(y - mu) - 0.5), 1.0) > 1e-4
    assert rel_err(dp_dy[smooth], fd_y[smooth]) < 1e-5
    assert rel_err(dp_db[smooth], fd_b[smooth]) < 1e-5


# ---------------------------------------------------------------------------
# rate_loss


def test_concentrated_values_cost_nothing():
    # all entries at mu with tiny b: the whole mass sits in the center bin.
    # The closed-form pmf at the center prices this at < 1e-6 bits/entry;
    # under simulated quantization, noise landing within ~b of a bin edge sees
    # pmf ~ 1/2, so the noisy estimate is E = 2b*Li2(1/2)/ln2 ~ 0.0168 bits.
    vals = np.zeros((50, 50))
    assert rate_bits_rounded(vals, 0.0, 0.01) / vals.size < 1e-6
    bundle = [RateTensor("x", vals, model(0.0, 0.01))]
    bits, grads = rate_loss(bundle, np.random.default_rng(3))
    assert 0.0 <= bits < 0.025
    assert grads.d_values[0].shape == vals.shape


def test_rate_matches_entropy_oracle():
    rng = np.random.default_rng(4)
    b = 5.0
    y = rng.laplace(0.0, b, size=200_000)
    bundle = [RateTensor("y", y, model(0.0, b))]
    bits, _ = rate_loss(bundle, np.random.default_rng(5))
    # exhaustive discrete entropy of the integer-bin Laplace
    k = np.arange(-40 * b, 40 * b + 1, dtype=np.float64)
    p = pmf(k, model(0.0, b))
    entropy = float(-(p * np.log2(p)).sum())
    assert abs(bits - entropy) / entropy < 0.03


def test_rate_gradients_match_fd_with_fixed_noise():
    rng_seed = 6
    vals = np.random.default_rng(7).normal(0.0, 2.0, size=23)
    mu0, b0 = 0.3, 1.1

    def loss(values, mu, b):
        bundle = [RateTensor("x", values, model(mu, b))]
        bits, _ = rate_loss(bundle, np.random.default_rng(rng_seed))
        return bits

    bundle = [RateTensor("x", vals, model(mu0, b0))]
    bits, grads = rate_loss(bundle, np.random.default_rng(rng_seed))
    eps = 1e-6
    fd_vals = np.zeros_like(vals)
    for i in range(vals.size):
        vp = vals.copy(); vp[i] += eps
        vm = vals.copy(); vm[i] -= eps
        fd_vals[i] = (loss(vp, mu0, b0) - loss(vm, mu0, b0)) / (2 * eps)
    assert rel_err(grads.d_values[0], fd_vals) < 1e-4
    fd_mu = (loss(vals, mu0 + eps, b0) - loss(vals, mu0 - eps, b0)) / (2 * eps)
    assert abs(grads.d_mu[0] - fd_mu) / max(abs(fd_mu), 1e-8) < 1e-4
    fd_b = (loss(vals, mu0, b0 + eps) - loss(vals, mu0, b0 - eps)) / (2 * eps)
    assert abs(grads.d_b[0] - fd_b) / max(abs(fd_b), 1e-8) < 1e-4


def test_rate_loss_bounds():
    rng = np.random.default_rng(8)
    vals = rng.normal(0, 100, size=1000)
    bits, _ = rate_loss([RateTensor("x", vals, model(0.0, 0.01))], rng)
    assert 0.0 <= bits <= 32.0  # floored pmf caps the per-entry cost at 32 bits


def test_wider_scale_is_cheaper_far_from_mean():
    vals = np.full(100, 10.0)
    rng1 = np.random.default_rng(9)
    rng2 = np.random.default_rng(9)
    tight, _ = rate_loss([RateTensor("x", vals, model(0.0, 0.5))], rng1)
    wide, _ = rate_loss([RateTensor("x", vals, model(0.0, 5.0))], rng2)
    assert wide < tight


def test_rate_loss_noise_variance_small():
    rng = np.random.default_rng(10)
    vals = rng.laplace(0.0, 3.0, size=10_000)
    bundle = [RateTensor("x", vals, model(0.0, 3.0))]
    draws = np.array(
        [rate_loss(bundle, np.random.default_rng(1000 + k))[0] for k in range(100)]
    )
    assert draws.std() / draws.mean() < 0.01


def test_rate_loss_deterministic_given_seed():
    vals = np.random.default_rng(11).normal(size=500)
    bundle = [RateTensor("x", vals, model())]
    a, _ = rate_loss(bundle, np.random.default_rng(12))
    b, _ = rate_loss(bundle, np.random.default_rng(12))
    assert a == b


def test_multi_tensor_bundle_weighting():
    # mean over the union: 1000 cheap entries + 1000 expensive entries
    cheap = np.zeros(1000)
    dear = np.full(1000, 7.0)
    b1, _ = rate_loss([RateTensor("a", cheap, model(0.0, 1.0))], np.random.default_rng(13))
    b2, _ = rate_loss([RateTensor("b", dear, model(0.0, 1.0))], np.random.default_rng(13))
    both, _ = rate_loss(
        [RateTensor("a", cheap, model(0.0, 1.0)), RateTensor("b", dear, model(0.0, 1.0))],
        np.random.default_rng(13),
    )
    assert both == pytest.approx((b1 + b2) / 2.0, rel=1e-2)


def test_empty_bundle_rejected():
    with pytest.raises(ConfigError):
        rate_loss([], np.random.default_rng(0))


def test_model_clamp_and_rounded_bits():
    m = LaplaceModel("x", np.array([0.0]), np.array([-100.0]))
    m.clamp()
    assert m.b >= B_MIN
    # deterministic-rounding rate of perfectly centered values is ~0
    bits = rate_bits_rounded(np.zeros(100), 0.0, 0.01)
    assert bits < 1e-6
    bits2 = rate_bits_rounded(np.full(100, 5.2), 0.0, 1.0)
    assert bits2 > 100 * 5.0  # ~ |y|/b / ln 2 bits per entry
