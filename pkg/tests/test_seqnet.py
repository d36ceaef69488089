import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdnpath.seqnet import (SeqNet, activate_arrays, bivariate_density, decode, encode,
                            mdn_activate, mdn_loss, mixture_log_likelihood, normalize, denormalize,
                            param_layout, predict, sample_mixture, step_loss, to_sequences)
from mdnpath.types import FuturePoint, MdnStep, MixtureComponent, ModelConfig, NormStats

STATS = NormStats(np.array([1.0, 2.0, 3.0, 0.5]), np.array([2.0, 3.0, 1.5, 1.0]))


def random_net(cfg, seed=1, jitter=0.3):
    net = SeqNet.init(cfg, STATS, seed=seed)
    rng = np.random.default_rng(seed + 100)
    net.set_flat(net.flat() + jitter * rng.standard_normal(net.n_params))
    return net


def random_obs(rng, B, h):
    obs = rng.normal(size=(B, h, 4)) * 2
    obs[..., 2] = np.abs(obs[..., 2])
    return obs


def single(mean=(0.0, 0.0), sd=(1.0, 1.0), rho=0.0, pad=0.5):
    return MdnStep(pad, (MixtureComponent(1.0, tuple(mean), tuple(sd), rho),))


# ---------------------------------------------------------------- normalisation


def test_normalize_examples():
    s = NormStats(np.array([0.0, 1.0, 2.0, 3.0]), np.array([2.0, 1.0, 1.0, 1.0]))
    assert np.array_equal(normalize(s.mean, s), np.zeros(4))
    assert normalize(np.array([4.0, 1.0, 2.0, 3.0]), s)[0] == 2.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_normalize_roundtrip(x):
    x = np.array(x)
    assert np.allclose(denormalize(normalize(x, STATS), STATS), x, atol=1e-12, rtol=0)


# ---------------------------------------------------------------- activation


def test_activation_fixed_points():
    M = 6
    step = mdn_activate(np.zeros(1 + 6 * M), NormStats.identity())
    assert step.pad_prob == 0.5
    assert all(c.weight == pytest.approx(1 / 6) for c in step.components)
    assert all(c.corr == 0 and c.stdev == (1.0, 1.0) for c in step.components)


def test_activation_sign_and_scaling():
    raw = np.zeros(7)
    raw[0] = 2.0
    raw[2], raw[3] = 1.0, -1.0  # mu_hat
    step = mdn_activate(raw, STATS)
    assert step.pad_prob == pytest.approx(1 / (1 + math.exp(2.0)))
    c = step.components[0]
    assert c.mean == pytest.approx((1.0 * 2.0 + 1.0, -1.0 * 3.0 + 2.0))
    assert c.stdev == pytest.approx((2.0, 3.0))


def test_corr_clamped():
    raw = np.zeros(7)
    raw[6] = 50.0
    assert abs(mdn_activate(raw, NormStats.identity()).components[0].corr) < 1


@given(st.lists(st.floats(-30, 30), min_size=19, max_size=19))
def test_activation_always_valid(raw):
    step = mdn_activate(np.array(raw), STATS)  # MdnStep validates itself
    assert abs(sum(c.weight for c in step.components) - 1) <= 1e-6


# ---------------------------------------------------------------- density


def test_density_at_mean():
    assert bivariate_density((0.0, 0.0), single().components[0]) == pytest.approx(1 / (2 * math.pi))
    assert 1 / (2 * math.pi) == pytest.approx(0.159155, abs=1e-6)


def test_density_factorises_without_correlation():
    x, y = 0.3, -0.7
    c = MixtureComponent(1.0, (0.0, 0.0), (1.0, 2.0), 0.0)
    n1 = math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    n2 = math.exp(-y * y / 8) / (2 * math.sqrt(2 * math.pi))
    assert bivariate_density((x, y), c) == pytest.approx(n1 * n2, rel=1e-12)


def test_density_integrates_to_one():
    c = MixtureComponent(1.0, (0.0, 0.0), (1.0, 1.0), 0.5)
    h = 1 / 50
    g = np.arange(-8, 8 + h / 2, h)
    X, Y = np.meshgrid(g, g)
    Z = (X ** 2 + Y ** 2 - 2 * 0.5 * X * Y) / (1 - 0.25)
    dens = np.exp(-Z / 2) / (2 * math.pi * math.sqrt(0.75))
    assert dens.sum() * h * h == pytest.approx(1.0, abs=1e-3)
    # the closed form used by the package agrees at sample points
    for px, py in [(0.1, 0.2), (-1.0, 0.5), (2.0, 2.0)]:
        z = (px ** 2 + py ** 2 - px * py) / 0.75
        assert bivariate_density((px, py), c) == pytest.approx(math.exp(-z / 2) / (2 * math.pi * math.sqrt(0.75)))


# ---------------------------------------------------------------- step loss


def test_step_loss_examples():
    assert step_loss(single(pad=0.5), FuturePoint(0.0, 0.0, False), 1.0, 10.0) - step_loss(
        single(pad=0.5), FuturePoint(0.0, 0.0, False), 0.0, 10.0) == pytest.approx(math.log(2))
    assert step_loss(single(), FuturePoint(0.0, 0.0, False), 0.0, 10.0) == pytest.approx(1.83788, abs=1e-5)
    st0 = single(mean=(1.0, -1.0), sd=(0.5, 2.0), rho=0.3)
    nll0 = step_loss(st0, FuturePoint(0.4, 0.2, False), 0.0, 10.0)
    nll1 = step_loss(st0, FuturePoint(0.4, 0.2, True), 0.0, 10.0)
    assert nll1 == pytest.approx(10 * nll0, rel=1e-12)


def test_step_loss_far_point_is_floored():
    val = step_loss(single(sd=(1e-3, 1e-3)), FuturePoint(1e6, 1e6, False), 1.0, 10.0)
    assert math.isfinite(val)
    assert val == pytest.approx(-math.log(1e-300) + math.log(2))


@given(st.lists(st.floats(-20, 20), min_size=13, max_size=13), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4),
       st.booleans())
def test_step_loss_finite(raw, x, y, g):
    step = mdn_activate(np.array(raw), STATS)
    assert math.isfinite(step_loss(step, FuturePoint(x, y, g), 1.0, 10.0))


def test_mixture_loglik_is_logsumexp():
    comps = (MixtureComponent(0.3, (0.0, 0.0), (1.0, 1.0), 0.0), MixtureComponent(0.7, (1.0, 0.0), (0.5, 2.0), -0.4))
    st0 = MdnStep(0.5, comps)
    p = (0.2, 0.3)
    direct = sum(c.weight * bivariate_density(p, c) for c in comps)
    assert mixture_log_likelihood(st0, p) == pytest.approx(math.log(direct), rel=1e-12)


def test_vectorised_loss_matches_step_loss():
    rng = np.random.default_rng(3)
    M = 3
    raw = rng.normal(size=(2, 5, 1 + 6 * M))
    truth = rng.normal(size=(2, 5, 2)) * 3
    pad = np.zeros((2, 5), bool)
    pad[0, 3:] = True
    per, _ = mdn_loss(raw, truth, pad, STATS, 1.0, 10.0, need_grad=False)
    mix = activate_arrays(raw, STATS, M)
    for b in range(2):
        ref = sum(step_loss(mix.step((b, k)), FuturePoint(*truth[b, k], bool(pad[b, k])), 1.0, 10.0) for k in range(5))
        assert per[b] == pytest.approx(ref, rel=1e-10)


# ---------------------------------------------------------------- encode / decode


def test_encode_deterministic_and_base_case():
    cfg = ModelConfig(M=2, h=1, p=3, lstm_width=8, lstm_layers=2)
    net = random_net(cfg)
    obs = np.array([[1.0, 2.0, 3.0, 0.1]])
    a, b = encode(obs, net), encode(obs, net)
    for x, y in zip(a.hidden + a.cell, b.hidden + b.cell):
        assert np.array_equal(x, y)
    # h = 1 equals one hand-rolled cell step per layer from zero state
    x = normalize(obs[0], STATS)[None]
    W = cfg.lstm_width
    for layer in range(cfg.lstm_layers):
        z = x @ net.params[f"lstm{layer}.Wx"] + net.params[f"lstm{layer}.b"]
        i, f, o, gg = (z[:, k * W:(k + 1) * W] for k in range(4))
        sig = lambda v: 1 / (1 + np.exp(-v))
        c = sig(i) * np.tanh(gg)
        hcur = sig(o) * np.tanh(c)
        assert np.allclose(a.hidden[layer], hcur) and np.allclose(a.cell[layer], c)
        x = hcur


def test_encode_order_sensitive():
    cfg = ModelConfig(M=2, h=5, p=3, lstm_width=8, lstm_layers=2)
    net = random_net(cfg)
    obs = random_obs(np.random.default_rng(0), 1, 5)[0]
    a = encode(obs, net)
    b = encode(obs[::-1], net)
    assert not np.allclose(a.hidden[-1], b.hidden[-1])


def test_zf_ignores_rng_and_fl_has_one_step():
    cfg = ModelConfig(M=2, h=3, p=6, lstm_width=8, lstm_layers=2)
    net = random_net(cfg)
    state = encode(random_obs(np.random.default_rng(1), 1, 3)[0], net)
    a = decode(state, net, None, "ZF", 6, np.random.default_rng(1))
    b = decode(state, net, None, "ZF", 6, np.random.default_rng(2))
    assert a == b and len(a) == 6
    assert len(decode(state, net, None, "FL", 6, np.random.default_rng(1))) == 1


def test_ff_reproducible_with_seed():
    cfg = ModelConfig(M=2, h=3, p=6, lstm_width=8, lstm_layers=2)
    net = random_net(cfg)
    state = encode(random_obs(np.random.default_rng(1), 1, 3)[0], net)
    a = decode(state, net, None, "FF", 6, np.random.default_rng(5))
    b = decode(state, net, None, "FF", 6, np.random.default_rng(5))
    c = decode(state, net, None, "FF", 6, np.random.default_rng(6))
    assert a == b and a != c


def test_predict_fl_rolls_out_full_length():
    cfg = ModelConfig(M=2, h=3, p=6, lstm_width=8, lstm_layers=2)
    net = random_net(cfg)
    raws = predict(random_obs(np.random.default_rng(1), 2, 3), net, "FL", rng=np.random.default_rng(0))
    assert raws.shape == (2, 6, 13)


@settings(max_examples=10)
@given(st.integers(0, 1000), st.sampled_from(["FF", "ZF", "FL"]))
def test_decoded_steps_valid(seed, variant):
    cfg = ModelConfig(M=3, h=4, p=8, lstm_width=8, lstm_layers=2)
    net = random_net(cfg, seed=seed % 7, jitter=1.0)
    rng = np.random.default_rng(seed)
    raws = predict(random_obs(rng, 3, 4), net, variant, rng=rng)
    for seq in to_sequences(raws, STATS, cfg.M, "FF" if variant == "FL" else variant):
        for stp in seq.steps:  # construction validates simplex, sigma and rho
            assert abs(sum(c.weight for c in stp.components) - 1) <= 1e-6


def test_sampler_mean():
    mix = activate_arrays(np.zeros((1, 7)), NormStats.identity(), 1)
    mix.mu[:] = [[3.0, -2.0]]
    rng = np.random.default_rng(0)
    draws = np.vstack([sample_mixture(mix, rng) for _ in range(10_000)])
    se = 1.0 / math.sqrt(10_000)
    assert abs(draws[:, 0].mean() - 3.0) < 3 * se
    assert abs(draws[:, 1].mean() + 2.0) < 3 * se


def test_sampler_correlation():
    raw = np.zeros((1, 7))
    raw[0, 6] = math.atanh(0.6)
    mix = activate_arrays(raw, NormStats.identity(), 1)
    rng = np.random.default_rng(1)
    d = np.vstack([sample_mixture(mix, rng) for _ in range(20_000)])
    assert np.corrcoef(d.T)[0, 1] == pytest.approx(0.6, abs=0.03)


def test_param_layout_matches_net():
    cfg = ModelConfig.desk()
    net = SeqNet.init(cfg, STATS, seed=0)
    assert net.n_params == sum(int(np.prod(s)) for _, s in param_layout(cfg))
    W = cfg.lstm_width
    b = net.params["lstm0.b"]
    assert np.all(b[W:2 * W] == 1.0) and np.all(b[:W] == 0) and np.all(b[2 * W:] == 0)
    lim = 1 / math.sqrt(4)
    assert np.abs(net.params["lstm0.Wx"]).max() <= lim
