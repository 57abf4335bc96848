import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meco.models import GaussianMeanModel, log_partition_gaussian
from meco.noise import ExactGaussianModelNoise, FittedGaussian
from meco.numerics import RngStream
from meco.optim import (
    AdamState,
    MecoConfig,
    MecoState,
    PlSchedule,
    adam_step,
    meco_init,
    meco_step,
    meco_update,
    ngd_step,
    pl_next_eta,
    schedule_from_config,
)

MODEL = GaussianMeanModel()
STD_NORMAL = FittedGaussian([0.0], [[1.0]])
SQRT_2PI = math.sqrt(2 * math.pi)


def _linear_ratio(theta, z):
    # p0(z)/q(z) for p0 = exp(theta z - z^2/2), q = N(0, 1)
    return SQRT_2PI * math.exp(theta * z)


def test_meco_two_step_hand_recursion():
    r = RngStream(77)
    xs = 16.0 + r.normal(size=3)
    zs = r.normal(size=3)
    gamma, beta, eta = 0.1, 0.9, 0.01
    cfg = MecoConfig(gamma=gamma, beta=beta, eta=eta, batch_data=1, batch_noise=1)

    theta = MODEL.params(0.0)
    state = meco_init(MODEL, theta, STD_NORMAL, [[xs[0]]], [[zs[0]]])
    for k in (1, 2):
        theta, state = meco_step(state, MODEL, theta, STD_NORMAL, [[xs[k]]], [[zs[k]]], cfg)

    # scalar linear-domain recursion written out by hand
    th = 0.0
    u = _linear_ratio(th, zs[0])
    v = -xs[0] + _linear_ratio(th, zs[0]) / u * zs[0]
    for k in (1, 2):
        u = (1 - gamma) * u + gamma * _linear_ratio(th, zs[k])
        v = (1 - beta) * v + beta * (-xs[k] + _linear_ratio(th, zs[k]) / u * zs[k])
        th = th - eta * v

    assert state.t == 3
    assert abs(math.exp(state.log_u) - u) <= 1e-12 * abs(u)
    assert abs(float(state.v[0]) - v) <= 1e-12 * max(1.0, abs(v))
    assert abs(float(theta.values[0]) - th) <= 1e-12 * max(1.0, abs(th))


def test_gamma_one_overwrites_u():
    state = MecoState(5.0, np.zeros(1))
    z = np.array([[0.7]])
    new = meco_update(state, MODEL, MODEL.params(0.3), STD_NORMAL, [[1.0]], z, 1.0, 0.9)
    expected = float(MODEL.log_unnorm(z, MODEL.params(0.3))[0] - STD_NORMAL.log_density(z)[0])
    assert new.log_u == expected


def test_beta_one_gives_fresh_gradient():
    th = MODEL.params(0.5)
    state = MecoState(0.2, np.array([123.0]))
    x, z = np.array([[1.5]]), np.array([[-0.4]])
    new = meco_update(state, MODEL, th, STD_NORMAL, x, z, 1.0, 1.0)
    ratio = math.exp(float(MODEL.log_unnorm(z, th)[0] - STD_NORMAL.log_density(z)[0]) - new.log_u)
    assert new.v[0] == pytest.approx(-1.5 + ratio * -0.4, abs=1e-14)


def test_init_single_noise_sample():
    th = MODEL.params(1.2)
    z = np.array([[0.3]])
    state = meco_init(MODEL, th, STD_NORMAL, [[2.0]], z)
    assert math.exp(state.log_u) == pytest.approx(_linear_ratio(1.2, 0.3), rel=1e-13)
    assert state.v[0] == pytest.approx(-2.0 + 0.3, abs=1e-13)
    assert state.t == 1 and state.clip_events == 0


def test_init_with_exact_noise_recovers_partition():
    th = 2.5
    q = ExactGaussianModelNoise(th)
    z = q.sample(RngStream(4), 32)
    state = meco_init(MODEL, MODEL.params(th), q, [[th]], z)
    assert abs(state.log_u - log_partition_gaussian(th)) < 1e-12


def test_init_deterministic():
    def run():
        r = RngStream(11)
        z = STD_NORMAL.sample(r, 8)
        return meco_init(MODEL, MODEL.params(0.0), STD_NORMAL, r.normal(size=(8, 1)), z)

    a, b = run(), run()
    assert a.log_u == b.log_u and np.array_equal(a.v, b.v)


def test_log_u_floor_counts_clip_events():
    q = FittedGaussian([0.0], [[1.0]])
    th = MODEL.params(-40.0)  # ratio ~ exp(-40 z) tiny for positive z
    z = np.array([[3.0]])
    state = MecoState(math.log(1e-8), np.zeros(1))
    new = meco_update(state, MODEL, th, q, [[0.0]], z, 1.0, 0.5)
    assert new.log_u == math.log(1e-8)
    assert new.clip_events == 1


def test_non_finite_noise_density_rejected():
    class Bad:
        def log_density(self, x):
            return np.full(len(x), -np.inf)

    with pytest.raises(ValueError, match="not finite"):
        meco_init(MODEL, MODEL.params(0.0), Bad(), [[0.0]], [[1.0]])


def _linear_meco(theta0, xs, zs, gamma, beta, eta, q_mean):
    # direct linear-domain implementation with mini-batches, for the equivalence check
    def ratio(th, z):
        return np.exp(th * z - 0.5 * z * z) / (np.exp(-0.5 * (z - q_mean) ** 2) / SQRT_2PI)

    th = theta0
    r0 = ratio(th, zs[0])
    u = r0.mean()
    v = -xs[0].mean() + np.mean(r0 / u * zs[0])
    for x, z in zip(xs[1:], zs[1:]):
        r = ratio(th, z)
        u = (1 - gamma) * u + gamma * r.mean()
        v = (1 - beta) * v + beta * (-x.mean() + np.mean(r / u * z))
        th = th - eta * v
    return th, u, v


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), theta0=st.floats(-3, 3), q_mean=st.floats(-2, 2))
def test_log_domain_matches_linear_domain(seed, theta0, q_mean):
    r = RngStream(seed)
    steps, b = 12, 4
    xs = 1.0 + r.normal(size=(steps, b))
    zs = q_mean + r.normal(size=(steps, b))
    q = FittedGaussian([q_mean], [[1.0]])
    cfg = MecoConfig(gamma=0.3, beta=0.6, eta=0.05, batch_data=b, batch_noise=b)
    th = MODEL.params(theta0)
    state = meco_init(MODEL, th, q, xs[0][:, None], zs[0][:, None])
    for k in range(1, steps):
        th, state = meco_step(state, MODEL, th, q, xs[k][:, None], zs[k][:, None], cfg)
    ref_th, ref_u, ref_v = _linear_meco(theta0, xs, zs, 0.3, 0.6, 0.05, q_mean)
    assert state.clip_events == 0
    assert abs(math.exp(state.log_u) - ref_u) <= 1e-10 * ref_u
    assert abs(state.v[0] - ref_v) <= 1e-10 * max(1.0, abs(ref_v))
    assert abs(th.values[0] - ref_th) <= 1e-10 * max(1.0, abs(ref_th))


def test_u_contraction_with_frozen_theta():
    th_val = 1.0
    th = MODEL.params(th_val)
    q = FittedGaussian([0.5], [[1.5]])
    z_true = math.exp(log_partition_gaussian(th_val))
    errs = []
    for seed in range(20):
        r = RngStream(seed, 3)
        state = meco_init(MODEL, th, q, [[1.0]], q.sample(r, 16))
        for _ in range(2000):
            state = meco_update(state, MODEL, th, q, [[1.0]], q.sample(r, 16), 0.1, 0.9)
        errs.append(abs(math.exp(state.log_u) - z_true) / z_true)
    assert np.mean(errs) < 0.05


# --- step-size schedules and generic optimizers ----------------------------------------

def test_pl_next_eta_examples():
    assert pl_next_eta(1.0, 2.0) == pytest.approx(1 / (1 + math.sqrt(2)), abs=1e-7)
    assert pl_next_eta(1.0, 2.0) == pytest.approx(0.4142136, abs=1e-7)
    assert pl_next_eta(0.3, 1e-14) == pytest.approx(0.3, rel=1e-12)


def test_pl_recursion_residual_and_monotone():
    mu, eta = 0.5, 1.0
    for _ in range(10_000):
        nxt = pl_next_eta(eta, mu)
        assert nxt < eta
        assert abs(1 - mu * nxt - nxt**2 / eta**2) < 1e-12
        eta = nxt


@pytest.mark.parametrize("mu,eta0", [(1.0, 1.0), (0.1, 0.5), (3.0, 2.0)])
def test_pl_eta_bound(mu, eta0):
    eta = eta0
    t_min = math.ceil(1 / (mu * eta0))
    for t in range(1, 5000):
        eta = pl_next_eta(eta, mu)
        if t >= t_min:
            assert eta <= 2 / (mu * t)


def test_pl_schedule_weights():
    s = PlSchedule(mu=1.0, eta0=1.0, c=1.0)
    assert s.eta(0) == 1.0
    assert s.eta(1) == pytest.approx(pl_next_eta(1.0, 1.0))
    assert s.weight(1) == 1.0
    assert s.weight(3) == pytest.approx(s.eta(2))
    cfg = MecoConfig(eta=s)
    assert cfg.rates(5) == (s.eta(5), s.eta(4), s.eta(4))
    assert schedule_from_config({"kind": "pl", "mu": 1, "eta0": 1}).eta(3) == s.eta(3)
    with pytest.raises(ValueError):
        schedule_from_config({"kind": "cosine"})


def test_ngd_examples():
    th = np.array([1.0, 2.0])
    g = np.array([3.0, 4.0])
    out = ngd_step(th, g, 0.1)
    assert np.linalg.norm(out - th) == pytest.approx(0.1, abs=1e-15)
    step = out - th
    assert np.dot(step, g) == pytest.approx(-np.linalg.norm(step) * np.linalg.norm(g), rel=1e-14)
    np.testing.assert_array_equal(ngd_step(th, np.zeros(2), 0.1), th)


def _scalar_adam(grads, eta, b1=0.9, b2=0.999, eps=1e-8):
    th, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        th -= eta * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(th)
    return out


def test_adam_first_step_and_zero_gradient():
    th, _ = adam_step(AdamState.zeros(1), np.zeros(1), np.ones(1), 0.1)
    assert th[0] == pytest.approx(-0.1, rel=1e-6)
    state, th = AdamState.zeros(2), np.array([1.0, -1.0])
    for _ in range(50):
        th, state = adam_step(state, th, np.zeros(2), 0.1)
    np.testing.assert_array_equal(th, [1.0, -1.0])


def test_adam_matches_scalar_reference():
    grads = RngStream(5).normal(size=100)
    ref = _scalar_adam(grads, 0.05)
    state, th = AdamState.zeros(1), np.zeros(1)
    for g, r in zip(grads, ref):
        th, state = adam_step(state, th, np.array([g]), 0.05)
        assert abs(th[0] - r) < 1e-10


def test_meco_config_validation():
    with pytest.raises(ValueError):
        MecoConfig(gamma=0.0)
    with pytest.raises(ValueError):
        MecoConfig(beta=1.5)
    with pytest.raises(ValueError):
        MecoConfig(eta=-1.0)
