import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from competevo import autodiff as ad
from competevo import policy as P
from competevo.errors import CheckpointError, DimensionError, NumericalError
from competevo.morphology import clamp_morph, species_template
from competevo.policy import GaussianDist, PolicyConfig

from oracles import SMALL_NET, gradcheck_error, random_small_problem, simpson

ANT = species_template("ant")


def test_init_deterministic_and_shapes():
    a = P.init_policy(ANT, "sumo", 7)
    b = P.init_policy(ANT, "sumo", 7)
    assert a.equal(b) and a.version == 0
    assert not a.equal(P.init_policy(ANT, "sumo", 8))
    bug = P.init_policy(species_template("bug"), "sumo", 0)
    assert P.tactics_dist(bug, np.zeros(42)).mean.shape == (6,)


@pytest.mark.parametrize("species", ["ant", "bug", "spider"])
def test_init_morph_mean_near_identity(species, rng):
    sp = species_template(species)
    p = P.init_policy(sp, "sumo", 3)
    for _ in range(20):
        mean = P.morph_dist(p, rng.uniform(0.9, 1.1, sp.param_count)).mean
        assert np.max(np.abs(mean - 1.0)) < 0.1


def test_log_std_init_within_bounds():
    p = P.init_policy(ANT, "sumo", 0)
    lo, hi = p.log_std_bounds
    for k in ("morph/log_std", "tactics/log_std"):
        assert np.all((p.arrays[k] >= lo) & (p.arrays[k] <= hi))


def _zeroed(p):
    q = p.copy()
    for k in q.arrays:
        if "/W" in k:
            q.arrays[k][:] = 0.0
    return q


def test_zero_weight_heads_return_bias(rng):
    p = _zeroed(P.init_policy(ANT, "sumo", 0))
    nb = {h: p.n_layers(h) - 1 for h in P.HEADS}
    for h in P.HEADS:
        p.arrays[f"{h}/b{nb[h]}"][:] = rng.normal(size=p.arrays[f"{h}/b{nb[h]}"].shape)
    x = rng.normal(size=20)
    obs = rng.normal(size=32)
    assert np.array_equal(P.morph_dist(p, x).mean, p.arrays[f"morph/b{nb['morph']}"])
    assert np.array_equal(P.tactics_dist(p, obs).mean, p.arrays[f"tactics/b{nb['tactics']}"])
    assert P.value(p, obs) == p.arrays[f"value/b{nb['value']}"][0]


def test_log_std_zero_gives_unit_std():
    d = GaussianDist(np.zeros(3), np.zeros(3))
    assert np.array_equal(d.std, np.ones(3))


def test_sampled_morph_clamped(rng):
    p = P.init_policy(ANT, "sumo", 0)
    p.arrays["morph/log_std"][:] = 1.0
    d = P.morph_dist(p, np.ones(20))
    for _ in range(200):
        m = clamp_morph(d.sample(rng), ANT)
        assert np.all((m.values >= 0.5) & (m.values <= 2.0))


def test_purity(rng):
    p = P.init_policy(ANT, "sumo", 0)
    before = p.copy()
    obs = rng.normal(size=32)
    d1, d2 = P.tactics_dist(p, obs), P.tactics_dist(p, obs)
    assert np.array_equal(d1.mean, d2.mean) and np.array_equal(d1.log_std, d2.log_std)
    assert P.value(p, obs) == P.value(p, obs)
    P.morph_dist(p, np.ones(20))
    P.backward(p, lambda t: ad.sum(P.mlp_t(t, p, "value", obs[None])))
    assert p.equal(before)


def test_tanh_interval_bound(rng):
    p = P.init_policy(ANT, "sumo", 1, PolicyConfig(tactics_hidden=(5,)))
    for k, a in p.arrays.items():
        p.arrays[k] = rng.normal(0, 2, a.shape)
    W, b = p.arrays["tactics/W1"], p.arrays["tactics/b1"]
    radius = np.abs(W).sum(axis=0)
    obs = rng.uniform(-10, 10, (1000, 32))
    mean = P.tactics_dist(p, obs).mean
    assert np.all(mean <= b + radius) and np.all(mean >= b - radius)


def test_log_prob_closed_forms():
    d = GaussianDist(np.zeros(1), np.zeros(1))
    assert math.isclose(P.log_prob(d, [0.0]), -0.9189385, abs_tol=5e-8)
    assert math.isclose(P.log_prob(d, [1.0]), -1.4189385, abs_tol=5e-8)
    with pytest.raises(DimensionError):
        P.log_prob(d, [0.0, 1.0])


@pytest.mark.parametrize("mu,log_std", [(0.0, 0.0), (1.3, -0.7), (-2.0, 0.9)])
def test_log_prob_quadrature(mu, log_std):
    d = GaussianDist(np.array([mu]), np.array([log_std]))
    s = math.exp(log_std)
    total = simpson(lambda x: np.exp([P.log_prob(d, [v]) for v in x]), mu - 12 * s, mu + 12 * s, 4000)
    assert abs(total - 1.0) <= 1e-6
    # probability of one sigma interval against the error function
    inner = simpson(lambda x: np.exp([P.log_prob(d, [v]) for v in x]), mu - s, mu + s, 2000)
    assert abs(inner - math.erf(1 / math.sqrt(2))) <= 1e-6


@pytest.mark.parametrize("dims", [1, 2, 3])
def test_log_prob_monte_carlo_integral(dims, rng):
    mean = rng.normal(0, 0.5, dims)
    log_std = rng.uniform(-0.5, 0.3, dims)
    d = GaussianDist(mean, log_std)
    half = 6.0
    lo, hi = mean - half, mean + half
    n = 200_000
    pts = rng.uniform(lo, hi, (n, dims))
    z = (pts - mean) * np.exp(-log_std)
    dens = np.exp(np.sum(-0.5 * z * z - log_std - P.HALF_LOG_2PI, axis=1))
    # spot-check the vectorised density against log_prob itself
    for i in range(50):
        assert math.isclose(dens[i], math.exp(P.log_prob(d, pts[i])), rel_tol=1e-12)
    estimate = dens.mean() * (2 * half) ** dims
    assert abs(estimate - 1.0) <= 0.02


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 1), min_size=1, max_size=6))
def test_entropy_closed_form(log_std):
    ls = np.array(log_std)
    d = GaussianDist(np.zeros_like(ls), ls)
    assert math.isclose(d.entropy(), math.fsum(0.5 + 0.5 * math.log(2 * math.pi) + v for v in ls),
                        rel_tol=1e-12, abs_tol=1e-12)
    assert math.isclose(float(P.gaussian_entropy_t(ad.Tensor(ls)).data), d.entropy(), rel_tol=1e-12, abs_tol=1e-12)


def test_value_finite_fuzz(rng):
    p = P.init_policy(ANT, "sumo", 2)
    v = P.value(p, rng.normal(0, 10, (10_000, 32)))
    assert v.shape == (10_000,) and np.all(np.isfinite(v))


def test_log_prob_grad_zero_at_mean(rng):
    mu = rng.normal(size=4)
    g = ad.grad(P.gaussian_log_prob_t(m := ad.Tensor(mu, name="mu"), ad.Tensor(np.zeros(4)), mu), {"mu": m})
    assert np.array_equal(g["mu"], np.zeros(4))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_ppo_loss(seed):
    p, mb = random_small_problem(seed)
    assert gradcheck_error(p, mb) <= 1e-4


def test_value_mse_linear_net(rng):
    p = P.init_policy(ANT, "sumo", 0, PolicyConfig(value_hidden=()))
    p.arrays["value/W0"] = rng.normal(size=(32, 1))
    p.arrays["value/b0"] = rng.normal(size=1)
    obs, ret = rng.normal(size=32), 0.7
    g = P.backward(p, lambda t: ad.sum(ad.square(ad.sub(ad.sum(P.mlp_t(t, p, "value", obs[None]), axis=-1), ret))))
    v = float(obs @ p.arrays["value/W0"][:, 0] + p.arrays["value/b0"][0])
    np.testing.assert_allclose(g["value/W0"][:, 0], 2 * (v - ret) * obs, rtol=1e-12)
    np.testing.assert_allclose(g["value/b0"], [2 * (v - ret)], rtol=1e-12)
    assert np.all(g["tactics/W0"] == 0)


def test_backward_linearity(rng):
    p, mb = random_small_problem(5)
    obs = rng.normal(size=(4, 32))

    def l1(t):
        return ad.sum(ad.square(P.mlp_t(t, p, "tactics", obs)))

    def l2(t):
        return ad.mean(P.mlp_t(t, p, "value", obs))

    g1, g2 = P.backward(p, l1), P.backward(p, l2)
    g12 = P.backward(p, lambda t: ad.add(l1(t), l2(t)))
    for k in g12:
        np.testing.assert_allclose(g12[k], g1[k] + g2[k], rtol=1e-13, atol=1e-15)


def test_non_finite_reports_parameter():
    p = P.init_policy(ANT, "sumo", 0)
    p.arrays["value/b2"][:] = np.inf
    with pytest.raises(NumericalError, match="value/"):
        P.backward(p, lambda t: ad.sum(P.mlp_t(t, p, "value", np.ones((1, 32)))))


def test_serialization_roundtrip():
    p = P.init_policy(species_template("spider"), "run_to_goal", 4, SMALL_NET).copy(version=7)
    q = P.params_from_bytes(P.params_to_bytes(p))
    assert q.equal(p) and np.array_equal(q.flat(), p.flat())
    assert q.archs == p.archs


def test_serialization_truncation_reports_offset():
    data = P.params_to_bytes(P.init_policy(ANT, "sumo", 0, SMALL_NET))
    with pytest.raises(CheckpointError, match="byte"):
        P.read_params(io.BytesIO(data[:-9]))
