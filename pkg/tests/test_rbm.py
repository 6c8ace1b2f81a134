import numpy as np
import pytest

from hoprbm.evaluation import (
    exact_model_correlation,
    log_likelihood,
    lnZ_enumerate,
    binary_states,
    visible_log_probs,
)
from hoprbm.forward_map import hn_to_rbm
from hoprbm.rbm import (
    GaussBernRBM,
    TrainConfig,
    cd_k_gradient,
    generate_samples,
    gibbs_chain,
    mean_hidden,
    sample_hidden,
    sample_visible,
    train,
    visible_prob,
)

from conftest import random_patterns


def toy(seed=0, n=6, p=2, beta=1.0, scale=0.5, biases=True):
    rng = np.random.default_rng(seed)
    b = rng.normal(scale=0.2, size=n) if biases else None
    c = rng.normal(scale=0.2, size=p) if biases else None
    return GaussBernRBM(rng.normal(scale=scale, size=(n, p)), b, c, beta)


def exact_samples(rbm, m, seed):
    probs = np.exp(visible_log_probs(rbm))
    idx = np.random.default_rng(seed).choice(len(probs), size=m, p=probs / probs.sum())
    return binary_states(rbm.n_visible)[idx]


def test_hidden_of_zero_model_is_standard_normal():
    rbm = GaussBernRBM(np.zeros((4, 3)))
    lam = sample_hidden(rbm, np.ones((100_000, 4)), np.random.default_rng(0))
    assert np.all(np.abs(lam.mean(axis=0)) < 0.02)


def test_mean_hidden_is_exact():
    rbm = toy()
    s = np.random.default_rng(1).choice([-1.0, 1.0], size=(5, 6))
    np.testing.assert_array_equal(mean_hidden(rbm, s), s @ rbm.W + rbm.c)


def test_hidden_variance_is_inverse_beta():
    rbm = toy(n=4, beta=2.5)
    s = np.tile([1.0, -1.0, 1.0, 1.0], (100_000, 1))
    lam = sample_hidden(rbm, s, np.random.default_rng(2))
    np.testing.assert_allclose(lam.var(axis=0), 1 / 2.5, rtol=0.02)
    np.testing.assert_allclose(lam.mean(axis=0), mean_hidden(rbm, s[0]), atol=0.01)


def test_visible_probabilities():
    rbm = GaussBernRBM(np.array([[1.0], [2.0]]), b=np.array([0.0, 0.0]), beta=5.0)
    p = visible_prob(rbm, np.array([0.0]))
    np.testing.assert_allclose(p, 0.5)
    p = visible_prob(rbm, np.array([1.0]))  # beta x = 5, 10
    assert p[1] > 1 - 1e-8
    assert p[0] == pytest.approx(1 / (1 + np.exp(-10.0)))


def test_visible_sampling_frequencies():
    rbm = toy(n=4, p=2, beta=0.7)
    lam = np.array([0.3, -0.8])
    s = sample_visible(rbm, np.tile(lam, (100_000, 1)), np.random.default_rng(3))
    freq = (s == 1).mean(axis=0)
    np.testing.assert_allclose(freq, visible_prob(rbm, lam), atol=0.01)


def test_block_gibbs_reaches_visible_marginal():
    rbm = toy(seed=4, n=6, p=2, beta=1.2, scale=0.35)
    probs = np.exp(visible_log_probs(rbm))
    rng = np.random.default_rng(5)
    s0 = rng.choice([-1.0, 1.0], size=(100_000, 6))
    s, _ = gibbs_chain(rbm, s0, 200, rng)
    codes = ((s > 0).astype(int) * (1 << np.arange(5, -1, -1))).sum(axis=1)
    emp = np.bincount(codes, minlength=64) / len(s)
    assert 0.5 * np.abs(emp - probs).sum() < 0.02


def exact_gradient(rbm, data):
    """Likelihood gradient without the beta prefactor."""
    positive = data.T @ mean_hidden(rbm, data) / len(data)
    return positive - exact_model_correlation(rbm)


def test_exact_gradient_oracle_matches_finite_differences():
    rbm = toy(seed=6, n=5, p=2)
    data = np.random.default_rng(7).choice([-1.0, 1.0], size=(40, 5))

    def ll(W):
        m = GaussBernRBM(W, rbm.b, rbm.c, rbm.beta)
        return log_likelihood(m, data, lnZ_enumerate(m))

    h = 1e-6
    fd = np.zeros_like(rbm.W)
    for i in range(5):
        for j in range(2):
            e = np.zeros_like(rbm.W)
            e[i, j] = h
            fd[i, j] = (ll(rbm.W + e) - ll(rbm.W - e)) / (2 * h)
    np.testing.assert_allclose(rbm.beta * exact_gradient(rbm, data), fd, atol=1e-7)


def cosine(a, b):
    return float(np.sum(a * b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_cd500_matches_exact_gradient():
    rbm = toy(seed=8, n=6, p=2)
    data = exact_samples(toy(seed=9, n=6, p=2, scale=1.0), 5000, seed=10)
    dW, _ = cd_k_gradient(rbm, data, 500, np.random.default_rng(11))
    assert cosine(dW, exact_gradient(rbm, data)) > 0.99


def test_cd_stationary_at_equilibrium():
    rbm = toy(seed=12, n=6, p=2)
    data = exact_samples(rbm, 20_000, seed=13)
    rng = np.random.default_rng(14)
    s_k, lam_k = gibbs_chain(rbm, data, 1, rng)
    per_sample = data[:, :, None] * mean_hidden(rbm, data)[:, None, :] - s_k[:, :, None] * lam_k[:, None, :]
    mean = per_sample.mean(axis=0)
    se = per_sample.std(axis=0, ddof=1) / np.sqrt(len(data))
    assert np.all(np.abs(mean) < 3 * se)
    dW, _ = cd_k_gradient(rbm, data, 1, np.random.default_rng(14))
    np.testing.assert_allclose(dW, mean, atol=1e-12)


def test_cd1_two_by_one_by_hand():
    W, c, beta = np.array([[0.5], [-0.3]]), np.array([0.2]), 2.0
    rbm = GaussBernRBM(W, c=c, beta=beta)
    s = np.array([[1.0, -1.0]])
    dW, _ = cd_k_gradient(rbm, s, 1, np.random.default_rng(0))
    rng = np.random.default_rng(0)
    h0 = 0.5 + 0.3 + 0.2
    lam = h0 + rng.standard_normal((1, 1))[0, 0] / np.sqrt(beta)
    u = rng.random((1, 2))[0]
    p_up = 1 / (1 + np.exp(-2 * beta * W[:, 0] * lam))
    s1 = np.where(u < p_up, 1.0, -1.0)
    lam1 = s1 @ W[:, 0] + 0.2 + rng.standard_normal((1, 1))[0, 0] / np.sqrt(beta)
    expect = np.array([[1.0 * h0 - s1[0] * lam1], [-1.0 * h0 - s1[1] * lam1]])
    np.testing.assert_allclose(dW, expect, atol=1e-14)


def test_zero_learning_rate_keeps_weights():
    rbm = toy()
    data = np.random.default_rng(0).choice([-1.0, 1.0], size=(50, 6))
    out, log = train(rbm, data, TrainConfig(lr=0.0, epochs=3, batch_size=10, cd_steps=2))
    np.testing.assert_array_equal(out.W, rbm.W)
    assert [m["epoch"] for m in log] == [0, 1, 2, 3]


def test_training_freezes_biases_and_is_seeded():
    rbm = toy()
    data = np.random.default_rng(0).choice([-1.0, 1.0], size=(64, 6))
    cfg = TrainConfig(lr=0.01, epochs=2, batch_size=16, cd_steps=3, seed=5)
    a, _ = train(rbm, data, cfg)
    b, _ = train(rbm, data, cfg)
    np.testing.assert_array_equal(a.b, rbm.b)
    np.testing.assert_array_equal(a.c, rbm.c)
    assert a.W.tobytes() == b.W.tobytes()
    assert not np.array_equal(a.W, rbm.W)
    np.testing.assert_array_equal(rbm.W, toy().W)  # input untouched


def test_training_raises_exact_likelihood():
    planted = GaussBernRBM(1.2 * random_patterns(np.random.default_rng(1), 16, 2) / 4, beta=1.0)
    data = exact_samples(planted, 2000, seed=2)
    start = GaussBernRBM(np.random.default_rng(3).normal(scale=0.01, size=(16, 2)), beta=1.0)
    lls = []

    def record(epoch, model, metrics):
        lls.append(log_likelihood(model, data, lnZ_enumerate(model)))

    train(start, data, TrainConfig(lr=0.01, epochs=10, batch_size=50, cd_steps=5, seed=4), [record])
    lls = np.array(lls)
    assert lls[-1] > lls[0] + 0.5
    assert np.all(np.diff(lls) > -0.02)


def test_generation_stays_at_pattern_when_cold():
    xi = random_patterns(np.random.default_rng(5), 20, 3)
    rbm = hn_to_rbm(xi, 200.0)
    out = generate_samples(rbm, xi.T, 20, np.random.default_rng(6))
    np.testing.assert_array_equal(out, xi.T)


def test_generation_from_zero_weights_is_uniform():
    rbm = GaussBernRBM(np.zeros((10, 2)))
    out = generate_samples(rbm, np.ones((20_000, 10)), 1, np.random.default_rng(7))
    assert np.all(np.abs(out.mean(axis=0)) < 0.03)
    with pytest.raises(ValueError):
        generate_samples(rbm, np.ones(10), 0, np.random.default_rng(0))


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="CD drift is ~32% after 5 epochs, seed-independent and mostly "
                   "outside the initial column span (see decisions ledger)")
def test_hopfield_init_changes_little_on_mnist(mnist_train):
    from hoprbm.baselines import InitSpec, make_init

    data = mnist_train.subset(10_000, seed=0)
    W, _ = make_init(InitSpec("hopfield", 1), data)
    rbm = GaussBernRBM(W, beta=2.0)
    out, _ = train(rbm, data, TrainConfig(lr=1e-4, batch_size=100, cd_steps=20, epochs=5, seed=0, beta=2.0))
    assert np.linalg.norm(out.W - W) / np.linalg.norm(W) < 0.3


@pytest.mark.slow
def test_generated_samples_keep_class(mnist_train, mnist_test):
    from hoprbm.poe import classify, init_experts, train_head

    ens = init_experts(mnist_train, "hopfield", 10)
    head = train_head(ens, mnist_train)
    test = mnist_test.subset(500, seed=1)
    rbms = ens.experts
    rng = np.random.default_rng(2)
    kept = []
    for s, y in zip(test.samples.astype(float), test.labels):
        out = generate_samples(rbms[y], s, 20, rng)
        kept.append(classify(ens, head, out) == y)
    assert np.mean(kept) > 0.5
