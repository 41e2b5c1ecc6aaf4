import numpy as np
import pytest
from scipy import stats

from dpmask.dataset import LabeledSample, neighbor
from dpmask.model import ModelParams, TrainOptions, train
from dpmask.noise import (
    NoiseRate,
    PrivacyBudget,
    PrivacyPreconditionError,
    ensure_bounded,
    float_key,
    input_perturb_sample,
    input_privacy_loss,
    log_density_unnormalized,
    make_rng,
    output_perturb,
    output_privacy_loss,
    sample_spherical_laplace,
    sensitivity_bound,
)
from tests.conftest import toy

DRAWS = 10**5


def draws(rate, seed=0, k=DRAWS):
    rng = make_rng(seed)
    return np.array([sample_spherical_laplace(rate, rng) for _ in range(k)])


def test_budget_rates():
    b = PrivacyBudget(1.0, 0.5, 100)
    assert b.output_rate == 25.0 and b.input_rate == 0.5
    assert NoiseRate(25.0, 2).mean_norm == pytest.approx(0.08)
    with pytest.raises(ValueError):
        PrivacyBudget(0.0, 0.5, 100)
    with pytest.raises(ValueError):
        NoiseRate(1.0, 0)


def test_norm_moments_match_gamma():
    rate = NoiseRate(PrivacyBudget(1.0, 0.5, 100).output_rate, 2)
    norms = np.linalg.norm(draws(rate), axis=1)
    assert abs(norms.mean() / 0.08 - 1) < 0.03
    assert abs(norms.var() / (2 / 25.0**2) - 1) < 0.05


def test_one_dimensional_draws_are_laplace():
    eta = draws(NoiseRate(1.0, 1), seed=3)[:, 0]
    assert stats.kstest(eta, stats.laplace(scale=1.0).cdf).pvalue > 0.01
    assert stats.kstest(np.abs(eta), stats.expon().cdf).pvalue > 0.01


@pytest.mark.parametrize("dim", [2, 5, 10])
def test_direction_is_uniform(dim):
    eta = draws(NoiseRate(2.0, dim), seed=dim)
    u = eta / np.linalg.norm(eta, axis=1, keepdims=True)
    assert np.linalg.norm(u.mean(axis=0)) < 0.02


def test_same_seed_same_vector():
    rate = NoiseRate(3.0, 4)
    np.testing.assert_array_equal(
        sample_spherical_laplace(rate, make_rng(7, 1)), sample_spherical_laplace(rate, make_rng(7, 1))
    )
    assert not np.array_equal(
        sample_spherical_laplace(rate, make_rng(7, 1)), sample_spherical_laplace(rate, make_rng(7, 2))
    )


def test_stream_keys():
    assert float_key(1.0) == 0x3FF0000000000000
    assert float_key(0.1) != float_key(0.2)
    with pytest.raises(ValueError):
        make_rng(-1)


def test_log_density_ratio_identity():
    rng = np.random.default_rng(0)
    rate = NoiseRate(25.0, 3)
    assert log_density_unnormalized(np.zeros(3), rate) == 0.0
    for _ in range(1000):
        e1, e2 = rng.normal(size=3), rng.normal(size=3)
        lhs = log_density_unnormalized(e1, rate) - log_density_unnormalized(e2, rate)
        rhs = -25.0 * (np.linalg.norm(e1) - np.linalg.norm(e2))
        # Equal up to rounding of the two subtractions.
        assert abs(lhs - rhs) <= 4 * np.finfo(float).eps * 25.0 * (np.linalg.norm(e1) + np.linalg.norm(e2))


def test_log_ratio_bounded_for_close_weights():
    rng = np.random.default_rng(1)
    b = PrivacyBudget(0.7, 0.5, 100)
    for _ in range(2000):
        w1 = rng.normal(size=2)
        step = rng.normal(size=2)
        w2 = w1 + step / np.linalg.norm(step) * rng.uniform() * sensitivity_bound(b.lam, b.n)
        target = w1 + rng.normal(size=2) * rng.uniform(0, 5)
        assert abs(output_privacy_loss(w1, w2, target, b)) <= b.epsilon * (1 + 1e-12)


def test_output_perturb_displacement():
    w = ModelParams(np.array([0.3, -0.2]))
    b = PrivacyBudget(1.0, 0.5, 100)
    rng = make_rng(5)
    disp = [np.linalg.norm(output_perturb(w, b, rng).weights - w.weights) for _ in range(DRAWS)]
    assert abs(np.mean(disp) / 0.08 - 1) < 0.03
    huge = output_perturb(w, PrivacyBudget(1e9, 0.5, 100), make_rng(0))
    assert np.linalg.norm(huge.weights - w.weights) < 1e-6
    np.testing.assert_array_equal(output_perturb(w, b, make_rng(9)).weights, output_perturb(w, b, make_rng(9)).weights)


def test_multiclass_output_perturb_keeps_shape():
    w = ModelParams(np.zeros((2, 3)))
    assert output_perturb(w, PrivacyBudget(1.0, 0.5, 100), make_rng(0)).weights.shape == (2, 3)


def test_input_noise_mean_norm():
    rng = make_rng(2)
    x = np.array([0.1, 0.2])
    disp = [np.linalg.norm(input_perturb_sample(x, 1.0, rng) - x) for _ in range(DRAWS)]
    assert abs(np.mean(disp) / 4.0 - 1) < 0.03
    np.testing.assert_allclose(input_perturb_sample(x, 1e9, rng), x, atol=1e-6)


def test_input_privacy_loss_triangle():
    rng = np.random.default_rng(4)
    eps = 1.3
    for _ in range(2000):
        x1, x2 = [v * rng.uniform() ** 0.5 / np.linalg.norm(v) for v in rng.normal(size=(2, 3))]
        released = rng.normal(size=3) * 3
        loss = input_privacy_loss(x1, x2, released, eps)
        assert loss == pytest.approx(
            (eps / 2) * (np.linalg.norm(released - x2) - np.linalg.norm(released - x1)), abs=1e-12
        )
        assert abs(loss) <= eps + 1e-12


def test_privacy_loss_on_trained_neighbors():
    rng = np.random.default_rng(8)
    b = PrivacyBudget(1.0, 0.5, 100)
    for trial in range(30):
        d1 = toy(100, (0, 1), 500 + trial)
        z = rng.normal(size=2)
        d2 = neighbor(d1, int(rng.integers(100)), LabeledSample(z / np.linalg.norm(z), int(rng.integers(2))))
        w1, w2 = train(d1, TrainOptions(lam=b.lam)), train(d2, TrainOptions(lam=b.lam))
        for _ in range(20):
            target = output_perturb(w1, b, rng).weights
            assert abs(output_privacy_loss(w1.weights, w2.weights, target, b)) <= b.epsilon


def test_ensure_bounded(toy_binary):
    ensure_bounded(toy_binary, "test")
    with pytest.raises(PrivacyPreconditionError):
        ensure_bounded(toy_binary.replace(norm_bounded=False), "test")
