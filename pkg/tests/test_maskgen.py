import math

import numpy as np
import pytest

from dpmask.dataset import DECOY_MEAN, LabeledDataset, gen_gaussian_mixture, rescale, toy_mixture_spec
from dpmask.dataset import GaussianMixtureSpec, MixtureComponent, normalize_max_norm
from dpmask.maskgen import (
    MaskGenOptions,
    MaskState,
    SeedSetPrivacyWarning,
    contribution,
    final_mean_residual,
    generate_masked,
    mask_dataset,
    objective_gradient,
    per_sample_objective,
    remaining_labels,
    residual_norm,
    solve_next_sample,
)
from dpmask.model import ModelParams, TrainOptions, gradient_residual, predict, train
from dpmask.noise import PrivacyBudget, make_rng
from tests.conftest import toy


def random_state(rng, binary, d=None, appended=3):
    d = d or int(rng.integers(1, 11))
    c = 2 if binary else 3
    w = ModelParams(rng.normal(size=d) if binary else rng.normal(size=(d, c)))
    state = MaskState(w, float(rng.uniform(0.1, 1.0)), appended + 5)
    for _ in range(appended):
        state.append(rng.normal(size=d), int(rng.integers(c)))
    return state


def test_residual_examples(toy_binary):
    w = train(toy_binary, TrainOptions(tol=1e-10))
    state = MaskState(w, 0.5, toy_binary.n)
    for x, y in toy_binary.samples:
        state.append(x, y)
    assert residual_norm(state) <= (toy_binary.n * 1e-10) ** 2
    assert residual_norm(MaskState(ModelParams.zeros(3), 0.5, 4)) == 0.0


@pytest.mark.parametrize("binary", [True, False])
def test_incremental_residual_matches_recomputation(binary):
    rng = np.random.default_rng(21 if binary else 22)
    d, c = 4, (2 if binary else 3)
    w = ModelParams(rng.normal(size=d) if binary else rng.normal(size=(d, c)))
    state = MaskState(w, 0.5, 1200)
    worst = 0.0
    for _ in range(1200):
        state.append(rng.normal(size=d) * rng.uniform(0, 3), int(rng.integers(c)))
        worst = max(worst, float(np.max(np.abs(state.g - state.recompute_residual()))))
    assert worst <= 1e-9


def test_recompute_agrees_with_trainer_gradient(toy3):
    # With |S| = N the residual is N times the objective gradient.
    w = ModelParams(np.random.default_rng(0).normal(size=(2, 3)))
    state = MaskState(w, 0.5, toy3.n)
    for x, y in toy3.samples:
        state.append(x, y)
    np.testing.assert_allclose(state.g, toy3.n * gradient_residual(w, toy3, 0.5), atol=1e-10)


def test_append_validation():
    state = MaskState(ModelParams.zeros(2), 0.5, 1)
    with pytest.raises(ValueError):
        state.append([0.0, 0.0, 0.0], 0)
    with pytest.raises(ValueError):
        state.append([0.0, 0.0], 2)
    state.append([0.0, 0.0], 1)
    with pytest.raises(ValueError):
        state.append([0.0, 0.0], 1)


def test_objective_examples():
    rng = np.random.default_rng(3)
    for binary in (True, False):
        state = random_state(rng, binary, d=3, appended=0)
        state.g[...] = 0.0
        assert per_sample_objective(np.zeros(3), 1, state) == 0.0
        x = rng.normal(size=3)
        expect = float(np.sum(contribution(x, 1, state.w_prime) ** 2))
        assert per_sample_objective(x, 1, state) == pytest.approx(expect, rel=1e-12)


def test_objective_equals_residual_after_append():
    rng = np.random.default_rng(4)
    for k in range(100):
        state = random_state(rng, k % 2 == 0)
        x = rng.normal(size=state.w_prime.d)
        y = int(rng.integers(state.w_prime.n_classes))
        f = per_sample_objective(x, y, state)
        state.append(x, y)
        assert f == pytest.approx(residual_norm(state), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("binary", [True, False])
def test_objective_gradient_matches_finite_differences(binary):
    rng = np.random.default_rng(31 if binary else 32)
    # Objectives reach ~1e3 while some gradients are ~1e-2, so a tiny step
    # drowns in roundoff.
    h = 1e-4
    worst = 0.0
    for _ in range(100):
        state = random_state(rng, binary)
        d = state.w_prime.d
        x = rng.normal(size=d)
        y = int(rng.integers(state.w_prime.n_classes))
        fd = np.array(
            [
                (per_sample_objective(x + h * e, y, state) - per_sample_objective(x - h * e, y, state)) / (2 * h)
                for e in np.eye(d)
            ]
        )
        g = objective_gradient(x, y, state)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-6))
    assert worst < 1e-5


def test_solver_reaches_zero_when_residual_is_zero():
    state = MaskState(ModelParams(np.array([0.7, -0.3])), 0.5, 3)
    state.g[...] = 0.0
    res = solve_next_sample(1, state, MaskGenOptions(), make_rng(0))
    assert per_sample_objective(res.x, 1, state) <= 1e-6


@pytest.mark.parametrize("y", [0, 1])
def test_one_dimensional_solver_matches_grid_search(y):
    # g = N * lam * w' = 0.5 cannot be cancelled by one sample, so the
    # minimizer is the unique point of largest contribution.
    state = MaskState(ModelParams(np.array([1.0])), 0.5, 1)
    grid = np.linspace(-10, 10, 2_000_001)
    contrib = ((1.0 if y == 1 else 0.0) - 1.0 / (1.0 + np.exp(-grid))) * grid
    x_grid = grid[np.argmin((state.g[0] - contrib) ** 2)]
    res = solve_next_sample(y, state, MaskGenOptions(), make_rng(1))
    assert abs(res.x[0] - x_grid) < 1e-3


def test_solver_deterministic_and_never_worse_than_zero():
    rng = np.random.default_rng(5)
    for k in range(30):
        state = random_state(rng, k % 2 == 0, appended=2)
        y = int(rng.integers(state.w_prime.n_classes))
        a = solve_next_sample(y, state, MaskGenOptions(), make_rng(k))
        b = solve_next_sample(y, state, MaskGenOptions(), make_rng(k))
        np.testing.assert_array_equal(a.x, b.x)
        assert a.objective <= residual_norm(state)


def test_projection_radius():
    state = MaskState(ModelParams(np.array([3.0, 0.0])), 0.5, 50)
    res = solve_next_sample(1, state, MaskGenOptions(radius=0.2), make_rng(0))
    assert np.linalg.norm(res.x) <= 0.2 + 1e-12


def test_remaining_labels_multiset():
    seed = LabeledDataset(np.zeros((3, 1)), [2, 0, 2], n_classes=3)
    assert remaining_labels([0, 1, 2, 2, 2, 0], seed, 6) == [1, 2, 0]
    assert remaining_labels([0, 0, 0], seed, 3) == []
    assert remaining_labels([1, 0], None, 2) == [1, 0]


def test_seed_set_equal_to_data_is_noop(toy_binary):
    w = ModelParams(np.array([0.2, -0.1]))
    out = generate_masked([], w, 0.5, toy_binary, None, make_rng(0))
    np.testing.assert_array_equal(out.features, toy_binary.features)
    assert final_mean_residual(out, w, 0.5) == pytest.approx(
        toy_binary.n * np.linalg.norm(gradient_residual(w, toy_binary, 0.5)) / toy_binary.n
    )


def test_full_seed_set_skips_synthesis(toy_binary):
    with pytest.warns(SeedSetPrivacyWarning):
        out, _ = mask_dataset(toy_binary, PrivacyBudget(1.0, 0.5, 100), toy_binary, rng=make_rng(0))
    np.testing.assert_array_equal(out.features, toy_binary.features)
    np.testing.assert_array_equal(out.labels, toy_binary.labels)


def test_mask_preconditions(toy_binary):
    with pytest.raises(ValueError):
        mask_dataset(toy_binary.replace(norm_bounded=False), PrivacyBudget(1.0, 0.5, 100), rng=make_rng(0))
    with pytest.raises(ValueError):
        mask_dataset(toy_binary, PrivacyBudget(1.0, 0.5, 99), rng=make_rng(0))
    with pytest.raises(ValueError):
        mask_dataset(toy_binary, PrivacyBudget(1.0, 0.5, 100))


def test_same_seed_same_release(toy_binary):
    b = PrivacyBudget(2.0, 0.5, 100)
    a, wa = mask_dataset(toy_binary, b, rng=make_rng(3))
    c, wc = mask_dataset(toy_binary, b, rng=make_rng(3))
    assert a == c and wa == wc
    assert a.labels.tolist() == toy_binary.labels.tolist()


def test_release_depends_only_on_w_prime_and_labels():
    d1, d2 = toy(60, (0, 1), 1), toy(60, (0, 1), 2)
    d2 = d2.replace(labels=d1.labels)
    w = ModelParams(np.array([0.4, 0.1]))
    r1 = generate_masked(d1.labels.tolist(), w, 0.5, None, None, make_rng(8))
    r2 = generate_masked(d2.labels.tolist(), w, 0.5, None, None, make_rng(8))
    assert r1 == r2


def test_residual_never_increases(toy_binary):
    diag = []
    mask_dataset(toy_binary, PrivacyBudget(1.0, 0.5, 100), rng=make_rng(0), diagnostics=diag)
    norms = [row["residual_norm"] for row in diag[:-1]]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
    assert diag[-1]["n"] == 100 and diag[-1]["final_mean_residual"] >= 0


@pytest.mark.parametrize("epsilon", [1e9, 50.0])
def test_retraining_recovers_w_prime(toy_binary, epsilon):
    masked, w_prime = mask_dataset(toy_binary, PrivacyBudget(epsilon, 0.5, 100), rng=make_rng(0))
    resid = final_mean_residual(masked, w_prime, 0.5)
    gap = np.linalg.norm(train(masked).weights - w_prime.weights)
    assert resid <= 1e-3
    # Strong convexity with modulus lambda.
    assert gap <= resid / 0.5 + 1e-9
    assert gap <= 1e-2
    if epsilon == 1e9:
        assert np.linalg.norm(train(masked).weights - train(toy_binary).weights) <= 1e-2


def _centered(w):
    return w - w.mean(axis=1, keepdims=True)


def test_multiclass_release_with_decoy_seed_set():
    raw = gen_gaussian_mixture(toy_mixture_spec(100), 0)
    ds, scale = normalize_max_norm(raw)
    decoy_spec = GaussianMixtureSpec(
        (MixtureComponent((0.0, 0.0), 1.0, 1), MixtureComponent((0.0, 0.0), 1.0, 1), MixtureComponent(DECOY_MEAN, 0.25, 10))
    )
    decoys = gen_gaussian_mixture(decoy_spec, 1)
    decoys = decoys.subset(np.flatnonzero(decoys.labels == 2))
    seed_set = decoys.replace(features=decoys.features / scale)
    with pytest.warns(SeedSetPrivacyWarning):
        masked, w_prime = mask_dataset(ds, PrivacyBudget(1e9, 0.5, 100), seed_set, rng=make_rng(0))
    np.testing.assert_array_equal(masked.features[:10], seed_set.features)
    assert masked.n == 100
    retrained = train(masked)
    np.testing.assert_allclose(_centered(retrained.weights), _centered(w_prime.weights), atol=1e-2)
    val = rescale(gen_gaussian_mixture(toy_mixture_spec(1000), 2), scale)
    agree = np.mean(predict(retrained, val.features) == predict(w_prime, val.features))
    assert agree >= 0.99
