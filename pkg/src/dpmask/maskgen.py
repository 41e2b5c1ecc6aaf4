"""Masked data generation.

Given a noisy classifier w' the generator grows a sample set S one point at a
time so that the unnormalized gradient residual

    g(S) = N * lambda * w' - sum_{i in S} (e_{y_i} - p(. | x_i, w')) x_i^T

is driven towards zero. Each new point minimizes ||g(S + {(x, y)})||^2 over
x by backtracking gradient descent from several random starts. Once |S| = N
and g = 0, w' is exactly the regularized logistic-regression fit of S, so a
user retraining on the release recovers w'. For binary models the
contribution of a sample is (1[y=1] - sigmoid(w'.x)) x.

In multiclass mode the column sum of g equals N * lambda * sum_c w'_c no
matter which samples are added, so only the component of g orthogonal to it
can be removed. That component does not affect softmax predictions.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from dpmask.dataset import LabeledDataset
from dpmask.model import ModelParams, TrainOptions, _grad, _proba, train
from dpmask.noise import PrivacyBudget, ensure_bounded, output_perturb

logger = logging.getLogger(__name__)


class SeedSetPrivacyWarning(UserWarning):
    """Seed samples are released verbatim and are outside the epsilon guarantee."""


@dataclass(frozen=True)
class MaskGenOptions:
    restarts: int = 5
    init_norm: float = 0.5
    tol: float = 1e-8
    max_iters: int = 500
    beta: float = 0.5
    armijo_c: float = 1e-4
    initial_step: float = 1.0
    radius: float | None = None

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not self.init_norm > 0:
            raise ValueError("init_norm must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.armijo_c < 0.5:
            raise ValueError("armijo_c must lie in (0, 0.5)")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive when given")


# --------------------------------------------------------------------------
# Compiled kernels: objective ||g - c(x, y)||^2 and its gradient in x.
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _binary_eval(x, y, w, g, grad):
    p = _sigmoid(np.dot(w, x))
    a = (1.0 if y == 1 else 0.0) - p
    r = g - a * x
    xr = np.dot(x, r)
    q = p * (1.0 - p)
    for j in range(x.shape[0]):
        grad[j] = -2.0 * (a * r[j] - q * xr * w[j])
    return np.dot(r, r)


@numba.njit(cache=True)
def _multiclass_eval(x, y, w, g, grad):
    # Explicit loops: tiny matmuls would otherwise dispatch to BLAS.
    d, n_classes = w.shape
    p = np.empty(n_classes)
    zmax = -np.inf
    for c in range(n_classes):
        z = 0.0
        for j in range(d):
            z += x[j] * w[j, c]
        p[c] = z
        if z > zmax:
            zmax = z
    total = 0.0
    for c in range(n_classes):
        p[c] = math.exp(p[c] - zmax)
        total += p[c]
    for c in range(n_classes):
        p[c] /= total
    # a = e_y - p;  r = g - x a^T;  s = x^T r
    a = -p
    a[y] += 1.0
    s = np.zeros(n_classes)
    f = 0.0
    for j in range(d):
        grad[j] = 0.0
    for c in range(n_classes):
        for j in range(d):
            r = g[j, c] - x[j] * a[c]
            f += r * r
            s[c] += x[j] * r
            grad[j] += r * a[c]
    sp_dot = 0.0
    for c in range(n_classes):
        sp_dot += s[c] * p[c]
    for j in range(d):
        wp = 0.0
        wsp = 0.0
        for c in range(n_classes):
            wp += w[j, c] * p[c]
            wsp += w[j, c] * s[c] * p[c]
        grad[j] = -2.0 * (grad[j] - wsp + wp * sp_dot)
    return f


@numba.njit(cache=True)
def _descend(evaluate, x0, y, w, g, tol, max_iters, beta, armijo_c, step0, radius):
    d = x0.shape[0]
    x = x0.copy()
    if radius > 0.0:
        nrm = math.sqrt(np.dot(x, x))
        if nrm > radius:
            x *= radius / nrm
    grad = np.empty(d)
    f = evaluate(x, y, w, g, grad)
    x_new = np.empty(d)
    grad_new = np.empty(d)
    for it in range(max_iters):
        if math.sqrt(np.dot(grad, grad)) <= tol:
            return x, f, it, True
        t = step0
        while True:
            for j in range(d):
                x_new[j] = x[j] - t * grad[j]
            if radius > 0.0:
                nrm = math.sqrt(np.dot(x_new, x_new))
                if nrm > radius:
                    x_new *= radius / nrm
            f_new = evaluate(x_new, y, w, g, grad_new)
            # Projected Armijo test; reduces to c * t * ||grad||^2 without projection.
            if f_new <= f - armijo_c * np.dot(grad, x - x_new):
                break
            t *= beta
            if t < 1e-20:
                return x, f, it, False
        x, x_new = x_new, x
        grad, grad_new = grad_new, grad
        f = f_new
    return x, f, max_iters, math.sqrt(np.dot(grad, grad)) <= tol


def _evaluator(w: np.ndarray):
    return _binary_eval if w.ndim == 1 else _multiclass_eval


# --------------------------------------------------------------------------
# State
# --------------------------------------------------------------------------


def contribution(x, y: int, w_prime: ModelParams) -> np.ndarray:
    """Term a sample adds to the likelihood-side sum: (e_y - p(x)) x^T."""
    x = np.asarray(x, dtype=np.float64)
    p = _proba(w_prime.weights, x)
    if w_prime.mode == "binary":
        return ((1.0 if y == 1 else 0.0) - p[1]) * x
    a = -p
    a[y] += 1.0
    return np.outer(x, a)


class MaskState:
    """The growing masked set S and its residual accumulator ``g``.

    ``g`` starts at ``N * lambda * w'`` and each appended sample subtracts
    its contribution, so ``g`` equals ``N`` times the gradient of the
    regularized objective at ``w'`` once ``|S| = N``.
    """

    def __init__(self, w_prime: ModelParams, lam: float, target_n: int):
        if target_n < 1:
            raise ValueError("target_n must be at least 1")
        self.w_prime = w_prime
        self.lam = float(lam)
        self.target_n = int(target_n)
        self.g = self.target_n * self.lam * np.array(w_prime.weights)
        self._x: list[np.ndarray] = []
        self._y: list[int] = []

    def __len__(self) -> int:
        return len(self._y)

    @property
    def samples(self) -> list[tuple[np.ndarray, int]]:
        return list(zip(self._x, self._y))

    def append(self, x, y: int) -> None:
        if len(self) >= self.target_n:
            raise ValueError(f"mask set already holds {self.target_n} samples")
        if not 0 <= y < self.w_prime.n_classes:
            raise ValueError(f"label {y} out of range")
        x = np.array(x, dtype=np.float64)
        if x.shape != (self.w_prime.d,):
            raise ValueError(f"sample has shape {x.shape}, expected ({self.w_prime.d},)")
        self.g -= contribution(x, y, self.w_prime)
        self._x.append(x)
        self._y.append(int(y))

    def to_dataset(self) -> LabeledDataset:
        d = self.w_prime.d
        x = np.array(self._x).reshape(-1, d)
        return LabeledDataset(x, np.array(self._y, dtype=np.int64), n_classes=self.w_prime.n_classes)

    def recompute_residual(self) -> np.ndarray:
        """``g`` rebuilt from scratch through the trainer's gradient."""
        w = self.w_prime.weights
        base = self.target_n * self.lam * w
        if not self._y:
            return base
        s = self.to_dataset()
        # grad_S(w) = -(1/|S|) sum contributions + lambda w
        return base + s.n * (_grad(w, s.features, s.labels, self.lam) - self.lam * w)


def residual_norm(state: MaskState) -> float:
    """Squared 2-norm of the residual accumulator."""
    return float(np.sum(state.g * state.g))


def _as_candidate(x_candidate, state: MaskState) -> np.ndarray:
    x = np.ascontiguousarray(x_candidate, dtype=np.float64)
    if x.shape != (state.w_prime.d,):
        raise ValueError(f"candidate has shape {x.shape}, expected ({state.w_prime.d},)")
    return x


def per_sample_objective(x_candidate, y: int, state: MaskState) -> float:
    """Residual norm of S after appending ``(x_candidate, y)``."""
    x = _as_candidate(x_candidate, state)
    w = state.w_prime.weights
    return float(_evaluator(w)(x, int(y), w, state.g, np.empty_like(x)))


def objective_gradient(x_candidate, y: int, state: MaskState) -> np.ndarray:
    x = _as_candidate(x_candidate, state)
    w = state.w_prime.weights
    grad = np.empty_like(x)
    _evaluator(w)(x, int(y), w, state.g, grad)
    return grad


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    objective: float
    converged: bool
    iterations: int
    restart: int


def solve_next_sample(y: int, state: MaskState, opts: MaskGenOptions, rng: np.random.Generator) -> SolveResult:
    """Best of ``opts.restarts`` descents from random starts of norm ``init_norm``.

    Ties on the objective go to the lowest restart index. If no descent beats
    the zero vector (which leaves ``g`` unchanged) the zero vector is
    returned, so appending the result never increases the residual.
    """
    w = state.w_prime.weights
    d = state.w_prime.d
    evaluate = _evaluator(w)
    g = np.ascontiguousarray(state.g)
    starts = rng.standard_normal((opts.restarts, d))
    norms = np.linalg.norm(starts, axis=1, keepdims=True)
    starts = opts.init_norm * starts / np.where(norms > 0, norms, 1.0)
    radius = -1.0 if opts.radius is None else float(opts.radius)

    best = None
    for k in range(opts.restarts):
        x, f, iters, ok = _descend(
            evaluate, starts[k], int(y), w, g,
            opts.tol, opts.max_iters, opts.beta, opts.armijo_c, opts.initial_step, radius,
        )
        if best is None or f < best.objective:
            best = SolveResult(x.copy(), float(f), bool(ok), int(iters), k)
    zero_obj = residual_norm(state)
    if best.objective > zero_obj:
        best = SolveResult(np.zeros(d), zero_obj, best.converged, best.iterations, -1)
    return best


def remaining_labels(labels: Sequence[int], seed_set: LabeledDataset | None, n: int) -> list[int]:
    """Labels of ``labels`` not already covered by the seed set, in order.

    Coverage is by class count (multiset difference); the result is cut to
    ``n - |seed_set|`` entries.
    """
    covered = Counter(seed_set.labels.tolist()) if seed_set is not None else Counter()
    out = []
    for y in labels:
        if covered[y] > 0:
            covered[y] -= 1
        else:
            out.append(int(y))
    budget = n - (len(seed_set) if seed_set is not None else 0)
    return out[:budget]


def generate_masked(
    labels: Sequence[int],
    w_prime: ModelParams,
    lam: float,
    seed_set: LabeledDataset | None,
    opts: MaskGenOptions | None,
    rng: np.random.Generator,
    diagnostics: list | None = None,
) -> LabeledDataset:
    """Seed set followed by one synthesized sample per entry of ``labels``.

    The output depends only on ``(labels, w_prime, lam, seed_set, opts)`` and
    the random stream. When ``diagnostics`` is a list, one dict per
    synthesized sample is appended to it.
    """
    opts = opts or MaskGenOptions()
    n_seed = 0 if seed_set is None else len(seed_set)
    target_n = n_seed + len(labels)
    if target_n == 0:
        raise ValueError("nothing to generate: empty seed set and no labels")
    state = MaskState(w_prime, lam, target_n)
    if seed_set is not None:
        if seed_set.d != w_prime.d:
            raise ValueError(f"seed set dimension {seed_set.d} != model dimension {w_prime.d}")
        for x, y in zip(seed_set.features, seed_set.labels):
            state.append(x, int(y))

    for step, y in enumerate(labels):
        result = solve_next_sample(int(y), state, opts, rng)
        state.append(result.x, int(y))
        if diagnostics is not None:
            diagnostics.append(
                {
                    "step": step,
                    "label": int(y),
                    "objective": result.objective,
                    "residual_norm": residual_norm(state),
                    "converged": result.converged,
                    "iterations": result.iterations,
                }
            )
        if not result.converged:
            logger.debug("sample %d did not reach tolerance (objective %.3e)", step, result.objective)

    final = math.sqrt(residual_norm(state)) / target_n
    logger.info("generated %d masked samples; mean residual %.3e", len(labels), final)
    if diagnostics is not None:
        diagnostics.append({"final_mean_residual": final, "n": target_n})
    return state.to_dataset()


def final_mean_residual(masked: LabeledDataset, w_prime: ModelParams, lam: float) -> float:
    """||g||_2 / N for a finished release, recomputed from the samples."""
    state = MaskState(w_prime, lam, masked.n)
    for x, y in zip(masked.features, masked.labels):
        state.append(x, int(y))
    return math.sqrt(residual_norm(state)) / masked.n


def mask_dataset(
    ds: LabeledDataset,
    budget: PrivacyBudget,
    seed_set: LabeledDataset | None = None,
    opts: MaskGenOptions | None = None,
    rng: np.random.Generator | None = None,
    *,
    train_opts: TrainOptions | None = None,
    noise_rng: np.random.Generator | None = None,
    diagnostics: list | None = None,
) -> tuple[LabeledDataset, ModelParams]:
    """Train, perturb the classifier, and synthesize a masked release.

    ``noise_rng`` draws the classifier noise (defaults to ``rng``); ``rng``
    drives the descent restarts. Returns the release and the noisy
    classifier it encodes.
    """
    ensure_bounded(ds, "masked data generation")
    if budget.n != ds.n:
        raise ValueError(f"budget is for N={budget.n} but the dataset has {ds.n} samples")
    if seed_set is not None and len(seed_set) > ds.n:
        raise ValueError(f"seed set has {len(seed_set)} samples, more than N={ds.n}")
    if seed_set is not None and len(seed_set) == 0:
        seed_set = None
    if seed_set is not None:
        warnings.warn(
            "seed-set samples are published as given and are not covered by the "
            "epsilon guarantee",
            SeedSetPrivacyWarning,
            stacklevel=2,
        )
    if rng is None:
        raise ValueError("a random generator is required")
    train_opts = train_opts or TrainOptions(lam=budget.lam)
    if train_opts.lam != budget.lam:
        raise ValueError("train_opts.lam must match budget.lam")

    w = train(ds, train_opts)
    w_prime = output_perturb(w, budget, noise_rng if noise_rng is not None else rng)
    labels = remaining_labels(ds.labels.tolist(), seed_set, ds.n)
    masked = generate_masked(labels, w_prime, budget.lam, seed_set, opts, rng, diagnostics)
    return masked, w_prime
