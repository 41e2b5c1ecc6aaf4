"""Spherical-Laplace noise: density proportional to exp(-s * ||eta||_2).

A draw factors into a uniform direction on the unit sphere times a norm
distributed as Gamma(shape=dim, rate=s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dpmask.dataset import LabeledDataset
from dpmask.model import ModelParams


def make_rng(master_seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``stream`` under ``master_seed``.

    The stream index tuple becomes the ``spawn_key`` of a
    :class:`numpy.random.SeedSequence`, so every (seed, index...) pair maps
    to its own PCG64 stream no matter the order in which streams are made.
    """
    if master_seed < 0 or master_seed >= 2**64:
        raise ValueError("master seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(i) for i in stream))
    return np.random.Generator(np.random.PCG64(ss))


def float_key(value: float) -> int:
    """Stable integer stream index for a float (its IEEE-754 bit pattern)."""
    return int(np.float64(value).view(np.uint64))


@dataclass(frozen=True)
class NoiseRate:
    s: float
    dim: int

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError(f"noise rate must be positive and finite, got {self.s}")
        if self.dim < 1:
            raise ValueError(f"dimension must be at least 1, got {self.dim}")

    @property
    def mean_norm(self) -> float:
        return self.dim / self.s


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    lam: float
    n: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")

    @property
    def output_rate(self) -> float:
        """Rate for perturbing a classifier whose sensitivity is 2/(lambda N)."""
        return self.lam * self.n * self.epsilon / 2.0

    @property
    def input_rate(self) -> float:
        return self.epsilon / 2.0


def sample_spherical_laplace(rate: NoiseRate, rng: np.random.Generator) -> np.ndarray:
    direction = rng.standard_normal(rate.dim)
    # A zero Gaussian draw has probability zero; redraw rather than divide by it.
    while not np.any(direction):
        direction = rng.standard_normal(rate.dim)
    direction /= np.linalg.norm(direction)
    radius = rng.gamma(shape=rate.dim, scale=1.0 / rate.s)
    return radius * direction


def log_density_unnormalized(eta, rate: NoiseRate) -> float:
    """``-s * ||eta||``; the normalizing constant cancels in density ratios."""
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    if eta.size != rate.dim:
        raise ValueError(f"expected a {rate.dim}-vector, got size {eta.size}")
    return -rate.s * float(np.linalg.norm(eta))


def output_perturb(params: ModelParams, budget: PrivacyBudget, rng: np.random.Generator) -> ModelParams:
    """Add noise at rate lambda*N*epsilon/2 to the classifier weights.

    Multiclass weights are perturbed as one flattened d*C vector at the same
    rate; the epsilon guarantee is only established for binary models.
    """
    rate = NoiseRate(budget.output_rate, params.weights.size)
    eta = sample_spherical_laplace(rate, rng)
    return ModelParams(params.weights + eta.reshape(params.weights.shape))


def input_perturb_sample(x, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return x + sample_spherical_laplace(NoiseRate(epsilon / 2.0, x.size), rng)


def output_privacy_loss(w1, w2, target, budget: PrivacyBudget) -> float:
    """log p(w' = target | w1) - log p(w' = target | w2) under output noise."""
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    rate = NoiseRate(budget.output_rate, t.size)
    return log_density_unnormalized(t - np.ravel(w1), rate) - log_density_unnormalized(
        t - np.ravel(w2), rate
    )


def input_privacy_loss(x1, x2, released, epsilon: float) -> float:
    """Log density ratio of one released sample under two candidate originals."""
    r = np.asarray(released, dtype=np.float64)
    rate = NoiseRate(epsilon / 2.0, r.size)
    return log_density_unnormalized(r - x1, rate) - log_density_unnormalized(r - x2, rate)


def sensitivity_bound(lam: float, n: int) -> float:
    return 2.0 / (lam * n)


class PrivacyPreconditionError(ValueError):
    """Input violates an assumption the epsilon guarantee depends on."""


def ensure_bounded(ds: LabeledDataset, what: str) -> None:
    if not ds.norm_bounded:
        raise PrivacyPreconditionError(
            f"{what} requires a norm-bounded dataset (every ||x|| <= 1); "
            "normalize it first"
        )
