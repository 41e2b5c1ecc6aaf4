"""L2-regularized logistic regression.

The objective is the regularized mean negative log-likelihood

    J(w) = -(1/N) sum_i log p(y_i | x_i, w) + (lambda / 2) ||w||^2

which is strictly convex for lambda > 0. Binary models carry one weight
vector (p(class 1) = sigmoid(w.x)); multiclass models carry a d x C matrix
whose columns feed a softmax. There is no intercept.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax

from dpmask.dataset import LabeledDataset

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual_norm: float, params: "ModelParams"):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.params = params


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Classifier weights: shape ``(d,)`` for binary, ``(d, C)`` for multiclass."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim not in (1, 2):
            raise ValueError(f"weights must be 1-D or 2-D, got shape {w.shape}")
        if w.ndim == 2 and w.shape[1] < 2:
            raise ValueError("multiclass weights need at least two columns")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def mode(self) -> str:
        return "binary" if self.weights.ndim == 1 else "multiclass"

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return 2 if self.weights.ndim == 1 else self.weights.shape[1]

    def flat(self) -> np.ndarray:
        return self.weights.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    @classmethod
    def zeros(cls, d: int, n_classes: int = 2) -> "ModelParams":
        shape = (d,) if n_classes == 2 else (d, n_classes)
        return cls(np.zeros(shape))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "d": self.d,
            "C": self.n_classes,
            "weights": self.flat().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        w = np.asarray(data["weights"], dtype=np.float64).reshape(-1)
        d, c = int(data["d"]), int(data["C"])
        if data["mode"] == "binary":
            if c != 2 or w.size != d:
                raise ValueError("binary model needs C=2 and d weights")
            return cls(w)
        if data["mode"] != "multiclass":
            raise ValueError(f"unknown mode {data['mode']!r}")
        if w.size != d * c:
            raise ValueError(f"expected {d * c} weights, got {w.size}")
        return cls(w.reshape(d, c))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrainOptions:
    lam: float = 0.5
    tol: float = 1e-8
    max_iters: int = 10_000
    beta: float = 0.5
    armijo_c: float = 1e-4
    initial_step: float = 1.0
    solver: str = "newton"

    def __post_init__(self):
        if self.solver not in ("newton", "gd"):
            raise ValueError(f"solver must be 'newton' or 'gd', got {self.solver!r}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0 < self.armijo_c < 0.5:
            raise ValueError(f"armijo_c must lie in (0, 0.5), got {self.armijo_c}")


def _check_dims(params: ModelParams, d: int, n_classes: int | None = None):
    if params.d != d:
        raise ValueError(f"dimension mismatch: model d={params.d}, data d={d}")
    if n_classes is not None and params.n_classes != n_classes:
        raise ValueError(
            f"class-count mismatch: model C={params.n_classes}, data C={n_classes}"
        )


# Array-level kernels shared by the public functions and the trainer.


def _proba(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    if w.ndim == 1:
        p1 = expit(x @ w)
        return np.stack([1.0 - p1, p1], axis=-1)
    return softmax(x @ w, axis=-1)


def _loss(w: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    if w.ndim == 1:
        z = x @ w
        signed = np.where(y == 1, z, -z)
        nll = np.logaddexp(0.0, -signed)
    else:
        z = x @ w
        nll = logsumexp(z, axis=1) - z[np.arange(len(y)), y]
    return float(np.mean(nll) + 0.5 * lam * np.sum(w * w))


def _grad(w: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    n = len(y)
    if w.ndim == 1:
        err = (y == 1).astype(np.float64) - expit(x @ w)
    else:
        err = -softmax(x @ w, axis=1)
        err[np.arange(n), y] += 1.0
    return -(x.T @ err) / n + lam * w


def _hessian(w: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Hessian of the objective, over ``w`` flattened row-major."""
    n = len(y)
    if w.ndim == 1:
        p = expit(x @ w)
        h = (x.T * (p * (1.0 - p))) @ x / n
    else:
        p = softmax(x @ w, axis=1)
        s = np.einsum("ic,cl->icl", p, np.eye(w.shape[1])) - np.einsum("ic,il->icl", p, p)
        h = np.einsum("ij,ik,icl->jckl", x, x, s).reshape(w.size, w.size) / n
    return h + lam * np.eye(w.size)


def predict_proba(params: ModelParams, x) -> np.ndarray:
    """Class probabilities for one sample ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_dims(params, x.shape[-1])
    return _proba(params.weights, x)


def predict(params: ModelParams, x) -> np.ndarray:
    """Argmax class; ties go to the lower class index."""
    return np.argmax(predict_proba(params, x), axis=-1)


def objective(params: ModelParams, ds: LabeledDataset, lam: float) -> float:
    if ds.n == 0:
        raise ValueError("objective of an empty dataset")
    _check_dims(params, ds.d, None if params.mode == "binary" else ds.n_classes)
    return _loss(params.weights, ds.features, ds.labels, lam)


def gradient_residual(params: ModelParams, ds: LabeledDataset, lam: float) -> np.ndarray:
    """Gradient of :func:`objective`; zero exactly at the trained minimizer."""
    if ds.n == 0:
        raise ValueError("gradient of an empty dataset")
    _check_dims(params, ds.d, None if params.mode == "binary" else ds.n_classes)
    return _grad(params.weights, ds.features, ds.labels, lam)


def _binary_mode(ds: LabeledDataset) -> bool:
    return ds.n_classes == 2


def train(ds: LabeledDataset, opts: TrainOptions | None = None, init: ModelParams | None = None) -> ModelParams:
    """Minimize the objective from ``w = 0`` (or ``init``).

    Each iteration takes a descent direction (the Newton step by default,
    the negative gradient with ``solver="gd"``) and backtracks from
    ``opts.initial_step`` until the Armijo condition holds. Stops once the
    gradient norm is at most ``opts.tol``; otherwise raises
    :class:`ConvergenceError` carrying the last iterate.
    """
    opts = opts or TrainOptions()
    if ds.n == 0:
        raise ValueError("cannot train on an empty dataset")
    x, y, lam = ds.features, ds.labels, opts.lam
    if init is None:
        w = np.zeros(ds.d) if _binary_mode(ds) else np.zeros((ds.d, ds.n_classes))
    else:
        _check_dims(init, ds.d, None if init.mode == "binary" else ds.n_classes)
        w = np.array(init.weights)

    f = _loss(w, x, y, lam)
    g = _grad(w, x, y, lam)
    gnorm = float(np.linalg.norm(g))
    it = 0
    while gnorm > opts.tol:
        if it == opts.max_iters:
            raise ConvergenceError(
                f"no convergence in {opts.max_iters} iterations "
                f"(gradient norm {gnorm:.3e} > tol {opts.tol:.1e})",
                gnorm,
                ModelParams(w),
            )
        if opts.solver == "newton":
            step_dir = -np.linalg.solve(_hessian(w, x, y, lam), g.reshape(-1)).reshape(w.shape)
        else:
            step_dir = -g
        slope = float(np.sum(g * step_dir))
        step = opts.initial_step
        while True:
            w_new = w + step * step_dir
            f_new = _loss(w_new, x, y, lam)
            if f_new <= f + opts.armijo_c * step * slope:
                break
            if abs(slope) * step <= 1e-14 * max(1.0, abs(f)):
                # Predicted decrease is below float resolution of f; accept the
                # step if it shrinks the gradient instead.
                g_try = _grad(w_new, x, y, lam)
                if np.linalg.norm(g_try) < gnorm:
                    break
            step *= opts.beta
            if step < 1e-20:
                # Near the optimum the decrease drops below float resolution.
                if gnorm <= 10 * opts.tol:
                    return ModelParams(w)
                raise ConvergenceError(
                    f"line search stalled at gradient norm {gnorm:.3e}",
                    gnorm,
                    ModelParams(w),
                )
        w, f = w_new, f_new
        g = _grad(w, x, y, lam)
        gnorm = float(np.linalg.norm(g))
        it += 1
    logger.debug("trained in %d iterations, gradient norm %.2e", it, gnorm)
    return ModelParams(w)


def accuracy(params: ModelParams, validation: LabeledDataset) -> float:
    """Fraction of argmax predictions matching the labels."""
    if validation.n == 0:
        raise ValueError("accuracy on an empty validation set")
    pred = predict(params, validation.features)
    return float(np.mean(pred == validation.labels))
