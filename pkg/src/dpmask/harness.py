"""Accuracy-vs-epsilon sweeps and utility-bound checks.

Every repetition gets its own data draw and every (method, epsilon,
repetition) cell its own random streams, all derived from the master seed
by :func:`dpmask.noise.make_rng`. Results therefore do not depend on the
order or the parallelism in which cells run.

Within one repetition the N grid is paired: the training set for a smaller
N is a prefix of the one for a larger N, all N share one validation set,
and the noise streams are shared too (classifier noise radii scale exactly
with 1/N; input-perturbation rows draw noise in order). Each cell keeps the
distribution it would have under independent draws, but N-to-N
differences are far less noisy.

Stream layout under the master seed:

    (0, rep, 0) / (0, rep, 1)     mixture labels / mixture coordinates,
                                  or (0, rep) for a CSV subsample
    (0,)                          CSV validation hold-out
    (1, rep)                      mixture validation set
    (2, eps_bits, rep)            classifier noise (shared by mdg and
                                  output_perturb so both see the same w')
    (3, method_id, eps_bits, rep) method-specific randomness
    (4, method_id, eps_bits, rep) bound-check noise
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dpmask.dataset import (
    GaussianMixtureSpec,
    LabeledDataset,
    load_csv,
    normalize_max_norm,
    rescale,
    split,
    toy_mixture_spec,
)
from dpmask.maskgen import MaskGenOptions, mask_dataset
from dpmask.model import ConvergenceError, ModelParams, TrainOptions, accuracy, objective, train
from dpmask.noise import PrivacyBudget, ensure_bounded, float_key, make_rng, output_perturb
from dpmask.perturb import input_perturbation

logger = logging.getLogger(__name__)

METHODS = ("mdg", "input_perturb", "output_perturb")
METHOD_IDS = {"mdg": 1, "input_perturb": 2, "output_perturb": 3}
DEFAULT_EPSILONS = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
SWEEP_HEADER = ("method", "epsilon", "n", "mean_accuracy", "std_accuracy", "reps")

_DATA, _VALIDATION, _NOISE, _METHOD, _BOUND = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class SweepConfig:
    """What to sweep. Exactly one data source: a mixture spec or a CSV path.

    For mixtures every repetition draws fresh training data of size N plus
    ``validation_size`` validation samples. For CSV sources a
    ``validation_fraction`` share is held out once and each repetition
    subsamples N training rows from the remainder.
    """

    mixture: GaussianMixtureSpec | None = None
    csv_path: str | None = None
    label_column: str = "label"
    ns: tuple[int, ...] = (100, 200)
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    lam: float = 0.5
    repetitions: int = 50
    methods: tuple[str, ...] = METHODS
    validation_size: int = 1000
    validation_fraction: float = 0.3
    seed: int = 0
    jobs: int = 1
    mask_options: MaskGenOptions = field(default_factory=MaskGenOptions)

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.mixture is None and self.csv_path is None:
            object.__setattr__(self, "mixture", toy_mixture_spec())
        if self.mixture is not None and self.csv_path is not None:
            raise ValueError("give either a mixture spec or a CSV path, not both")
        if not self.ns or not self.epsilons or not self.methods:
            raise ValueError("N grid, epsilon grid and method list must be non-empty")
        if any(n < 1 for n in self.ns):
            raise ValueError("every N must be positive")
        if any(not e > 0 for e in self.epsilons):
            raise ValueError("every epsilon must be positive")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.validation_size < 1:
            raise ValueError("validation_size must be at least 1")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


@dataclass(frozen=True)
class SweepRecord:
    method: str
    epsilon: float
    n: int
    mean_accuracy: float
    std_accuracy: float
    repetitions: int


@dataclass(frozen=True)
class BoundReport:
    method: str
    delta: float
    bound: float
    gaps: tuple[float, ...]
    violation_rate: float
    epsilon: float = 0.0
    n: int = 0
    dim: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "n": self.n,
            "dim": self.dim,
            "bound": self.bound,
            "violation_rate": self.violation_rate,
            "max_gap": max(self.gaps),
            "mean_gap": float(np.mean(self.gaps)),
            "gaps": list(self.gaps),
        }


# --------------------------------------------------------------------------
# Data per repetition
# --------------------------------------------------------------------------


def _csv_pool(config: SweepConfig) -> tuple[LabeledDataset, LabeledDataset]:
    full = load_csv(config.csv_path, config.label_column)
    return split(full, 1.0 - config.validation_fraction, make_rng(config.seed, _DATA))


def sample_mixture(spec: GaussianMixtureSpec, n: int, label_rng, coord_rng) -> LabeledDataset:
    """``n`` i.i.d. draws; class c has probability count_c / total.

    Labels and coordinates come from separate streams, so the first k rows
    do not depend on ``n``.
    """
    counts = np.array([c.count for c in spec.components], dtype=np.float64)
    labels = label_rng.choice(spec.n_classes, size=n, p=counts / counts.sum())
    means = np.array([c.mean for c in spec.components])
    sds = np.sqrt([c.variance for c in spec.components])
    z = coord_rng.standard_normal((n, spec.d))
    return LabeledDataset(means[labels] + sds[labels, None] * z, labels, n_classes=spec.n_classes)


def repetition_data(config: SweepConfig, n: int, rep: int, pool=None) -> tuple[LabeledDataset, LabeledDataset]:
    """Normalized training set of size ``n`` and its validation set.

    Validation samples are rescaled with the training set's max-norm scale,
    so they may fall slightly outside the unit ball.
    """
    seed = config.seed
    if config.mixture is not None:
        raw = sample_mixture(
            config.mixture, n, make_rng(seed, _DATA, rep, 0), make_rng(seed, _DATA, rep, 1)
        )
        vrng = make_rng(seed, _VALIDATION, rep)
        val = sample_mixture(config.mixture, config.validation_size, vrng, vrng)
    else:
        pool_train, val = pool if pool is not None else _csv_pool(config)
        if pool_train.n < n:
            raise ValueError(f"CSV training pool has {pool_train.n} rows, fewer than N={n}")
        raw = pool_train.subset(make_rng(seed, _DATA, rep).permutation(pool_train.n)[:n])
    train_ds, scale = normalize_max_norm(raw)
    return train_ds, rescale(val, scale)


# --------------------------------------------------------------------------
# Methods
# --------------------------------------------------------------------------


def _fit(ds: LabeledDataset, lam: float) -> ModelParams:
    try:
        return train(ds, TrainOptions(lam=lam))
    except ConvergenceError as err:
        # Released data can be badly conditioned; keep the last iterate.
        logger.warning("retraining did not converge: %s", err)
        return err.params


def run_method(
    method: str,
    train_ds: LabeledDataset,
    val_ds: LabeledDataset,
    epsilon: float,
    lam: float,
    rng: np.random.Generator,
    *,
    noise_rng: np.random.Generator | None = None,
    mask_options: MaskGenOptions | None = None,
    trained: ModelParams | None = None,
) -> float:
    """Validation accuracy of one privacy method on one training set.

    ``mdg`` retrains on the masked release; ``input_perturb`` retrains on the
    perturbed samples; ``output_perturb`` scores the noisy classifier itself.
    ``noise_rng`` (default ``rng``) draws the classifier noise for ``mdg``
    and ``output_perturb``. ``trained`` may supply the non-private fit.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    ensure_bounded(train_ds, method)
    noise_rng = rng if noise_rng is None else noise_rng
    budget = PrivacyBudget(epsilon, lam, train_ds.n)
    if method == "input_perturb":
        released = input_perturbation(train_ds, epsilon, rng)
        return accuracy(_fit(released, lam), val_ds)
    if method == "output_perturb":
        w = trained if trained is not None else train(train_ds, TrainOptions(lam=lam))
        return accuracy(output_perturb(w, budget, noise_rng), val_ds)
    masked, _ = mask_dataset(train_ds, budget, None, mask_options, rng, noise_rng=noise_rng)
    return accuracy(_fit(masked, lam), val_ds)


def _repetition_cells(config: SweepConfig, n: int, rep: int, pool=None) -> dict:
    train_ds, val_ds = repetition_data(config, n, rep, pool)
    w = train(train_ds, TrainOptions(lam=config.lam))
    out = {}
    for method in config.methods:
        for eps in config.epsilons:
            key = float_key(eps)
            out[(method, eps)] = run_method(
                method,
                train_ds,
                val_ds,
                eps,
                config.lam,
                make_rng(config.seed, _METHOD, METHOD_IDS[method], key, rep),
                noise_rng=make_rng(config.seed, _NOISE, key, rep),
                mask_options=config.mask_options,
                trained=w,
            )
    return out


def _run_task(args):
    config, n, rep = args
    return n, rep, _repetition_cells(config, n, rep)


def sweep(config: SweepConfig, out_path=None) -> list[SweepRecord]:
    """One record per (method, epsilon, N), in config order."""
    tasks = [(config, n, rep) for n in config.ns for rep in range(config.repetitions)]
    results: dict[tuple[int, int], dict] = {}
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for n, rep, cells in pool.map(_run_task, tasks):
                results[(n, rep)] = cells
    else:
        pool = _csv_pool(config) if config.csv_path is not None else None
        for _, n, rep in tasks:
            results[(n, rep)] = _repetition_cells(config, n, rep, pool)
            logger.info("finished N=%d repetition %d", n, rep)

    records = []
    for method in config.methods:
        for n in config.ns:
            for eps in config.epsilons:
                acc = np.array([results[(n, rep)][(method, eps)] for rep in range(config.repetitions)])
                records.append(
                    SweepRecord(method, eps, n, float(np.mean(acc)), float(np.std(acc)), config.repetitions)
                )
    if out_path is not None:
        Path(out_path).write_text(records_to_csv(records), encoding="utf-8")
    return records


def records_to_csv(records: list[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in records:
        writer.writerow(
            [r.method, repr(r.epsilon), r.n, repr(r.mean_accuracy), repr(r.std_accuracy), r.repetitions]
        )
    return buf.getvalue()


def read_records(path) -> list[SweepRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        SweepRecord(
            r["method"],
            float(r["epsilon"]),
            int(r["n"]),
            float(r["mean_accuracy"]),
            float(r["std_accuracy"]),
            int(r["reps"]),
        )
        for r in rows
    ]


# --------------------------------------------------------------------------
# Utility bounds
# --------------------------------------------------------------------------


def utility_bound(method: str, dim: int, delta: float, lam: float, n: int, epsilon: float) -> float:
    """High-probability bound on J(w') - J(w).

    ``0.5 * (2 d log(d / delta) / (lambda N epsilon))^2 * (lambda + 1)`` for
    output perturbation; input perturbation drops the N.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    denom = lam * epsilon * (n if method == "output_perturb" else 1)
    if method not in ("output_perturb", "input_perturb"):
        raise ValueError(f"no utility bound for method {method!r}")
    return 0.5 * (2.0 * dim * math.log(dim / delta) / denom) ** 2 * (lam + 1.0)


def bound_check(
    method: str,
    config: SweepConfig,
    delta: float,
    epsilon: float | None = None,
    n: int | None = None,
) -> BoundReport:
    """Empirical J(w') - J(w) against the analytic bound over repetitions.

    ``epsilon`` and ``n`` default to the first entries of the config grids.
    The bound's dimension is that of the noise vector: the parameter count
    for output perturbation, the feature dimension for input perturbation.
    """
    if method not in ("output_perturb", "input_perturb"):
        raise ValueError(f"bound_check supports output_perturb and input_perturb, not {method!r}")
    epsilon = config.epsilons[0] if epsilon is None else float(epsilon)
    n = config.ns[0] if n is None else int(n)
    pool = _csv_pool(config) if config.csv_path is not None else None
    gaps, dim = [], None
    for rep in range(config.repetitions):
        train_ds, _ = repetition_data(config, n, rep, pool)
        w = train(train_ds, TrainOptions(lam=config.lam))
        rng = make_rng(config.seed, _BOUND, METHOD_IDS[method], float_key(epsilon), rep)
        if method == "output_perturb":
            w_prime = output_perturb(w, PrivacyBudget(epsilon, config.lam, n), rng)
            dim = w.weights.size
        else:
            w_prime = _fit(input_perturbation(train_ds, epsilon, rng), config.lam)
            dim = train_ds.d
        gaps.append(objective(w_prime, train_ds, config.lam) - objective(w, train_ds, config.lam))
    bound = utility_bound(method, dim, delta, config.lam, n, epsilon)
    violations = float(np.mean(np.array(gaps) > bound))
    return BoundReport(method, delta, bound, tuple(gaps), violations, epsilon, n, dim)


def with_overrides(config: SweepConfig, **changes) -> SweepConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
