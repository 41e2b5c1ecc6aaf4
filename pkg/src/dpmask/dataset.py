"""Labeled datasets: CSV interchange, norm bounding, mixtures, splits, neighbors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

NORM_SLACK = 1e-12


class DatasetError(ValueError):
    pass


class CSVFormatError(DatasetError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(prefix + message)
        self.row = row
        self.column = column


class LabeledSample(NamedTuple):
    x: np.ndarray
    y: int


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with integer class labels in ``[0, n_classes)``.

    Arrays are copied and made read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 2
    norm_bounded: bool = False

    def __post_init__(self):
        x = _frozen(self.features)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features must be finite")
        y = np.array(self.labels, copy=True)
        if y.shape != (x.shape[0],):
            raise DatasetError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
            raise DatasetError("labels must be integers")
        y = y.astype(np.int64)
        if self.n_classes < 2:
            raise DatasetError("n_classes must be at least 2")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        y.flags.writeable = False
        if self.norm_bounded and x.size and max_norm(x) > 1.0 + NORM_SLACK:
            raise DatasetError("norm_bounded set but a sample has norm > 1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.features[i], int(self.labels[i]))

    @property
    def samples(self) -> list[LabeledSample]:
        return [self[i] for i in range(self.n)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.norm_bounded == other.norm_bounded
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    def replace(self, **changes) -> "LabeledDataset":
        kw = dict(
            features=self.features,
            labels=self.labels,
            n_classes=self.n_classes,
            norm_bounded=self.norm_bounded,
        )
        kw.update(changes)
        return LabeledDataset(**kw)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return self.replace(features=self.features[idx], labels=self.labels[idx])


def max_norm(features: np.ndarray) -> float:
    if len(features) == 0:
        return 0.0
    return float(np.max(np.linalg.norm(features, axis=1)))


def concat(first: LabeledDataset, second: LabeledDataset) -> LabeledDataset:
    if first.d != second.d:
        raise DatasetError(f"dimension mismatch: {first.d} vs {second.d}")
    return LabeledDataset(
        np.vstack([first.features, second.features]),
        np.concatenate([first.labels, second.labels]),
        n_classes=max(first.n_classes, second.n_classes),
        norm_bounded=first.norm_bounded and second.norm_bounded,
    )


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def _parse_label(cell: str, row: int, column: str) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise CSVFormatError(f"label {cell!r} is not a number", row, column) from None
    if not math.isfinite(value) or value != int(value):
        raise CSVFormatError(f"label {cell!r} is not an integer", row, column)
    return int(value)


def load_csv(
    path, label_column: str | int = "label", n_classes: int | None = None
) -> LabeledDataset:
    """Read a headed CSV with one sample per row.

    Every column other than the label column is a feature, in file order.
    Labels drawn from {-1, +1} are mapped to {0, 1}. Row numbers in errors
    are file line numbers, the header being row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        numbered = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if r]
    if not numbered:
        raise CSVFormatError(f"{path}: empty file")
    header = [h.strip() for h in numbered[0][1]]
    if isinstance(label_column, int):
        if not -len(header) <= label_column < len(header):
            raise CSVFormatError(f"label column index {label_column} out of range")
        label_idx = label_column % len(header)
    else:
        if label_column not in header:
            raise CSVFormatError(f"no column named {label_column!r} in header")
        label_idx = header.index(label_column)
    if len(numbered) == 1:
        raise CSVFormatError(f"{path}: no data rows")
    feature_idx = [j for j in range(len(header)) if j != label_idx]

    features = np.empty((len(numbered) - 1, len(feature_idx)))
    raw_labels = []
    for i, (lineno, row) in enumerate(numbered[1:]):
        if len(row) != len(header):
            raise CSVFormatError(
                f"expected {len(header)} cells, found {len(row)}", lineno
            )
        for k, j in enumerate(feature_idx):
            try:
                features[i, k] = float(row[j])
            except ValueError:
                raise CSVFormatError(
                    f"non-numeric feature {row[j]!r}", lineno, header[j]
                ) from None
            if not math.isfinite(features[i, k]):
                raise CSVFormatError(f"non-finite feature {row[j]!r}", lineno, header[j])
        raw_labels.append(_parse_label(row[label_idx].strip(), lineno, header[label_idx]))

    labels = np.array(raw_labels, dtype=np.int64)
    if labels.min() < 0:
        if not set(np.unique(labels)) <= {-1, 1}:
            raise CSVFormatError("negative labels are only allowed in the {-1, +1} encoding")
        labels = (labels > 0).astype(np.int64)
    if n_classes is None:
        n_classes = max(2, int(labels.max()) + 1)
    return LabeledDataset(features, labels, n_classes=n_classes)


def save_csv(ds: LabeledDataset, path) -> None:
    """Write ``f0,...,f{d-1},label``; floats use repr so reloads are exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(dataset_to_csv_text(ds))


def dataset_to_csv_text(ds: LabeledDataset) -> str:
    lines = [",".join([f"f{j}" for j in range(ds.d)] + ["label"])]
    for x, y in zip(ds.features.tolist(), ds.labels.tolist()):
        lines.append(",".join([repr(float(v)) for v in x] + [str(y)]))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Norm bounding
# --------------------------------------------------------------------------


def normalize_max_norm(ds: LabeledDataset) -> tuple[LabeledDataset, float]:
    """Divide every sample by the largest sample norm.

    Returns the rescaled dataset (flagged ``norm_bounded``) and the scale.
    """
    if ds.n == 0:
        raise DatasetError("cannot normalize an empty dataset")
    scale = max_norm(ds.features)
    if scale == 0.0:
        raise DatasetError("all samples are zero; max-norm scale would be 0")
    return rescale(ds, scale), scale


def rescale(ds: LabeledDataset, scale: float) -> LabeledDataset:
    """Divide features by a fixed ``scale``; the bound flag reflects the result."""
    if not scale > 0:
        raise DatasetError(f"scale must be positive, got {scale}")
    x = ds.features / scale
    return ds.replace(features=x, norm_bounded=max_norm(x) <= 1.0 + NORM_SLACK)


def clip_to_unit_ball(ds: LabeledDataset, scale: float = 1.0) -> LabeledDataset:
    """Divide by ``scale`` then project each sample onto the unit ball."""
    x = ds.features / scale
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    x = np.where(norms > 1.0, x / np.maximum(norms, 1.0), x)
    return ds.replace(features=x, norm_bounded=True)


def mark_norm_bounded(ds: LabeledDataset) -> LabeledDataset:
    """Flag a dataset that already lies in the unit ball (raises otherwise)."""
    if max_norm(ds.features) > 1.0 + NORM_SLACK:
        raise DatasetError(
            f"max sample norm {max_norm(ds.features):.6g} exceeds 1; normalize first"
        )
    return ds.replace(norm_bounded=True)


# --------------------------------------------------------------------------
# Gaussian mixtures
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureComponent:
    mean: tuple[float, ...]
    variance: float
    count: int

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise DatasetError(f"variance must be positive, got {self.variance}")
        if self.count < 1:
            raise DatasetError(f"count must be at least 1, got {self.count}")
        if not self.mean:
            raise DatasetError("mean must be non-empty")


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """One isotropic Gaussian per class; component ``c`` generates label ``c``."""

    components: tuple[MixtureComponent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) < 2:
            raise DatasetError("a mixture needs at least two classes")
        dims = {len(c.mean) for c in comps}
        if len(dims) != 1:
            raise DatasetError("all component means must share a dimension")

    @property
    def d(self) -> int:
        return len(self.components[0].mean)

    @property
    def n_classes(self) -> int:
        return len(self.components)

    @property
    def total(self) -> int:
        return sum(c.count for c in self.components)

    def resized(self, n: int) -> "GaussianMixtureSpec":
        """Same components with ``n`` samples split as evenly as possible."""
        counts = _even_counts(n, self.n_classes)
        return GaussianMixtureSpec(
            tuple(
                MixtureComponent(c.mean, c.variance, k)
                for c, k in zip(self.components, counts)
            )
        )

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixtureSpec":
        return cls(tuple(MixtureComponent(**c) for c in data["components"]))

    def to_dict(self) -> dict:
        return {
            "components": [
                {"mean": list(c.mean), "variance": c.variance, "count": c.count}
                for c in self.components
            ]
        }


def _even_counts(n: int, k: int) -> list[int]:
    if n < k:
        raise DatasetError(f"need at least {k} samples for {k} classes, got {n}")
    base, extra = divmod(n, k)
    return [base + (1 if c < extra else 0) for c in range(k)]


TOY_MEANS = ((0.0, 1.5), (1.0, 1.0), (1.0, -1.0))
TOY_VARIANCE = 0.25
DECOY_MEAN = (2.0, 2.0)


def toy_mixture_spec(n: int = 100, classes: Sequence[int] = (0, 1, 2)) -> GaussianMixtureSpec:
    """The three-Gaussian 2-D toy problem, optionally restricted to some classes.

    ``classes`` picks which of the three toy components to keep; they are
    relabelled 0..k-1 in the given order.
    """
    counts = _even_counts(n, len(classes))
    return GaussianMixtureSpec(
        tuple(
            MixtureComponent(TOY_MEANS[c], TOY_VARIANCE, k)
            for c, k in zip(classes, counts)
        )
    )


def gen_gaussian_mixture(spec: GaussianMixtureSpec, seed) -> LabeledDataset:
    """Draw ``count`` samples per class, then shuffle rows.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    blocks, labels = [], []
    for c, comp in enumerate(spec.components):
        blocks.append(
            rng.normal(loc=comp.mean, scale=math.sqrt(comp.variance), size=(comp.count, spec.d))
        )
        labels.append(np.full(comp.count, c, dtype=np.int64))
    x = np.vstack(blocks)
    y = np.concatenate(labels)
    order = rng.permutation(len(y))
    return LabeledDataset(x[order], y[order], n_classes=spec.n_classes)


# --------------------------------------------------------------------------
# Neighbors and splits
# --------------------------------------------------------------------------


def neighbor(ds: LabeledDataset, index: int, replacement: LabeledSample) -> LabeledDataset:
    """Copy of ``ds`` with the sample at ``index`` swapped for ``replacement``."""
    if not 0 <= index < ds.n:
        raise DatasetError(f"index {index} out of range for {ds.n} samples")
    x_new = np.asarray(replacement.x, dtype=np.float64)
    if x_new.shape != (ds.d,):
        raise DatasetError(f"replacement has shape {x_new.shape}, expected ({ds.d},)")
    if not 0 <= replacement.y < ds.n_classes:
        raise DatasetError(f"replacement label {replacement.y} out of range")
    x = ds.features.copy()
    y = ds.labels.copy()
    x[index] = x_new
    y[index] = replacement.y
    bounded = ds.norm_bounded and float(np.linalg.norm(x_new)) <= 1.0 + NORM_SLACK
    return ds.replace(features=x, labels=y, norm_bounded=bounded)


def split(ds: LabeledDataset, train_fraction: float, seed) -> tuple[LabeledDataset, LabeledDataset]:
    """Shuffle, then take ``floor(N * train_fraction)`` samples for training.

    Each part keeps at least one sample.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if ds.n < 2:
        raise DatasetError("need at least two samples to split")
    n_train = min(max(1, math.floor(ds.n * train_fraction)), ds.n - 1)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(ds.n)
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


NORMALIZE_MODES = ("max", "clip", "none")


def bound_norms(ds: LabeledDataset, mode: str = "max", scale: float | None = None) -> tuple[LabeledDataset, float]:
    """Bring ``ds`` into the unit ball; returns the dataset and the scale used.

    ``max`` divides by ``scale`` if given, else by the largest sample norm
    (note that this data-dependent scale is itself not private). ``clip``
    divides by ``scale`` (default 1) and projects outliers onto the sphere.
    ``none`` only checks that the data already lies in the ball.
    """
    if mode == "max":
        if scale is None:
            return normalize_max_norm(ds)
        return mark_norm_bounded(rescale(ds, scale)), float(scale)
    if mode == "clip":
        scale = 1.0 if scale is None else float(scale)
        return clip_to_unit_ball(ds, scale), scale
    if mode == "none":
        return mark_norm_bounded(ds), 1.0
    raise DatasetError(f"unknown normalization mode {mode!r}; choose from {NORMALIZE_MODES}")
