"""Input perturbation baseline: publish every sample plus its own noise."""

from __future__ import annotations

import numpy as np

from dpmask.dataset import LabeledDataset
from dpmask.noise import ensure_bounded, input_perturb_sample


def input_perturbation(ds: LabeledDataset, epsilon: float, rng: np.random.Generator) -> LabeledDataset:
    """Add independent spherical-Laplace noise at rate epsilon/2 to each sample.

    Rows draw their noise in order from ``rng``, so the first k rows of a
    larger dataset receive the same noise as a k-row prefix would. Labels
    are published unchanged and the output is not renormalized.
    """
    ensure_bounded(ds, "input perturbation")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    noisy = np.array([input_perturb_sample(x, epsilon, rng) for x in ds.features]).reshape(ds.features.shape)
    return ds.replace(features=noisy, norm_bounded=False)
