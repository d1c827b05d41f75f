"""Bundled synthetic datasets: generated locally, a few thousand rows, seeded.

Every dataset carries an ``age`` column used as the protected feature for the
group-disparity constraint.  The credit-style dataset couples age to the
label through one latent factor so disparity is non-trivial; the separable
dataset has two well-separated classes for sanity fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.datasets import make_classification

DEFAULT_AGE_BINS = (20, 30, 40, 50, 60, 70)


@dataclass
class Dataset:
    features: np.ndarray          # includes the age column
    labels: np.ndarray
    age: np.ndarray               # protected feature, years
    age_bins: tuple[int, ...]

    def protected_values(self, feature) -> np.ndarray:
        """Protected column: the bundled age feature or any column index."""
        if feature == "age":
            return self.age
        return self.features[:, int(feature)]

    def group_indices(self, idx: np.ndarray, feature="age",
                      bins=None) -> list[tuple[str, np.ndarray]]:
        """Partition a row-index subset by protected-feature bin.

        Empty bins are dropped; ``bins`` defaults to the dataset's age edges.
        """
        edges = tuple(bins) if bins else self.age_bins
        values = self.protected_values(feature)[idx]
        groups = []
        for lo, hi in zip(edges, edges[1:]):
            mask = (values >= lo) & (values < hi)
            if mask.any():
                groups.append((f"{lo}-{hi}", idx[mask]))
        return groups


def credit_risk(rows: int = 1600, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    x, y = make_classification(
        n_samples=rows, n_features=8, n_informative=5, n_redundant=1,
        weights=[0.7, 0.3], flip_y=0.04, class_sep=1.1, random_state=seed)
    # Age tracks one informative feature, so group-wise behavior differs.
    driver = x[:, 0]
    driver = (driver - driver.mean()) / (driver.std() + 1e-12)
    age = np.clip(45 + 10 * driver + rng.normal(0, 8, size=rows), 20, 69.99)
    features = np.column_stack([x, age])
    return Dataset(features, y, age, DEFAULT_AGE_BINS)


def separable(rows: int = 1200, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    half = rows // 2
    a = rng.normal(loc=-4.0, scale=0.6, size=(half, 6))
    b = rng.normal(loc=4.0, scale=0.6, size=(rows - half, 6))
    x = np.vstack([a, b])
    y = np.concatenate([np.zeros(half, dtype=int),
                        np.ones(rows - half, dtype=int)])
    order = rng.permutation(rows)
    x, y = x[order], y[order]
    age = rng.uniform(20, 69.99, size=rows)
    features = np.column_stack([x, age])
    return Dataset(features, y, age, DEFAULT_AGE_BINS)


LOADERS = {"credit": credit_risk, "separable": separable}


def load(name: str, rows: int, seed: int) -> Dataset:
    if name not in LOADERS:
        raise ValueError(f"unknown dataset {name!r} "
                         f"(available: {sorted(LOADERS)})")
    return LOADERS[name](rows=rows, seed=seed)
