"""Synthetic tabular datasets for tests, demos, and desk-scale benchmarks.

`make_blobs` produces separable Gaussian clusters. `make_sensor_panel`
mimics a multi-sensor diagnostic table: a 44-feature, 2-class panel in the
0..100 range where informative channels differ by class, many channels are
noisy correlated copies of others, and a few are pure noise. Both are fully
seeded, so the committed data/panel44.csv is reproducible byte for byte.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import Dataset, make_split


def make_blobs(
    n_samples: int = 200,
    n_features: int = 4,
    n_classes: int = 2,
    seed: int = 0,
    spread: float = 0.08,
    test_fraction: float = 0.3,
) -> Dataset:
    """Well-separated class clusters in [0, 1]^d."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(n_classes, n_features))
    labels = rng.integers(0, n_classes, size=n_samples)
    feats = np.clip(centers[labels] + rng.normal(0.0, spread, (n_samples, n_features)), 0.0, 1.0)
    train_idx, test_idx = make_split(n_samples, test_fraction, seed)
    return Dataset(feats, labels, train_idx, test_idx)


def make_sensor_panel(
    n_samples: int = 267,
    n_features: int = 44,
    n_classes: int = 2,
    seed: int = 7,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw feature matrix and labels for the 44-channel panel benchmark.

    Individual channels are weakly informative (small class shift under
    heavy per-channel noise), so a classifier needs to pool evidence across
    many of them; a third of the channels are noisy copies of others and a
    handful are pure noise.
    """
    rng = np.random.default_rng(seed)
    n_informative = max(4, (2 * n_features) // 3)
    n_noise = max(2, n_features // 10)
    n_copies = n_features - n_informative - n_noise

    class_shift = rng.uniform(3.0, 9.0, size=(n_classes, n_informative))
    base_level = rng.uniform(25.0, 60.0, size=n_informative)
    labels = rng.integers(0, n_classes, size=n_samples)

    informative = (
        base_level
        + class_shift[labels]
        + rng.normal(0.0, 9.0, (n_samples, n_informative))
    )
    sources = rng.integers(0, n_informative, size=n_copies)
    copies = informative[:, sources] + rng.normal(0.0, 5.0, (n_samples, n_copies))
    noise = rng.uniform(0.0, 100.0, (n_samples, n_noise))

    feats = np.concatenate([informative, copies, noise], axis=1)
    order = rng.permutation(n_features)
    feats = np.clip(np.round(feats[:, order]), 0.0, 100.0)
    return feats, labels


def write_panel_csv(path, n_samples: int = 267, n_features: int = 44, seed: int = 7) -> None:
    feats, labels = make_sensor_panel(n_samples=n_samples, n_features=n_features, seed=seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"ch{c:02d}" for c in range(n_features)] + ["diagnosis"])
        for row, label in zip(feats, labels):
            writer.writerow([f"{v:g}" for v in row] + [int(label)])


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else "data/panel44.csv"
    write_panel_csv(target)
    print(f"wrote {target}")
