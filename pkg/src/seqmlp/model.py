"""Float MLP data model, CSV dataset ingestion, and a deterministic trainer.

The network shape is fixed to one ReLU hidden layer and an identity output
layer; the predicted class is the argmax of the output values with ties
broken toward the lowest index. Everything downstream (quantization,
pruning, circuit generation) builds on this model.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Malformed dataset file or schema mismatch."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MlpModel:
    """One-hidden-layer perceptron with ReLU hidden activation.

    w1 is (n_hidden, n_inputs), w2 is (n_classes, n_hidden); biases match
    their layer's row count. Arrays are frozen after construction.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, _frozen(arr))
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("weight matrices must be 2-D")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError(
                f"output layer expects {self.w2.shape[1]} hidden units, "
                f"hidden layer has {self.w1.shape[0]}"
            )
        if self.b1.shape != (self.w1.shape[0],) or self.b2.shape != (self.w2.shape[0],):
            raise ValueError("bias shape does not match its layer")

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[0]


def float_infer(model: MlpModel, sample) -> tuple[int, np.ndarray, np.ndarray]:
    """Evaluate one sample; returns (class, hidden activations, output values).

    Class is the argmax of the output values; equal values resolve to the
    lowest class index.
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.shape != (model.n_inputs,):
        raise ValueError(f"sample has shape {x.shape}, expected ({model.n_inputs},)")
    h = np.maximum(model.w1 @ x + model.b1, 0.0)
    out = model.w2 @ h + model.b2
    return int(np.argmax(out)), h, out


@dataclass(frozen=True)
class DatasetSchema:
    """How to read a CSV into features and labels.

    label_column may be a header name or a column index; drop_columns lists
    columns (by name or index) to discard before ingestion, e.g. categorical
    identifiers.
    """

    label_column: str | int = -1
    drop_columns: tuple = ()
    test_fraction: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class Dataset:
    """Tabular classification data with a fixed train/test split.

    Normalization parameters (per-feature min/max) come from the train split
    only; `normalized` maps train features into [0, 1] and clamps test
    features into the same range.
    """

    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    feature_names: tuple = ()
    feature_min: np.ndarray = field(init=False)
    feature_max: np.ndarray = field(init=False)

    def __post_init__(self):
        feats = _frozen(np.asarray(self.features, dtype=np.float64))
        labels = _frozen(np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train_idx", _frozen(np.asarray(self.train_idx, dtype=np.int64)))
        object.__setattr__(self, "test_idx", _frozen(np.asarray(self.test_idx, dtype=np.int64)))
        if not np.all(np.isfinite(feats)):
            raise DatasetError("features contain non-finite values")
        if labels.min(initial=0) < 0:
            raise DatasetError("labels must be non-negative class indices")
        train_feats = feats[self.train_idx]
        object.__setattr__(self, "feature_min", _frozen(train_feats.min(axis=0)))
        object.__setattr__(self, "feature_max", _frozen(train_feats.max(axis=0)))

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def split_indices(self, split: str) -> np.ndarray:
        if split == "train":
            return self.train_idx
        if split == "test":
            return self.test_idx
        raise ValueError(f"unknown split {split!r}")

    def normalized(self, split: str | None = None) -> np.ndarray:
        """Min-max normalized features, clamped to [0, 1]."""
        feats = self.features if split is None else self.features[self.split_indices(split)]
        span = self.feature_max - self.feature_min
        span = np.where(span == 0.0, 1.0, span)
        return np.clip((feats - self.feature_min) / span, 0.0, 1.0)

    def split_labels(self, split: str) -> np.ndarray:
        return self.labels[self.split_indices(split)]


def make_split(n_samples: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled train/test index split."""
    order = np.random.default_rng(seed).permutation(n_samples)
    n_test = int(round(n_samples * test_fraction))
    n_test = min(max(n_test, 0), n_samples - 1)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def load_dataset(path, schema: DatasetSchema = DatasetSchema()) -> Dataset:
    """Read a header-bearing CSV into a Dataset.

    Columns listed in schema.drop_columns are removed first; the label
    column (name or index, default last) supplies class labels. All
    remaining cells must be numeric. Constant-valued columns survive
    ingestion; pruning them is a later stage's decision.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = [row for row in reader if row]

    def col_index(ref) -> int:
        if isinstance(ref, int):
            idx = ref if ref >= 0 else len(header) + ref
            if not 0 <= idx < len(header):
                raise DatasetError(f"{path}: column index {ref} out of range")
            return idx
        if ref not in header:
            raise DatasetError(f"{path}: unknown column {ref!r}")
        return header.index(ref)

    label_idx = col_index(schema.label_column)
    dropped = {col_index(c) for c in schema.drop_columns}
    if label_idx in dropped:
        raise DatasetError(f"{path}: label column cannot be dropped")
    feature_idx = [i for i in range(len(header)) if i != label_idx and i not in dropped]

    features = np.empty((len(rows), len(feature_idx)), dtype=np.float64)
    labels = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        try:
            labels[r] = int(float(row[label_idx]))
            for c, i in enumerate(feature_idx):
                features[r, c] = float(row[i])
        except ValueError as exc:
            raise DatasetError(f"{path}: row {r + 2}: {exc}") from None

    labels -= labels.min()
    train_idx, test_idx = make_split(len(rows), schema.test_fraction, schema.seed)
    names = tuple(header[i] for i in feature_idx)
    return Dataset(features, labels, train_idx, test_idx, feature_names=names)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 3
    epochs: int = 200
    learning_rate: float = 0.1
    seed: int = 0
    loss: str = "mse"  # recorded; only MSE on one-hot targets is implemented


def train(dataset: Dataset, config: TrainConfig) -> MlpModel:
    """Plain per-sample SGD on normalized train features; fully seeded.

    The same (dataset, config) pair always yields bit-identical weights.
    Zero epochs returns the seeded random initialization untouched.
    """
    if config.hidden < 1:
        raise ValueError("hidden width must be >= 1")
    if config.loss != "mse":
        raise ValueError(f"unsupported loss {config.loss!r}")
    x = dataset.normalized("train")
    y = dataset.split_labels("train")
    n_in, n_hid, n_cls = dataset.n_features, config.hidden, dataset.n_classes

    rng = np.random.default_rng(config.seed)
    w1 = rng.uniform(-1.0, 1.0, (n_hid, n_in)) / np.sqrt(n_in)
    b1 = np.zeros(n_hid)
    w2 = rng.uniform(-1.0, 1.0, (n_cls, n_hid)) / np.sqrt(n_hid)
    b2 = np.zeros(n_cls)
    targets = np.eye(n_cls)[y]

    lr = config.learning_rate
    for epoch in range(config.epochs):
        for i in rng.permutation(len(x)):
            xi, ti = x[i], targets[i]
            pre = w1 @ xi + b1
            h = np.maximum(pre, 0.0)
            out = w2 @ h + b2
            err = out - ti  # d(MSE)/d(out), up to the constant 2/n_cls
            if not np.all(np.isfinite(err)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            gh = (w2.T @ err) * (pre > 0.0)
            w2 -= lr * np.outer(err, h)
            b2 -= lr * err
            w1 -= lr * np.outer(gh, xi)
            b1 -= lr * gh
    return MlpModel(w1, b1, w2, b2)


def accuracy(predict_fn, dataset: Dataset, split: str) -> float:
    """Fraction of correctly classified samples in the split.

    predict_fn maps one normalized feature row to a class index.
    """
    idx = dataset.split_indices(split)
    if len(idx) == 0:
        raise ValueError(f"empty split {split!r}")
    feats = dataset.normalized(split)
    labels = dataset.split_labels(split)
    correct = sum(1 for row, lab in zip(feats, labels) if predict_fn(row) == lab)
    return correct / len(idx)


def save_model(model: MlpModel, path) -> None:
    doc = {
        "n_inputs": model.n_inputs,
        "hidden": [
            {"weights": list(map(float, w)), "bias": float(b)}
            for w, b in zip(model.w1, model.b1)
        ],
        "outputs": [
            {"weights": list(map(float, w)), "bias": float(b)}
            for w, b in zip(model.w2, model.b2)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    w1 = np.array([n["weights"] for n in doc["hidden"]], dtype=np.float64)
    b1 = np.array([n["bias"] for n in doc["hidden"]], dtype=np.float64)
    w2 = np.array([n["weights"] for n in doc["outputs"]], dtype=np.float64)
    b2 = np.array([n["bias"] for n in doc["outputs"]], dtype=np.float64)
    if w1.shape[1] != doc["n_inputs"]:
        raise ValueError("model file is inconsistent: n_inputs != hidden weight count")
    return MlpModel(w1, b1, w2, b2)
