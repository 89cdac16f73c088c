"""Redundant feature pruning by average expected product.

Each input's relevance is the mean, across hidden neurons, of its average
quantized code times the weight magnitude that multiplies it. Inputs are
ranked by decreasing relevance and the shortest prefix whose masked model
still meets the accuracy threshold is kept. Dropped inputs contribute
exactly zero, so no retraining is involved, and every pruned feature also
removes one cycle from the circuit's input phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantize import QuantLayer, QuantizedModel, batch_infer, extract_common_shift


@dataclass(frozen=True)
class FeatureRanking:
    order: tuple  # input positions, most relevant first
    relevance: tuple  # score per input position (unordered, indexed by position)


@dataclass(frozen=True)
class PruneResult:
    kept_indices: tuple  # original feature indices, ascending
    ranking: FeatureRanking
    model: QuantizedModel
    achieved_accuracy: float
    threshold: float
    threshold_unreachable: bool = False


def feature_relevance(qmodel: QuantizedModel, train_codes: np.ndarray) -> FeatureRanking:
    """Rank inputs by mean over hidden neurons of E[code] * |weight|.

    Weight magnitude is the real value 2**e, zero for zero-flagged weights.
    Ties rank the lower original position first.
    """
    codes = np.asarray(train_codes, dtype=np.float64)
    if codes.shape[0] == 0:
        raise ValueError("train split is empty")
    if codes.shape[1] != qmodel.n_inputs:
        raise ValueError("code matrix width does not match model inputs")
    mean_code = codes.mean(axis=0)
    mags = np.where(qmodel.hidden.zeros, 0.0, 2.0 ** qmodel.hidden.exponents.astype(np.float64))
    relevance = (mean_code[None, :] * mags).mean(axis=0)
    order = sorted(range(qmodel.n_inputs), key=lambda i: (-relevance[i], i))
    return FeatureRanking(order=tuple(order), relevance=tuple(float(r) for r in relevance))


def masked_accuracy(qmodel: QuantizedModel, codes: np.ndarray, labels: np.ndarray, keep) -> float:
    """Accuracy with all inputs outside `keep` forced to contribute zero."""
    masked = np.zeros_like(np.asarray(codes, dtype=np.int64))
    keep = list(keep)
    masked[:, keep] = np.asarray(codes)[:, keep]
    classes, _, _, _ = batch_infer(qmodel, masked)
    return float(np.mean(classes == np.asarray(labels)))


def project_model(qmodel: QuantizedModel, keep_positions) -> QuantizedModel:
    """Drop all inputs outside `keep_positions` from every hidden neuron.

    Surviving weights keep their relative order (a pure column projection);
    per-neuron common shifts are re-extracted from the surviving weights.
    """
    keep = sorted(keep_positions)
    spec = qmodel.spec
    h = qmodel.hidden
    signs = h.signs[:, keep]
    exps = h.exponents[:, keep]
    zeros = h.zeros[:, keep]
    common = np.array(
        [extract_common_shift(signs[n], exps[n], zeros[n], spec)[0] for n in range(h.n_neurons)],
        dtype=np.int16,
    )
    hidden = QuantLayer(signs, exps, zeros, h.bias, common)
    kept = tuple(qmodel.kept_input_indices[i] for i in keep)
    return QuantizedModel(spec=spec, kept_input_indices=kept, hidden=hidden, outputs=qmodel.outputs)


def prune(
    qmodel: QuantizedModel,
    train_codes: np.ndarray,
    train_labels: np.ndarray,
    threshold: float | None = None,
) -> PruneResult:
    """Keep the minimal relevance-ranked prefix meeting the threshold.

    The threshold defaults to the unpruned model's own accuracy on the same
    split. Candidate prefixes are scanned in increasing size; the first one
    that reaches the threshold wins. If even the full feature set falls
    short (possible only with an explicit threshold), everything is kept
    and the result is flagged.
    """
    codes = np.asarray(train_codes, dtype=np.int64)
    labels = np.asarray(train_labels)
    if threshold is None:
        threshold = masked_accuracy(qmodel, codes, labels, range(qmodel.n_inputs))
    ranking = feature_relevance(qmodel, codes)

    kept_positions = list(ranking.order)
    achieved = 0.0
    unreachable = True
    for k in range(1, qmodel.n_inputs + 1):
        prefix = ranking.order[:k]
        achieved = masked_accuracy(qmodel, codes, labels, prefix)
        if achieved >= threshold:
            kept_positions = list(prefix)
            unreachable = False
            break

    return PruneResult(
        kept_indices=tuple(qmodel.kept_input_indices[i] for i in sorted(kept_positions)),
        ranking=ranking,
        model=project_model(qmodel, kept_positions),
        achieved_accuracy=achieved,
        threshold=float(threshold),
        threshold_unreachable=unreachable,
    )
