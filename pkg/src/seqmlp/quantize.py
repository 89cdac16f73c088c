"""Post-training quantization to 4-bit inputs and signed power-of-two weights.

Weight values become sign * 2**e with eight exponent levels; a zero flag
covers weights too small for the grid (a pure power of two cannot encode 0).
Inference runs entirely on integers: input codes are shifted left by the
nonnegative amount p = e - e_min, so the accumulator holds the real dot
product scaled by max_code * 2**-e_min. Biases are rounded onto the same
grid, which keeps quantized accumulators aligned with the float model.

`quantized_infer` is the reference integer semantics that the cycle-accurate
simulator must reproduce exactly; `batch_infer` is a vectorized equivalent
used inside optimization loops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import MlpModel


@dataclass(frozen=True)
class QuantSpec:
    input_bits: int = 4
    exponent_levels: int = 8
    e_max: int = 0
    t_hidden: int | None = None  # qReLU right-shift; resolved at quantization
    t_output: int | None = None  # recorded for the wire format; output layer is identity

    @property
    def e_min(self) -> int:
        return self.e_max - self.exponent_levels + 1

    @property
    def span(self) -> int:
        """Largest hardware shift amount p = e - e_min."""
        return self.exponent_levels - 1

    @property
    def max_code(self) -> int:
        return (1 << self.input_bits) - 1


@dataclass(frozen=True)
class Pow2Weight:
    sign: int  # +1 or -1
    exponent: int  # real exponent e; value = sign * 2**e
    zero: bool = False

    @property
    def value(self) -> float:
        return 0.0 if self.zero else self.sign * 2.0**self.exponent


def quantize_input(value: float, spec: QuantSpec = QuantSpec()) -> int:
    """Map a normalized [0, 1] value to an unsigned code, rounding half up."""
    v = min(max(float(value), 0.0), 1.0)
    return int(math.floor(v * spec.max_code + 0.5))


def quantize_weight(w: float, spec: QuantSpec = QuantSpec()) -> Pow2Weight:
    """Nearest power of two in the log domain, ties toward the larger exponent.

    Magnitudes below the midpoint under the smallest level collapse to the
    explicit zero flag.
    """
    if not math.isfinite(w):
        raise ValueError("weight must be finite")
    mag = abs(w)
    if mag < 2.0 ** (spec.e_min - 0.5):
        return Pow2Weight(sign=1, exponent=spec.e_min, zero=True)
    e = int(math.floor(math.log2(mag) + 0.5))
    e = min(max(e, spec.e_min), spec.e_max)
    return Pow2Weight(sign=1 if w > 0 else -1, exponent=e)


def qrelu(acc: int, t: int, max_code: int = 15) -> int:
    """Clamp negatives to zero, drop t low bits, saturate at max_code."""
    if acc <= 0:
        return 0
    return min(acc >> t, max_code)


@dataclass(frozen=True)
class QuantLayer:
    """Pow2 weights of one layer as parallel arrays, shape (neurons, fan_in)."""

    signs: np.ndarray  # int8, +1/-1
    exponents: np.ndarray  # int16, real exponent e
    zeros: np.ndarray  # bool
    bias: np.ndarray  # int64, accumulator domain
    common_shift: np.ndarray  # int16, per neuron

    def __post_init__(self):
        for name, dtype in (
            ("signs", np.int8),
            ("exponents", np.int16),
            ("zeros", np.bool_),
            ("bias", np.int64),
            ("common_shift", np.int16),
        ):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=dtype))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_neurons(self) -> int:
        return self.signs.shape[0]

    @property
    def fan_in(self) -> int:
        return self.signs.shape[1]

    def shifts(self, spec: QuantSpec) -> np.ndarray:
        """Hardware shift amounts p = e - e_min (zero-flagged entries get 0)."""
        p = self.exponents.astype(np.int64) - spec.e_min
        return np.where(self.zeros, 0, p)

    def effective_weights(self, spec: QuantSpec) -> np.ndarray:
        """Integer weights sign * 2**p with zeros masked out."""
        w = self.signs.astype(np.int64) << self.shifts(spec)
        return np.where(self.zeros, 0, w)


def extract_common_shift(
    signs: np.ndarray, exponents: np.ndarray, zeros: np.ndarray, spec: QuantSpec
) -> tuple[int, np.ndarray]:
    """Factor the smallest shift out of a neuron's non-zero weights.

    Returns (common_shift, residuals) with residuals >= 0 and
    p = residual + common_shift for every non-zero weight. A neuron with no
    non-zero weights gets common_shift 0 and all-zero residuals.
    """
    p = np.asarray(exponents, dtype=np.int64) - spec.e_min
    nz = ~np.asarray(zeros, dtype=bool)
    if not nz.any():
        return 0, np.zeros_like(p)
    common = int(p[nz].min())
    residuals = np.where(nz, p - common, 0)
    return common, residuals


def acc_width(fan_in: int, spec: QuantSpec, max_abs_bias: int = 0) -> int:
    """Static accumulator width: never overflows for any input codes.

    Base rule is input bits + shift span + ceil(log2 fan-in) + sign; the
    width grows further if the layer's bias magnitude needs the headroom.
    """
    fan_term = math.ceil(math.log2(fan_in)) if fan_in > 1 else 0
    base = spec.input_bits + spec.span + fan_term + 1
    worst = fan_in * spec.max_code * (1 << spec.span) + int(max_abs_bias)
    return max(base, worst.bit_length() + 1)


@dataclass(frozen=True)
class QuantizedModel:
    spec: QuantSpec
    kept_input_indices: tuple
    hidden: QuantLayer
    outputs: QuantLayer

    def __post_init__(self):
        if self.hidden.n_neurons != self.outputs.fan_in:
            raise ValueError("output layer fan-in must equal hidden neuron count")
        if len(self.kept_input_indices) != self.hidden.fan_in:
            raise ValueError("kept_input_indices must match hidden fan-in")
        if self.spec.t_hidden is None or self.spec.t_output is None:
            raise ValueError("truncation amounts must be resolved")

    @property
    def n_inputs(self) -> int:
        return self.hidden.fan_in

    @property
    def n_hidden(self) -> int:
        return self.hidden.n_neurons

    @property
    def n_classes(self) -> int:
        return self.outputs.n_neurons

    @property
    def hidden_acc_width(self) -> int:
        return acc_width(self.hidden.fan_in, self.spec, int(np.abs(self.hidden.bias).max(initial=0)))

    @property
    def output_acc_width(self) -> int:
        return acc_width(self.outputs.fan_in, self.spec, int(np.abs(self.outputs.bias).max(initial=0)))


def _quantize_layer(weights: np.ndarray, spec: QuantSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, f = weights.shape
    signs = np.ones((n, f), dtype=np.int8)
    exps = np.full((n, f), spec.e_min, dtype=np.int16)
    zeros = np.zeros((n, f), dtype=bool)
    for i in range(n):
        for j in range(f):
            q = quantize_weight(float(weights[i, j]), spec)
            signs[i, j] = q.sign
            exps[i, j] = q.exponent
            zeros[i, j] = q.zero
    return signs, exps, zeros


def _common_shifts(signs, exps, zeros, spec) -> np.ndarray:
    return np.array(
        [extract_common_shift(signs[i], exps[i], zeros[i], spec)[0] for i in range(len(signs))],
        dtype=np.int16,
    )


def _round_bias(b: np.ndarray, scale: float) -> np.ndarray:
    return np.floor(b * scale + 0.5).astype(np.int64)


def hidden_bias_scale(spec: QuantSpec) -> float:
    return spec.max_code * 2.0 ** (-spec.e_min)


def output_bias_scale(spec: QuantSpec) -> float:
    return spec.max_code * 2.0 ** (-2 * spec.e_min - spec.t_hidden)


def quantize_model(
    model: MlpModel,
    spec: QuantSpec = QuantSpec(),
    train_codes: np.ndarray | None = None,
    calibrate: bool = False,
) -> QuantizedModel:
    """Quantize a float model; optionally calibrate the hidden truncation.

    The static truncation default keeps the worst-case accumulator within
    the output code range, so it can never saturate. Calibration instead
    picks the smallest shift whose train-set saturation rate stays at or
    below 1%, which preserves more low-order signal.
    """
    h_signs, h_exps, h_zeros = _quantize_layer(model.w1, spec)
    h_bias = _round_bias(model.b1, hidden_bias_scale(spec))
    w_hid = acc_width(model.n_inputs, spec, int(np.abs(h_bias).max(initial=0)))
    t_static = max(w_hid - 1 - spec.input_bits, 0)

    if calibrate:
        if train_codes is None:
            raise ValueError("calibration requires train-split input codes")
        hidden = QuantLayer(h_signs, h_exps, h_zeros, h_bias, _common_shifts(h_signs, h_exps, h_zeros, spec))
        accs = train_codes.astype(np.int64) @ hidden.effective_weights(spec).T + h_bias
        pos = np.maximum(accs, 0)
        t_hidden = t_static
        for t in range(t_static + 1):
            sat = np.mean((pos >> t) > spec.max_code)
            if sat <= 0.01:
                t_hidden = t
                break
    else:
        t_hidden = t_static

    spec = replace(spec, t_hidden=int(t_hidden))
    o_signs, o_exps, o_zeros = _quantize_layer(model.w2, spec)
    o_bias = _round_bias(model.b2, output_bias_scale(spec))
    w_out = acc_width(model.n_hidden, spec, int(np.abs(o_bias).max(initial=0)))
    spec = replace(spec, t_output=max(w_out - 1 - spec.input_bits, 0))

    return QuantizedModel(
        spec=spec,
        kept_input_indices=tuple(range(model.n_inputs)),
        hidden=QuantLayer(h_signs, h_exps, h_zeros, h_bias, _common_shifts(h_signs, h_exps, h_zeros, spec)),
        outputs=QuantLayer(o_signs, o_exps, o_zeros, o_bias, _common_shifts(o_signs, o_exps, o_zeros, spec)),
    )


def encode_inputs(normalized: np.ndarray, spec: QuantSpec = QuantSpec()) -> np.ndarray:
    """Vectorized quantize_input over a matrix of normalized features."""
    v = np.clip(np.asarray(normalized, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * spec.max_code + 0.5).astype(np.int64)


def quantized_infer(qmodel: QuantizedModel, input_codes) -> tuple[int, list, list, list]:
    """Reference integer inference for one sample.

    Returns (class, hidden accumulators, hidden codes, output accumulators).
    This is the semantics the sequential circuit must match bit for bit:
    each hidden accumulator starts at its bias and adds sign * (code << p)
    per non-zero weight; hidden codes pass through qReLU; output
    accumulators do the same over hidden codes and feed a lowest-index
    argmax. No activation is applied to the output layer.
    """
    codes = [int(c) for c in input_codes]
    if len(codes) != qmodel.n_inputs:
        raise ValueError(f"expected {qmodel.n_inputs} input codes, got {len(codes)}")
    spec = qmodel.spec

    def layer_accs(layer: QuantLayer, values: list) -> list:
        shifts = layer.shifts(spec)
        accs = []
        for n in range(layer.n_neurons):
            acc = int(layer.bias[n])
            for i, v in enumerate(values):
                if not layer.zeros[n, i]:
                    acc += int(layer.signs[n, i]) * (v << int(shifts[n, i]))
            accs.append(acc)
        return accs

    hidden_accs = layer_accs(qmodel.hidden, codes)
    hidden_codes = [qrelu(a, spec.t_hidden, spec.max_code) for a in hidden_accs]
    output_accs = layer_accs(qmodel.outputs, hidden_codes)

    cls, best = 0, output_accs[0]
    for c in range(1, len(output_accs)):
        if output_accs[c] > best:
            cls, best = c, output_accs[c]
    return cls, hidden_accs, hidden_codes, output_accs


def batch_infer(qmodel: QuantizedModel, codes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized quantized_infer over a (samples, features) code matrix."""
    spec = qmodel.spec
    codes = np.asarray(codes, dtype=np.int64)
    h_accs = codes @ qmodel.hidden.effective_weights(spec).T + qmodel.hidden.bias
    h_codes = np.minimum(np.maximum(h_accs, 0) >> spec.t_hidden, spec.max_code)
    o_accs = h_codes @ qmodel.outputs.effective_weights(spec).T + qmodel.outputs.bias
    return np.argmax(o_accs, axis=1), h_accs, h_codes, o_accs


def quantized_accuracy(qmodel: QuantizedModel, codes: np.ndarray, labels: np.ndarray) -> float:
    classes, _, _, _ = batch_infer(qmodel, codes)
    return float(np.mean(classes == np.asarray(labels)))


def _layer_doc(layer: QuantLayer) -> list:
    return [
        {
            "signs": [int(s) for s in layer.signs[n]],
            "exponents": [int(e) for e in layer.exponents[n]],
            "zeros": [bool(z) for z in layer.zeros[n]],
            "bias": int(layer.bias[n]),
            "common_shift": int(layer.common_shift[n]),
        }
        for n in range(layer.n_neurons)
    ]


def _layer_from_doc(doc: list, spec: QuantSpec) -> QuantLayer:
    signs = np.array([n["signs"] for n in doc], dtype=np.int8)
    exps = np.array([n["exponents"] for n in doc], dtype=np.int16)
    zeros = np.array([n["zeros"] for n in doc], dtype=bool)
    bias = np.array([n["bias"] for n in doc], dtype=np.int64)
    common = np.array([n["common_shift"] for n in doc], dtype=np.int16)
    return QuantLayer(signs, exps, zeros, bias, common)


def save_quantized(qmodel: QuantizedModel, path) -> None:
    spec = qmodel.spec
    doc = {
        "spec": {
            "input_bits": spec.input_bits,
            "e_min": spec.e_min,
            "e_max": spec.e_max,
            "T_hidden": spec.t_hidden,
            "T_output": spec.t_output,
        },
        "bias_scale": {
            "hidden": hidden_bias_scale(spec),
            "output": output_bias_scale(spec),
        },
        "kept_input_indices": list(qmodel.kept_input_indices),
        "hidden": _layer_doc(qmodel.hidden),
        "outputs": _layer_doc(qmodel.outputs),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_quantized(path) -> QuantizedModel:
    doc = json.loads(Path(path).read_text())
    s = doc["spec"]
    spec = QuantSpec(
        input_bits=s["input_bits"],
        exponent_levels=s["e_max"] - s["e_min"] + 1,
        e_max=s["e_max"],
        t_hidden=s["T_hidden"],
        t_output=s["T_output"],
    )
    return QuantizedModel(
        spec=spec,
        kept_input_indices=tuple(doc["kept_input_indices"]),
        hidden=_layer_from_doc(doc["hidden"], spec),
        outputs=_layer_from_doc(doc["outputs"], spec),
    )
