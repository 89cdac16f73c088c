import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqmlp.quantize import (
    QuantLayer,
    QuantSpec,
    QuantizedModel,
    acc_width,
    batch_infer,
    encode_inputs,
    extract_common_shift,
    load_quantized,
    quantize_input,
    quantize_model,
    quantize_weight,
    quantized_infer,
    qrelu,
    save_quantized,
)
from seqmlp.model import MlpModel

SPEC = QuantSpec()


def make_layer(signs, exps, zeros, bias, spec=SPEC):
    signs = np.asarray(signs)
    exps = np.asarray(exps)
    zeros = np.asarray(zeros, dtype=bool)
    common = [extract_common_shift(signs[n], exps[n], zeros[n], spec)[0] for n in range(len(signs))]
    return QuantLayer(signs, exps, zeros, np.asarray(bias), np.asarray(common))


def make_qmodel(hidden, outputs, t_hidden=2, t_output=0, spec=SPEC):
    spec = QuantSpec(
        input_bits=spec.input_bits,
        exponent_levels=spec.exponent_levels,
        e_max=spec.e_max,
        t_hidden=t_hidden,
        t_output=t_output,
    )
    return QuantizedModel(
        spec=spec,
        kept_input_indices=tuple(range(hidden.fan_in)),
        hidden=hidden,
        outputs=outputs,
    )


def random_qmodel(rng, n_inputs=None, n_hidden=None, n_classes=None, zero_prob=0.15):
    n_inputs = n_inputs or int(rng.integers(2, 8))
    n_hidden = n_hidden or int(rng.integers(2, 5))
    n_classes = n_classes or int(rng.integers(2, 4))

    def layer(n, f, bias_mag):
        signs = rng.choice([-1, 1], size=(n, f))
        exps = rng.integers(SPEC.e_min, SPEC.e_max + 1, size=(n, f))
        zeros = rng.random((n, f)) < zero_prob
        bias = rng.integers(-bias_mag, bias_mag + 1, size=n)
        return make_layer(signs, exps, zeros, bias)

    hidden = layer(n_hidden, n_inputs, 400)
    outputs = layer(n_classes, n_hidden, 400)
    w = acc_width(n_inputs, SPEC, 400)
    return make_qmodel(hidden, outputs, t_hidden=max(w - 5, 0), t_output=0)


class TestQuantizeInput:
    def test_zero(self):
        assert quantize_input(0.0) == 0

    def test_one(self):
        assert quantize_input(1.0) == 15

    def test_half_rounds_up(self):
        assert quantize_input(0.5) == 8

    def test_clamps_out_of_range(self):
        assert quantize_input(-3.0) == 0
        assert quantize_input(2.5) == 15

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_matches_vectorized_encoder(self, v):
        assert encode_inputs(np.array([[v]]))[0, 0] == quantize_input(v)


class TestQuantizeWeight:
    def test_point_three(self):
        q = quantize_weight(0.30)
        assert (q.sign, q.exponent, q.zero) == (1, -2, False)

    def test_zero_flagged(self):
        assert quantize_weight(0.0).zero is True

    def test_exact_negative_level(self):
        q = quantize_weight(-1.0)
        assert (q.sign, q.exponent, q.zero) == (-1, 0, False)

    @given(st.integers(min_value=-7, max_value=0), st.sampled_from([-1, 1]))
    def test_roundtrip_on_representable_values(self, e, s):
        q = quantize_weight(s * 2.0**e)
        assert (q.sign, q.exponent, q.zero) == (s, e, False)

    @given(st.floats(min_value=1e-4, max_value=4.0))
    def test_log_domain_optimality(self, mag):
        q = quantize_weight(mag)
        if q.zero:
            assert mag < 2.0 ** (SPEC.e_min - 0.5)
            return
        target = math.log2(mag)
        # brute force over all 8 levels, same tie rule: prefer larger exponent
        best = max(range(SPEC.e_min, SPEC.e_max + 1), key=lambda e: (-abs(target - e), e))
        assert q.exponent == best

    def test_tie_toward_larger_exponent(self):
        q = quantize_weight(2.0**-1.5)  # exactly between -2 and -1
        assert q.exponent == -1


class TestQrelu:
    def test_negative_clips(self):
        assert qrelu(-7, 3) == 0

    def test_saturates(self):
        assert qrelu(200, 3) == 15

    def test_truncates(self):
        assert qrelu(40, 3) == 5

    @given(st.integers(min_value=-(2**17), max_value=2**17), st.integers(min_value=0, max_value=12))
    def test_monotone_and_bounded(self, acc, t):
        lo, hi = qrelu(acc, t), qrelu(acc + 1, t)
        assert 0 <= lo <= hi <= 15


class TestCommonShift:
    def test_example_three_five_three(self):
        exps = np.array([3, 5, 3]) + SPEC.e_min  # hardware shifts 3, 5, 3
        common, residuals = extract_common_shift([1, 1, 1], exps, [False] * 3, SPEC)
        assert common == 3
        assert list(residuals) == [0, 2, 0]

    def test_single_weight(self):
        common, residuals = extract_common_shift([1], [4 + SPEC.e_min], [False], SPEC)
        assert common == 4
        assert list(residuals) == [0]

    def test_all_zero_neuron(self):
        common, residuals = extract_common_shift([1, 1], [0, 0], [True, True], SPEC)
        assert common == 0
        assert list(residuals) == [0, 0]

    @given(st.data())
    def test_reconstruction_identity(self, data):
        n = data.draw(st.integers(min_value=1, max_value=6))
        exps = data.draw(st.lists(st.integers(SPEC.e_min, SPEC.e_max), min_size=n, max_size=n))
        zeros = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
        signs = [1] * n
        common, residuals = extract_common_shift(signs, exps, zeros, SPEC)
        for e, z, r in zip(exps, zeros, residuals):
            if not z:
                assert r >= 0
                assert r + common == e - SPEC.e_min


class TestQuantizedInfer:
    def test_all_weights_zero_bias_argmax(self):
        hidden = make_layer([[1, 1]], [[0, 0]], [[True, True]], [4])
        outputs = make_layer([[1], [1]], [[0], [0]], [[True], [True]], [3, 9])
        qm = make_qmodel(hidden, outputs)
        cls, h_accs, h_codes, o_accs = quantized_infer(qm, [7, 2])
        assert h_accs == [4]
        assert o_accs == [3, 9]
        assert cls == 1

    def test_hand_computed_2_2_2(self):
        # pencil-and-paper with e_min = -7, t_hidden = 2:
        # acc0 = 5 + (3 << 6) - (10 << 5) = -123 -> code 0
        # acc1 = -3 + (3 << 7) + (10 << 4) = 541 -> 541 >> 2 = 135 -> saturates to 15
        # out0 = 7 + (0 << 0) + (15 << 3) = 127
        # out1 = 2 - (0 << 5) + (15 << 6) = 962
        hidden = make_layer(
            [[1, -1], [1, 1]], [[-1, -2], [0, -3]], [[False] * 2] * 2, [5, -3]
        )
        outputs = make_layer(
            [[1, 1], [-1, 1]], [[-7, -4], [-2, -1]], [[False] * 2] * 2, [7, 2]
        )
        qm = make_qmodel(hidden, outputs, t_hidden=2)
        cls, h_accs, h_codes, o_accs = quantized_infer(qm, [3, 10])
        assert h_accs == [-123, 541]
        assert h_codes == [0, 15]
        assert o_accs == [127, 962]
        assert cls == 1

    def test_matches_dyadic_float_oracle(self):
        # independent route: evaluate with float weights sign * 2**e; all values
        # are exact dyadics well inside float64, so equality is exact
        rng = np.random.default_rng(42)
        for _ in range(25):
            qm = random_qmodel(rng)
            spec = qm.spec
            codes = rng.integers(0, 16, size=qm.n_inputs)

            def float_layer(layer, values):
                out = []
                for n in range(layer.n_neurons):
                    acc = float(layer.bias[n])
                    for i, v in enumerate(values):
                        if not layer.zeros[n, i]:
                            acc += layer.signs[n, i] * v * 2.0 ** (
                                int(layer.exponents[n, i]) - spec.e_min
                            )
                    out.append(acc)
                return out

            h_float = float_layer(qm.hidden, [float(c) for c in codes])
            h_codes_f = [min(int(max(a, 0.0)) >> spec.t_hidden, 15) for a in h_float]
            o_float = float_layer(qm.outputs, [float(c) for c in h_codes_f])
            cls_f = max(range(len(o_float)), key=lambda c: (o_float[c], -c))

            cls, h_accs, h_codes, o_accs = quantized_infer(qm, codes)
            assert [float(a) for a in h_accs] == h_float
            assert h_codes == h_codes_f
            assert [float(a) for a in o_accs] == o_float
            assert cls == cls_f

    def test_batch_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        qm = random_qmodel(rng)
        codes = rng.integers(0, 16, size=(50, qm.n_inputs))
        classes, h_accs, h_codes, o_accs = batch_infer(qm, codes)
        for i in range(len(codes)):
            cls, ha, hc, oa = quantized_infer(qm, codes[i])
            assert classes[i] == cls
            assert list(h_accs[i]) == ha
            assert list(h_codes[i]) == hc
            assert list(o_accs[i]) == oa

    def test_dimension_mismatch(self):
        qm = random_qmodel(np.random.default_rng(0), n_inputs=4)
        with pytest.raises(ValueError):
            quantized_infer(qm, [1, 2, 3])


class TestShiftEquivalence:
    @given(st.integers(min_value=0, max_value=15), st.integers(min_value=0, max_value=7))
    def test_shift_is_pow2_multiply(self, code, p):
        assert code << p == code * 2**p


class TestAccWidth:
    def test_no_overflow_exhaustive_small_fanin(self):
        spec = QuantSpec(t_hidden=0, t_output=0)
        w = acc_width(2, spec, max_abs_bias=100)
        bound = 1 << (w - 1)
        for c0 in range(16):
            for c1 in range(16):
                for bias in (-100, 100):
                    worst = bias + (c0 << 7) + (c1 << 7)
                    assert -bound < worst < bound

    def test_corner_codes_large_fanin(self):
        spec = QuantSpec(t_hidden=0, t_output=0)
        fan_in = 44
        w = acc_width(fan_in, spec, max_abs_bias=5000)
        worst = fan_in * 15 * (1 << 7) + 5000
        assert worst < 1 << (w - 1)

    def test_spec_formula_is_floor(self):
        spec = QuantSpec(t_hidden=0, t_output=0)
        for fan_in in (1, 2, 3, 5, 17, 44):
            expected = spec.input_bits + spec.span + (math.ceil(math.log2(fan_in)) if fan_in > 1 else 0) + 1
            assert acc_width(fan_in, spec) >= expected


class TestQuantizeModel:
    def test_static_truncation_never_saturates(self):
        rng = np.random.default_rng(5)
        model = MlpModel(
            w1=rng.uniform(-1, 1, (3, 6)),
            b1=rng.uniform(-0.5, 0.5, 3),
            w2=rng.uniform(-1, 1, (2, 3)),
            b2=rng.uniform(-0.5, 0.5, 2),
        )
        qm = quantize_model(model)
        codes = rng.integers(0, 16, size=(200, 6))
        _, h_accs, h_codes, _ = batch_infer(qm, codes)
        pos = np.maximum(h_accs, 0) >> qm.spec.t_hidden
        assert np.all(pos <= 15)

    def test_calibration_lowers_truncation(self):
        rng = np.random.default_rng(6)
        model = MlpModel(
            w1=rng.uniform(-0.3, 0.3, (3, 6)),
            b1=np.zeros(3),
            w2=rng.uniform(-1, 1, (2, 3)),
            b2=np.zeros(2),
        )
        static = quantize_model(model)
        codes = rng.integers(0, 8, size=(100, 6))
        calibrated = quantize_model(model, train_codes=codes, calibrate=True)
        assert calibrated.spec.t_hidden <= static.spec.t_hidden

    def test_json_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        qm = random_qmodel(rng)
        save_quantized(qm, tmp_path / "q.json")
        back = load_quantized(tmp_path / "q.json")
        assert back.spec == qm.spec
        assert back.kept_input_indices == qm.kept_input_indices
        for a, b in ((back.hidden, qm.hidden), (back.outputs, qm.outputs)):
            assert np.array_equal(a.signs, b.signs)
            assert np.array_equal(a.exponents, b.exponents)
            assert np.array_equal(a.zeros, b.zeros)
            assert np.array_equal(a.bias, b.bias)
            assert np.array_equal(a.common_shift, b.common_shift)
