import itertools

import numpy as np
import pytest

from seqmlp.approx import (
    HIDDEN,
    OUTPUT,
    GaConfig,
    HybridPlan,
    IneligibleNeuron,
    NeuronApproxPlan,
    all_exact_plan,
    approx_neuron_eval,
    avg_expected_products,
    eligible_plans,
    hybrid_accuracy,
    hybrid_infer,
    load_plan,
    nsga2_select,
    plan_single_cycle,
    save_plan,
)
from seqmlp.model import TrainConfig, train
from seqmlp.quantize import batch_infer, encode_inputs, qrelu, quantize_model, quantized_infer
from seqmlp.synth import make_blobs
from tests.test_quantize import make_layer, make_qmodel, random_qmodel


def plan_of(mask_keys, qmodel, codes):
    """HybridPlan for the given (layer, index) set with freshly built plans."""
    plans = {k: plan_single_cycle(qmodel, codes, *k) for k in mask_keys}
    mask = [False] * (qmodel.n_hidden + qmodel.n_classes)
    for layer, idx in mask_keys:
        mask[idx if layer == HIDDEN else qmodel.n_hidden + idx] = True
    return HybridPlan(
        mask=tuple(mask), plans=tuple(plans.values()), accuracy=0.0, baseline_accuracy=0.0, max_drop=0.0
    )


class TestAvgExpectedProducts:
    def test_zero_flagged_scores_zero(self):
        hidden = make_layer([[1, 1]], [[0, 0]], [[True, False]], [0])
        outputs = make_layer([[1]], [[0]], [[False]], [0])
        qm = make_qmodel(hidden, outputs)
        scores = avg_expected_products(qm, np.full((4, 2), 9), HIDDEN, 0)
        assert scores[0] == 0.0

    def test_mean_code_times_shift(self):
        # E[x] = 8, shift p = 2 -> score 32
        hidden = make_layer([[1]], [[2 - 7]], [[False]], [0])
        outputs = make_layer([[1]], [[0]], [[False]], [0])
        qm = make_qmodel(hidden, outputs)
        scores = avg_expected_products(qm, np.full((6, 1), 8), HIDDEN, 0)
        assert scores[0] == 32.0

    def test_matches_brute_force_mean_of_shifted_codes(self):
        rng = np.random.default_rng(10)
        for _ in range(8):
            qm = random_qmodel(rng)
            codes = rng.integers(0, 16, size=(25, qm.n_inputs))
            n = int(rng.integers(qm.n_hidden))
            scores = avg_expected_products(qm, codes, HIDDEN, n)
            shifts = qm.hidden.shifts(qm.spec)[n]
            for i in range(qm.n_inputs):
                if qm.hidden.zeros[n, i]:
                    assert scores[i] == 0.0
                else:
                    brute = sum(int(c) << int(shifts[i]) for c in codes[:, i]) / len(codes)
                    assert scores[i] == brute

    def test_output_layer_uses_hidden_codes(self):
        rng = np.random.default_rng(11)
        qm = random_qmodel(rng)
        codes = rng.integers(0, 16, size=(20, qm.n_inputs))
        _, _, h_codes, _ = batch_infer(qm, codes)
        scores = avg_expected_products(qm, codes, OUTPUT, 0)
        shifts = qm.outputs.shifts(qm.spec)[0]
        for i in range(qm.n_hidden):
            expected = 0.0 if qm.outputs.zeros[0, i] else h_codes[:, i].mean() * 2.0 ** int(shifts[i])
            assert scores[i] == expected


class TestPlanSingleCycle:
    def _score_fixture(self):
        # shifts p = (2, 0, 0); constant codes (8, 9, 1) -> scores (32, 9, 1)
        hidden = make_layer([[1, 1, 1]], [[-5, -7, -7]], [[False] * 3], [0])
        outputs = make_layer([[1]], [[0]], [[False]], [0])
        qm = make_qmodel(hidden, outputs)
        codes = np.tile([8, 9, 1], (5, 1))
        return qm, codes

    def test_top_two_and_leading_one_column(self):
        qm, codes = self._score_fixture()
        plan = plan_single_cycle(qm, codes, HIDDEN, 0)
        assert (plan.i1, plan.i2) == (0, 1)
        assert plan.lead_col == 5  # floor(log2 32)

    def test_bit_indices_follow_shifts(self):
        # scores (5, 5): shift 0 with E[x]=5, shift 1 with E[x]=2.5
        hidden = make_layer([[1, 1]], [[-7, -6]], [[False, False]], [0])
        outputs = make_layer([[1]], [[0]], [[False]], [0])
        qm = make_qmodel(hidden, outputs)
        codes = np.array([[5, 2], [5, 3]] * 3)
        plan = plan_single_cycle(qm, codes, HIDDEN, 0)
        assert plan.lead_col == 2
        assert (plan.b1, plan.b2) == (2, 1)

    def test_equal_scores_take_lower_index(self):
        hidden = make_layer([[1, 1, 1]], [[-7, -7, -7]], [[False] * 3], [0])
        outputs = make_layer([[1]], [[0]], [[False]], [0])
        qm = make_qmodel(hidden, outputs)
        codes = np.tile([6, 6, 6], (4, 1))
        plan = plan_single_cycle(qm, codes, HIDDEN, 0)
        assert (plan.i1, plan.i2) == (0, 1)

    def test_fewer_than_two_usable_inputs_is_ineligible(self):
        hidden = make_layer([[1, 1]], [[0, 0]], [[False, True]], [0])
        outputs = make_layer([[1]], [[0]], [[False]], [0])
        qm = make_qmodel(hidden, outputs)
        with pytest.raises(IneligibleNeuron):
            plan_single_cycle(qm, np.full((4, 2), 3), HIDDEN, 0)

    def test_bit_index_clamps_into_code_width(self):
        # large score -> lead column far above any input bit
        hidden = make_layer([[1, 1]], [[0, 0]], [[False, False]], [0])
        outputs = make_layer([[1]], [[0]], [[False]], [0])
        qm = make_qmodel(hidden, outputs)
        plan = plan_single_cycle(qm, np.full((4, 2), 15), HIDDEN, 0)
        assert plan.b1 == 3 and plan.b2 == 3


class TestApproxNeuronEval:
    def test_hand_example(self):
        plan = NeuronApproxPlan(HIDDEN, 0, i1=0, i2=1, lead_col=2, b1=2, b2=1, s1=1, s2=1)
        assert approx_neuron_eval(plan, [5, 3]) == 8  # exact products would give 11

    def test_both_bits_zero(self):
        plan = NeuronApproxPlan(HIDDEN, 0, i1=0, i2=1, lead_col=3, b1=2, b2=2, s1=1, s2=1)
        assert approx_neuron_eval(plan, [0, 0]) == 0

    def test_opposite_signs_cancel(self):
        plan = NeuronApproxPlan(HIDDEN, 0, i1=0, i2=1, lead_col=4, b1=0, b2=0, s1=1, s2=-1)
        assert approx_neuron_eval(plan, [1, 1]) == 0

    def test_realignment_property(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            lead = int(rng.integers(0, 10))
            plan = NeuronApproxPlan(
                HIDDEN, 0,
                i1=0, i2=1,
                lead_col=lead,
                b1=int(rng.integers(0, 4)), b2=int(rng.integers(0, 4)),
                s1=int(rng.choice([-1, 1])), s2=int(rng.choice([-1, 1])),
            )
            value = approx_neuron_eval(plan, rng.integers(0, 16, size=2))
            assert value % (1 << lead) == 0
            assert abs(value) <= 1 << (lead + 1)


def brute_force_hybrid(qmodel, plan, codes_row):
    """Independent per-sample evaluator built from scalar primitives."""
    spec = qmodel.spec
    h_vals = []
    for n in range(qmodel.n_hidden):
        p = plan.plan_for(HIDDEN, n)
        if p is not None:
            h_vals.append(approx_neuron_eval(p, codes_row))
        else:
            acc = int(qmodel.hidden.bias[n])
            for i, c in enumerate(codes_row):
                if not qmodel.hidden.zeros[n, i]:
                    acc += int(qmodel.hidden.signs[n, i]) * (
                        int(c) << (int(qmodel.hidden.exponents[n, i]) - spec.e_min)
                    )
            h_vals.append(acc)
    h_codes = [qrelu(v, spec.t_hidden, spec.max_code) for v in h_vals]
    o_vals = []
    for n in range(qmodel.n_classes):
        p = plan.plan_for(OUTPUT, n)
        if p is not None:
            o_vals.append(approx_neuron_eval(p, h_codes))
        else:
            acc = int(qmodel.outputs.bias[n])
            for i, c in enumerate(h_codes):
                if not qmodel.outputs.zeros[n, i]:
                    acc += int(qmodel.outputs.signs[n, i]) * (
                        c << (int(qmodel.outputs.exponents[n, i]) - spec.e_min)
                    )
            o_vals.append(acc)
    cls = max(range(len(o_vals)), key=lambda c: (o_vals[c], -c))
    return cls, h_vals, h_codes, o_vals


class TestHybridInference:
    def test_all_false_equals_quantized_infer(self):
        rng = np.random.default_rng(13)
        qm = random_qmodel(rng)
        plan = all_exact_plan(qm)
        for _ in range(20):
            codes = rng.integers(0, 16, size=qm.n_inputs)
            assert hybrid_infer(qm, plan, codes)[0] == quantized_infer(qm, codes)[0]

    def test_single_neuron_matches_brute_force(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            qm = random_qmodel(rng, zero_prob=0.0)
            codes = rng.integers(0, 16, size=(30, qm.n_inputs))
            plan = plan_of([(HIDDEN, 0)], qm, codes)
            for row in codes:
                got = hybrid_infer(qm, plan, row)
                expected = brute_force_hybrid(qm, plan, row)
                assert got == expected

    def test_mixed_layers_match_brute_force(self):
        qm, codes, _ = toy_trained_model(seed=16)
        plans = eligible_plans(qm, codes)
        output_keys = [k for k in plans if k[0] == OUTPUT]
        assert output_keys, "trained toy should have an eligible output neuron"
        plan = plan_of([(HIDDEN, 1), output_keys[0]], qm, codes)
        for row in codes[:40]:
            assert hybrid_infer(qm, plan, row) == brute_force_hybrid(qm, plan, row)

    def test_all_true_not_better_than_exact_on_separable_toy(self):
        ds = make_blobs(n_samples=120, n_features=4, n_classes=2, seed=3)
        model = train(ds, TrainConfig(hidden=3, epochs=40, learning_rate=0.2, seed=1))
        probe = encode_inputs(ds.normalized("train"))
        qm = quantize_model(model, train_codes=probe, calibrate=True)
        codes = encode_inputs(ds.normalized("train"), qm.spec)
        labels = ds.split_labels("train")
        plans = eligible_plans(qm, codes)
        mask = [False] * (qm.n_hidden + qm.n_classes)
        for layer, idx in plans:
            mask[idx if layer == HIDDEN else qm.n_hidden + idx] = True
        all_true = HybridPlan(tuple(mask), tuple(plans.values()), 0.0, 0.0, 0.0)
        exact_acc = hybrid_accuracy(qm, all_exact_plan(qm), codes, labels)
        approx_acc = hybrid_accuracy(qm, all_true, codes, labels)
        assert approx_acc <= exact_acc  # measured, not assumed

    def test_plan_json_roundtrip(self, tmp_path):
        qm, codes, _ = toy_trained_model(seed=17)
        keys = list(eligible_plans(qm, codes))
        plan = plan_of(keys[:2], qm, codes)
        save_plan(plan, tmp_path / "p.json")
        back = load_plan(tmp_path / "p.json")
        assert back.mask == plan.mask
        assert back.plans == plan.plans


def exhaustive_best(qm, codes, labels, plans, max_drop):
    """Brute force over all masks: best (count, accuracy) meeting the bar."""
    genome = qm.n_hidden + qm.n_classes
    eligible = [(idx if layer == HIDDEN else qm.n_hidden + idx) for layer, idx in plans]
    baseline = hybrid_accuracy(qm, all_exact_plan(qm), codes, labels)
    bar = baseline - max_drop
    best = (0, baseline)
    for bits in itertools.product([False, True], repeat=genome):
        if any(b and i not in eligible for i, b in enumerate(bits)):
            continue
        plan = HybridPlan(tuple(bits), tuple(plans.values()), 0.0, 0.0, 0.0)
        acc = hybrid_accuracy(qm, plan, codes, labels)
        if acc + 1e-12 >= bar:
            best = max(best, (sum(bits), acc))
    return best, baseline


def toy_trained_model(seed=5):
    ds = make_blobs(n_samples=150, n_features=5, n_classes=2, seed=seed, spread=0.12)
    model = train(ds, TrainConfig(hidden=4, epochs=30, learning_rate=0.15, seed=seed))
    probe = encode_inputs(ds.normalized("train"))
    qm = quantize_model(model, train_codes=probe, calibrate=True)
    codes = encode_inputs(ds.normalized("train"), qm.spec)
    return qm, codes, ds.split_labels("train")


class TestNsga2:
    def test_vacuous_constraint_approximates_everything(self):
        qm, codes, labels = toy_trained_model()
        plans = eligible_plans(qm, codes)
        result = nsga2_select(qm, codes, labels, GaConfig(population=20, generations=20, seed=2, max_drop=1.0))
        assert result.chosen.approximated_count == len(plans)

    def test_zero_drop_with_every_bit_harmful_returns_all_false(self):
        found = False
        for seed in range(40):
            qm = random_qmodel(np.random.default_rng(seed), n_inputs=4, n_hidden=2, n_classes=2, zero_prob=0.0)
            rng = np.random.default_rng(seed + 1000)
            codes = rng.integers(0, 16, size=(40, qm.n_inputs))
            labels, _, _, _ = batch_infer(qm, codes)  # baseline accuracy is exactly 1.0
            plans = eligible_plans(qm, codes)
            if len(plans) < 3:
                continue
            (best_count, _), _ = exhaustive_best(qm, codes, labels, plans, max_drop=0.0)
            if best_count != 0:
                continue  # fixture must make every non-empty mask lossy
            found = True
            result = nsga2_select(qm, codes, labels, GaConfig(population=16, generations=12, seed=3, max_drop=0.0))
            assert result.chosen.approximated_count == 0
            assert result.no_gain
            break
        assert found, "no fixture where every approximation hurts; widen the search"

    @pytest.mark.parametrize("max_drop", [0.01, 0.02, 0.05])
    def test_matches_exhaustive_on_six_neurons(self, max_drop):
        qm, codes, labels = toy_trained_model(seed=9)
        assert qm.n_hidden + qm.n_classes == 6
        plans = eligible_plans(qm, codes)
        (best_count, _), baseline = exhaustive_best(qm, codes, labels, plans, max_drop)
        result = nsga2_select(
            qm, codes, labels, GaConfig(population=24, generations=30, seed=4, max_drop=max_drop)
        )
        assert result.chosen.approximated_count == best_count
        assert result.chosen.accuracy + 1e-12 >= baseline - max_drop

    def test_reproducible(self):
        qm, codes, labels = toy_trained_model(seed=6)
        cfg = GaConfig(population=16, generations=10, seed=11, max_drop=0.05)
        r1 = nsga2_select(qm, codes, labels, cfg)
        r2 = nsga2_select(qm, codes, labels, cfg)
        assert r1.chosen.mask == r2.chosen.mask
        assert r1.best_count_history == r2.best_count_history

    def test_pareto_front_is_non_dominated(self):
        qm, codes, labels = toy_trained_model(seed=7)
        result = nsga2_select(qm, codes, labels, GaConfig(population=16, generations=15, seed=5, max_drop=0.05))
        front = [(p.approximated_count, p.accuracy) for p in result.pareto]
        for a in front:
            for b in front:
                if a is b:
                    continue
                assert not (b[0] >= a[0] and b[1] >= a[1] and b != a)

    def test_elitism_monotone_history(self):
        qm, codes, labels = toy_trained_model(seed=8)
        result = nsga2_select(qm, codes, labels, GaConfig(population=12, generations=20, seed=6, max_drop=0.02))
        history = result.best_count_history
        assert all(a <= b for a, b in zip(history, history[1:]))

    def test_chosen_plan_meets_drop_bound(self):
        qm, codes, labels = toy_trained_model(seed=10)
        for drop in (0.01, 0.05):
            result = nsga2_select(qm, codes, labels, GaConfig(population=16, generations=15, seed=7, max_drop=drop))
            assert result.chosen.accuracy + 1e-12 >= result.chosen.baseline_accuracy - drop
