"""Single-cycle neuron planning and NSGA-II selection of neurons to approximate.

A single-cycle neuron estimates its pre-activation from one bit of each of
its two most important inputs. Importance is the average expected product:
the mean input code over the train split times the integer weight magnitude.
The stronger product's leading-1 bit position fixes the column where a 1-bit
addition happens; each input contributes the bit of its code that lands in
that column after its own weight shift.

Which neurons can afford this is a trade-off searched with an elitist
NSGA-II over boolean masks: maximize the number of approximated neurons and
the accuracy, subject to accuracy staying within a configured drop of the
exact model. Infeasible candidates are dominated by all feasible ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quantize import QuantizedModel, batch_infer

HIDDEN = "hidden"
OUTPUT = "output"


class IneligibleNeuron(ValueError):
    """Neuron lacks two inputs with non-zero average expected product."""


@dataclass(frozen=True)
class NeuronApproxPlan:
    layer: str
    index: int
    i1: int  # most important input position
    i2: int  # second most important input position
    lead_col: int  # accumulator bit column of the 1-bit addition
    b1: int  # extracted bit of input i1's code
    b2: int  # extracted bit of input i2's code
    s1: int
    s2: int


def avg_expected_products(
    qmodel: QuantizedModel, train_codes: np.ndarray, layer: str, index: int
) -> np.ndarray:
    """Per-input scores E[code] * 2**p in accumulator units.

    For output-layer neurons the inputs are the hidden codes the exact model
    produces on the train split. Zero-flagged weights score 0.
    """
    codes = np.asarray(train_codes, dtype=np.int64)
    if codes.shape[0] == 0:
        raise ValueError("train split is empty")
    if layer == HIDDEN:
        qlayer, values = qmodel.hidden, codes
    elif layer == OUTPUT:
        _, _, hidden_codes, _ = batch_infer(qmodel, codes)
        qlayer, values = qmodel.outputs, hidden_codes
    else:
        raise ValueError(f"unknown layer {layer!r}")
    if not 0 <= index < qlayer.n_neurons:
        raise ValueError(f"no {layer} neuron {index}")
    mean_code = values.mean(axis=0)
    shifts = qlayer.shifts(qmodel.spec)[index]
    mags = np.where(qlayer.zeros[index], 0.0, np.exp2(shifts.astype(np.float64)))
    return mean_code * mags


def plan_single_cycle(
    qmodel: QuantizedModel, train_codes: np.ndarray, layer: str, index: int
) -> NeuronApproxPlan:
    """Build the two-bit estimator plan for one neuron.

    The two highest-scoring inputs are chosen (ties to the lower position).
    The leading-1 column is floor(log2) of the larger score; each extracted
    bit index is that column minus the input's weight shift, clamped into
    the input code width.
    """
    scores = avg_expected_products(qmodel, train_codes, layer, index)
    nonzero = [i for i in range(len(scores)) if scores[i] > 0.0]
    if len(nonzero) < 2:
        raise IneligibleNeuron(f"{layer} neuron {index} has {len(nonzero)} usable inputs, needs 2")
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    i1, i2 = ranked[0], ranked[1]
    lead_col = int(math.floor(math.log2(max(scores[i1], scores[i2]))))

    qlayer = qmodel.hidden if layer == HIDDEN else qmodel.outputs
    shifts = qlayer.shifts(qmodel.spec)[index]
    top = qmodel.spec.input_bits - 1

    def bit_index(inp: int) -> int:
        return min(max(lead_col - int(shifts[inp]), 0), top)

    return NeuronApproxPlan(
        layer=layer,
        index=index,
        i1=i1,
        i2=i2,
        lead_col=lead_col,
        b1=bit_index(i1),
        b2=bit_index(i2),
        s1=int(qlayer.signs[index, i1]),
        s2=int(qlayer.signs[index, i2]),
    )


def approx_neuron_eval(plan: NeuronApproxPlan, input_codes) -> int:
    """Signed estimate: both extracted bits added at the leading-1 column.

    No bias enters; any activation is the caller's responsibility, exactly
    as for exact neurons of the same layer.
    """
    b1 = (int(input_codes[plan.i1]) >> plan.b1) & 1
    b2 = (int(input_codes[plan.i2]) >> plan.b2) & 1
    return (plan.s1 * b1 + plan.s2 * b2) * (1 << plan.lead_col)


@dataclass(frozen=True)
class HybridPlan:
    """Mask over all neurons (hidden then output) plus per-neuron plans."""

    mask: tuple  # booleans, length n_hidden + n_classes
    plans: tuple  # NeuronApproxPlan for every True position
    accuracy: float
    baseline_accuracy: float
    max_drop: float

    def plan_for(self, layer: str, index: int) -> NeuronApproxPlan | None:
        for p in self.plans:
            if p.layer == layer and p.index == index:
                return p
        return None

    @property
    def approximated_count(self) -> int:
        return sum(self.mask)


def all_exact_plan(qmodel: QuantizedModel, baseline_accuracy: float = 0.0) -> HybridPlan:
    n = qmodel.n_hidden + qmodel.n_classes
    return HybridPlan(
        mask=(False,) * n,
        plans=(),
        accuracy=baseline_accuracy,
        baseline_accuracy=baseline_accuracy,
        max_drop=0.0,
    )


def _mask_layers(qmodel: QuantizedModel, mask) -> tuple[tuple, tuple]:
    h = tuple(bool(b) for b in mask[: qmodel.n_hidden])
    o = tuple(bool(b) for b in mask[qmodel.n_hidden :])
    return h, o


def hybrid_batch_infer(
    qmodel: QuantizedModel, mask, plans_by_key: dict, codes: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized hybrid inference.

    Approximated neurons use the two-bit estimate, the rest exact
    accumulation; hidden values pass through qReLU either way, output values
    go to the argmax raw. Returns (classes, hidden values, hidden codes,
    output values).
    """
    spec = qmodel.spec
    codes = np.asarray(codes, dtype=np.int64)
    h_mask, o_mask = _mask_layers(qmodel, mask)

    def estimate(plan: NeuronApproxPlan, values: np.ndarray) -> np.ndarray:
        b1 = (values[:, plan.i1] >> plan.b1) & 1
        b2 = (values[:, plan.i2] >> plan.b2) & 1
        return (plan.s1 * b1 + plan.s2 * b2) * (1 << plan.lead_col)

    h_vals = codes @ qmodel.hidden.effective_weights(spec).T + qmodel.hidden.bias
    for n, approx in enumerate(h_mask):
        if approx:
            h_vals[:, n] = estimate(plans_by_key[(HIDDEN, n)], codes)
    h_codes = np.minimum(np.maximum(h_vals, 0) >> spec.t_hidden, spec.max_code)

    o_vals = h_codes @ qmodel.outputs.effective_weights(spec).T + qmodel.outputs.bias
    for n, approx in enumerate(o_mask):
        if approx:
            o_vals[:, n] = estimate(plans_by_key[(OUTPUT, n)], h_codes)
    return np.argmax(o_vals, axis=1), h_vals, h_codes, o_vals


def hybrid_infer(qmodel: QuantizedModel, plan: HybridPlan, input_codes) -> tuple[int, list, list, list]:
    """Single-sample hybrid inference mirroring quantized_infer's shape."""
    plans_by_key = {(p.layer, p.index): p for p in plan.plans}
    codes = np.asarray([input_codes], dtype=np.int64)
    classes, h_vals, h_codes, o_vals = hybrid_batch_infer(qmodel, plan.mask, plans_by_key, codes)
    return int(classes[0]), list(map(int, h_vals[0])), list(map(int, h_codes[0])), list(map(int, o_vals[0]))


def hybrid_accuracy(qmodel: QuantizedModel, plan: HybridPlan, codes: np.ndarray, labels: np.ndarray) -> float:
    plans_by_key = {(p.layer, p.index): p for p in plan.plans}
    classes, _, _, _ = hybrid_batch_infer(qmodel, plan.mask, plans_by_key, codes)
    return float(np.mean(classes == np.asarray(labels)))


def eligible_plans(qmodel: QuantizedModel, train_codes: np.ndarray) -> dict:
    """Plans for every neuron that can be approximated, keyed (layer, index)."""
    plans = {}
    for layer, count in ((HIDDEN, qmodel.n_hidden), (OUTPUT, qmodel.n_classes)):
        for n in range(count):
            try:
                plans[(layer, n)] = plan_single_cycle(qmodel, train_codes, layer, n)
            except IneligibleNeuron:
                pass
    return plans


@dataclass(frozen=True)
class GaConfig:
    population: int = 50
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # defaults to 1 / genome length
    seed: int = 0
    max_drop: float = 0.05


@dataclass
class GaResult:
    chosen: HybridPlan
    pareto: list
    best_count_history: list = field(default_factory=list)
    no_gain: bool = False  # nothing feasible beyond the all-exact plan


def _crowding(front: list, fitness: dict) -> dict:
    dist = {m: 0.0 for m in front}
    if len(front) <= 2:
        return {m: math.inf for m in front}
    for obj in (0, 1):
        ordered = sorted(front, key=lambda m: fitness[m][obj])
        dist[ordered[0]] = dist[ordered[-1]] = math.inf
        lo, hi = fitness[ordered[0]][obj], fitness[ordered[-1]][obj]
        if hi == lo:
            continue
        for k in range(1, len(ordered) - 1):
            gap = fitness[ordered[k + 1]][obj] - fitness[ordered[k - 1]][obj]
            dist[ordered[k]] += gap / (hi - lo)
    return dist


def _sort_fronts(pop: list, fitness: dict, violation: dict) -> list:
    """Fast non-dominated sort under constraint domination."""

    def dominates(a, b) -> bool:
        va, vb = violation[a], violation[b]
        if va == 0.0 and vb > 0.0:
            return True
        if va > 0.0 and vb > 0.0:
            return va < vb
        if va > 0.0:
            return False
        fa, fb = fitness[a], fitness[b]
        return fa[0] >= fb[0] and fa[1] >= fb[1] and (fa[0] > fb[0] or fa[1] > fb[1])

    unique = list(dict.fromkeys(pop))
    remaining = set(unique)
    fronts = []
    while remaining:
        front = [m for m in remaining if not any(dominates(o, m) for o in remaining if o != m)]
        if not front:  # identical fitnesses only
            front = list(remaining)
        fronts.append(front)
        remaining -= set(front)
    return fronts


def nsga2_select(
    qmodel: QuantizedModel,
    train_codes: np.ndarray,
    train_labels: np.ndarray,
    config: GaConfig = GaConfig(),
) -> GaResult:
    """Search approximation masks; return the best feasible plan found.

    Feasible means train accuracy at or above baseline - max_drop, where the
    baseline is the all-exact model's accuracy on the same split. The chosen
    plan maximizes the approximated-neuron count, ties broken by accuracy.
    The initial population holds only one-hot masks so early parents stay
    close to the exact model.
    """
    codes = np.asarray(train_codes, dtype=np.int64)
    labels = np.asarray(train_labels)
    plans = eligible_plans(qmodel, codes)
    genome_len = qmodel.n_hidden + qmodel.n_classes
    eligible = sorted(
        (qmodel.n_hidden + idx if layer == OUTPUT else idx) for layer, idx in plans
    )

    cache: dict = {}

    def _cached(mask: tuple) -> float:
        if mask not in cache:
            classes, _, _, _ = hybrid_batch_infer(qmodel, mask, plans, codes)
            cache[mask] = float(np.mean(classes == labels))
        return cache[mask]

    all_false = (False,) * genome_len
    baseline = _cached(all_false)
    bar = baseline - config.max_drop
    eps = 1e-12

    def fitness(mask: tuple) -> tuple:
        return (sum(mask), _cached(mask))

    def viol(mask: tuple) -> float:
        return max(0.0, bar - _cached(mask) - eps)

    def to_plan(mask: tuple) -> HybridPlan:
        chosen_plans = []
        for pos in range(genome_len):
            if mask[pos]:
                layer = HIDDEN if pos < qmodel.n_hidden else OUTPUT
                idx = pos if pos < qmodel.n_hidden else pos - qmodel.n_hidden
                chosen_plans.append(plans[(layer, idx)])
        return HybridPlan(
            mask=mask,
            plans=tuple(chosen_plans),
            accuracy=_cached(mask),
            baseline_accuracy=baseline,
            max_drop=config.max_drop,
        )

    if not eligible:
        return GaResult(chosen=to_plan(all_false), pareto=[to_plan(all_false)], no_gain=True)

    rng = np.random.default_rng(config.seed)
    mut_rate = config.mutation_rate if config.mutation_rate is not None else 1.0 / genome_len

    def one_hot(pos: int) -> tuple:
        return tuple(i == pos for i in range(genome_len))

    population = [one_hot(eligible[i]) for i in range(min(config.population, len(eligible)))]
    while len(population) < config.population:
        population.append(one_hot(eligible[int(rng.integers(len(eligible)))]))

    best = all_false  # archive of the best feasible mask ever evaluated

    def better(a: tuple, b: tuple) -> bool:
        return (sum(a), _cached(a)) > (sum(b), _cached(b))

    def observe(mask: tuple) -> None:
        nonlocal best
        if viol(mask) == 0.0 and better(mask, best):
            best = mask

    for m in population:
        observe(m)

    history = [sum(best)]
    eligible_set = set(eligible)

    def sanitize(bits: np.ndarray) -> tuple:
        return tuple(bool(b) and (i in eligible_set) for i, b in enumerate(bits))

    for _ in range(config.generations):
        fit = {m: fitness(m) for m in dict.fromkeys(population)}
        vio = {m: viol(m) for m in fit}
        fronts = _sort_fronts(population, fit, vio)
        rank = {m: r for r, front in enumerate(fronts) for m in front}
        crowd = {}
        for front in fronts:
            crowd.update(_crowding(front, fit))

        def pick() -> tuple:
            a = population[int(rng.integers(len(population)))]
            b = population[int(rng.integers(len(population)))]
            ka = (rank[a], -crowd[a])
            kb = (rank[b], -crowd[b])
            return a if ka <= kb else b

        offspring = []
        while len(offspring) < config.population:
            pa, pb = np.array(pick()), np.array(pick())
            if genome_len > 1 and rng.random() < config.crossover_rate:
                cut = int(rng.integers(1, genome_len))
                pa, pb = (
                    np.concatenate([pa[:cut], pb[cut:]]),
                    np.concatenate([pb[:cut], pa[cut:]]),
                )
            for child in (pa, pb):
                flips = rng.random(genome_len) < mut_rate
                mask = sanitize(np.logical_xor(child, flips))
                offspring.append(mask)
                if len(offspring) == config.population:
                    break
        for m in offspring:
            observe(m)

        merged = list(dict.fromkeys(population + offspring))
        fit = {m: fitness(m) for m in merged}
        vio = {m: viol(m) for m in merged}
        fronts = _sort_fronts(merged, fit, vio)
        survivors: list = []
        for front in fronts:
            if len(survivors) + len(front) <= config.population:
                survivors.extend(front)
            else:
                crowd = _crowding(front, fit)
                front = sorted(front, key=lambda m: -crowd[m])
                survivors.extend(front[: config.population - len(survivors)])
                break
        population = survivors
        history.append(sum(best))

    feasible = [m for m in dict.fromkeys(population + [best]) if viol(m) == 0.0]
    fit = {m: fitness(m) for m in feasible}
    front = [
        m
        for m in feasible
        if not any(
            fit[o][0] >= fit[m][0] and fit[o][1] >= fit[m][1] and fit[o] != fit[m]
            for o in feasible
        )
    ]
    pareto = [to_plan(m) for m in sorted(front, key=lambda m: (-sum(m), m))]
    return GaResult(
        chosen=to_plan(best),
        pareto=pareto,
        best_count_history=history,
        no_gain=sum(best) == 0,
    )


def save_plan(plan: HybridPlan, path) -> None:
    doc = {
        "mask": [bool(b) for b in plan.mask],
        "plans": [
            {
                "layer": p.layer,
                "index": p.index,
                "i1": p.i1,
                "i2": p.i2,
                "L": p.lead_col,
                "b1": p.b1,
                "b2": p.b2,
                "s1": p.s1,
                "s2": p.s2,
            }
            for p in plan.plans
        ],
        "accuracy": plan.accuracy,
        "baseline_accuracy": plan.baseline_accuracy,
        "max_drop": plan.max_drop,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_plan(path) -> HybridPlan:
    doc = json.loads(Path(path).read_text())
    plans = tuple(
        NeuronApproxPlan(
            layer=p["layer"],
            index=p["index"],
            i1=p["i1"],
            i2=p["i2"],
            lead_col=p["L"],
            b1=p["b1"],
            b2=p["b2"],
            s1=p["s1"],
            s2=p["s2"],
        )
        for p in doc["plans"]
    )
    return HybridPlan(
        mask=tuple(bool(b) for b in doc["mask"]),
        plans=plans,
        accuracy=doc["accuracy"],
        baseline_accuracy=doc["baseline_accuracy"],
        max_drop=doc["max_drop"],
    )
