"""Cycle-accurate, bit-exact simulation of the sequential classifier circuit.

The schedule is three back-to-back phases driven by one counter: cycles
[0, N) stream one input code per cycle into the hidden layer, [N, N+H) route
one hidden code per cycle through the inter-layer mux into the output layer,
and [N+H, N+H+C) scan output values through a single strict-greater-than
comparator that tracks the winning class. Total latency is always N + H + C.

Multi-cycle neurons hold one accumulator register that resets to the bias
and adds sign * (value << residual) << common_shift each enabled cycle.
Single-cycle neurons hold just two 1-bit registers that capture one bit of
each of their two important inputs as those arrive; their estimate is the
signed 1-bit sum placed at the planned leading-1 column. State size is
O(H + C) and independent of N: there are no inter-layer shift registers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .approx import HIDDEN, OUTPUT, HybridPlan, NeuronApproxPlan, all_exact_plan
from .quantize import QuantizedModel, qrelu


class ScheduleError(RuntimeError):
    """Input supplied outside the input phase, or missing within it."""


@dataclass(frozen=True)
class MultiCyclePath:
    """Weight tables of one exact neuron, indexed by arrival cycle."""

    residuals: tuple
    signs: tuple
    zeros: tuple
    common_shift: int
    bias: int

    @property
    def max_residual(self) -> int:
        live = [r for r, z in zip(self.residuals, self.zeros) if not z]
        return max(live) if live else 0


@dataclass(frozen=True)
class CircuitModel:
    n_inputs: int
    n_hidden: int
    n_classes: int
    input_bits: int
    t_hidden: int
    hidden_acc_width: int
    output_acc_width: int
    hidden_paths: tuple  # MultiCyclePath or NeuronApproxPlan per neuron
    output_paths: tuple

    @property
    def latency(self) -> int:
        return self.n_inputs + self.n_hidden + self.n_classes

    @property
    def max_code(self) -> int:
        return (1 << self.input_bits) - 1

    def phase(self, cycle: int) -> int:
        if cycle < self.n_inputs:
            return 1
        if cycle < self.n_inputs + self.n_hidden:
            return 2
        return 3

    def single_cycle_count(self) -> int:
        return sum(
            isinstance(p, NeuronApproxPlan) for p in self.hidden_paths + self.output_paths
        )


def _layer_paths(layer, spec, plan: HybridPlan, layer_name: str) -> tuple:
    paths = []
    shifts = layer.shifts(spec)
    for n in range(layer.n_neurons):
        approx = plan.plan_for(layer_name, n)
        if approx is not None:
            paths.append(approx)
            continue
        common = int(layer.common_shift[n])
        residuals = tuple(
            int(p) - common if not layer.zeros[n, i] else 0
            for i, p in enumerate(shifts[n])
        )
        paths.append(
            MultiCyclePath(
                residuals=residuals,
                signs=tuple(int(s) for s in layer.signs[n]),
                zeros=tuple(bool(z) for z in layer.zeros[n]),
                common_shift=common,
                bias=int(layer.bias[n]),
            )
        )
    return tuple(paths)


def build_circuit(qmodel: QuantizedModel, plan: HybridPlan | None = None) -> CircuitModel:
    """Elaborate the sequential circuit for a quantized model and plan."""
    if plan is None:
        plan = all_exact_plan(qmodel)
    n_total = qmodel.n_hidden + qmodel.n_classes
    if len(plan.mask) != n_total:
        raise ValueError(f"plan mask has {len(plan.mask)} bits, circuit has {n_total} neurons")
    for pos, bit in enumerate(plan.mask):
        if not bit:
            continue
        layer = HIDDEN if pos < qmodel.n_hidden else OUTPUT
        idx = pos if pos < qmodel.n_hidden else pos - qmodel.n_hidden
        p = plan.plan_for(layer, idx)
        if p is None:
            raise ValueError(f"mask marks {layer} neuron {idx} but no plan is attached")
        fan_in = qmodel.n_inputs if layer == HIDDEN else qmodel.n_hidden
        if not (0 <= p.i1 < fan_in and 0 <= p.i2 < fan_in and p.i1 != p.i2):
            raise ValueError(f"plan for {layer} neuron {idx} indexes outside fan-in {fan_in}")
        if not (0 <= p.b1 < qmodel.spec.input_bits and 0 <= p.b2 < qmodel.spec.input_bits):
            raise ValueError(f"plan for {layer} neuron {idx} extracts an out-of-range bit")

    return CircuitModel(
        n_inputs=qmodel.n_inputs,
        n_hidden=qmodel.n_hidden,
        n_classes=qmodel.n_classes,
        input_bits=qmodel.spec.input_bits,
        t_hidden=qmodel.spec.t_hidden,
        hidden_acc_width=qmodel.hidden_acc_width,
        output_acc_width=qmodel.output_acc_width,
        hidden_paths=_layer_paths(qmodel.hidden, qmodel.spec, plan, HIDDEN),
        output_paths=_layer_paths(qmodel.outputs, qmodel.spec, plan, OUTPUT),
    )


@dataclass
class SimState:
    """All architectural registers; no per-layer shift register arrays."""

    cycle: int
    hidden_regs: list  # int accumulator, or [bit, bit] for single-cycle neurons
    output_regs: list
    argmax_best: int
    argmax_index: int

    def clone(self) -> "SimState":
        return SimState(
            cycle=self.cycle,
            hidden_regs=[r.copy() if isinstance(r, list) else r for r in self.hidden_regs],
            output_regs=[r.copy() if isinstance(r, list) else r for r in self.output_regs],
            argmax_best=self.argmax_best,
            argmax_index=self.argmax_index,
        )


def reset_state(circuit: CircuitModel) -> SimState:
    """Power-on/reset: accumulators load their bias, bit registers clear."""

    def init(path):
        return path.bias if isinstance(path, MultiCyclePath) else [0, 0]

    return SimState(
        cycle=0,
        hidden_regs=[init(p) for p in circuit.hidden_paths],
        output_regs=[init(p) for p in circuit.output_paths],
        argmax_best=-(1 << (circuit.output_acc_width - 1)),
        argmax_index=0,
    )


def neuron_value(path, regs) -> int:
    """Current pre-activation value of a neuron given its register contents."""
    if isinstance(path, MultiCyclePath):
        return regs
    return (path.s1 * regs[0] + path.s2 * regs[1]) * (1 << path.lead_col)


def _accumulate(path: MultiCyclePath, acc: int, value: int, entry: int, width: int) -> int:
    if not path.zeros[entry]:
        acc += path.signs[entry] * ((value << path.residuals[entry]) << path.common_shift)
    if not -(1 << (width - 1)) <= acc < (1 << (width - 1)):
        raise AssertionError(f"accumulator overflow: {acc} exceeds {width} bits")
    return acc


def _capture(plan: NeuronApproxPlan, regs: list, entry: int, value: int) -> None:
    if entry == plan.i1:
        regs[0] = (value >> plan.b1) & 1
    if entry == plan.i2:
        regs[1] = (value >> plan.b2) & 1


def step(circuit: CircuitModel, state: SimState, input_code: int | None = None) -> SimState:
    """Advance one clock cycle in place; returns the same state object."""
    t = state.cycle
    if t >= circuit.latency:
        raise ScheduleError(f"cycle {t} is past the schedule end ({circuit.latency})")
    phase = circuit.phase(t)
    if phase == 1 and input_code is None:
        raise ScheduleError(f"cycle {t} is in the input phase but no input was supplied")
    if phase != 1 and input_code is not None:
        raise ScheduleError(f"cycle {t} is outside the input phase; unexpected input")

    if phase == 1:
        code = int(input_code)
        for n, path in enumerate(circuit.hidden_paths):
            if isinstance(path, MultiCyclePath):
                state.hidden_regs[n] = _accumulate(
                    path, state.hidden_regs[n], code, t, circuit.hidden_acc_width
                )
            else:
                _capture(path, state.hidden_regs[n], t, code)
    elif phase == 2:
        j = t - circuit.n_inputs
        code = qrelu(
            neuron_value(circuit.hidden_paths[j], state.hidden_regs[j]),
            circuit.t_hidden,
            circuit.max_code,
        )
        for n, path in enumerate(circuit.output_paths):
            if isinstance(path, MultiCyclePath):
                state.output_regs[n] = _accumulate(
                    path, state.output_regs[n], code, j, circuit.output_acc_width
                )
            else:
                _capture(path, state.output_regs[n], j, code)
    else:
        c = t - circuit.n_inputs - circuit.n_hidden
        value = neuron_value(circuit.output_paths[c], state.output_regs[c])
        if value > state.argmax_best:
            state.argmax_best = value
            state.argmax_index = c
    state.cycle = t + 1
    return state


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    phase: int
    accumulators: tuple  # hidden then output neuron values
    argmax_best: int
    argmax_index: int


def snapshot(circuit: CircuitModel, state: SimState) -> TraceRecord:
    values = tuple(
        neuron_value(p, r)
        for p, r in zip(
            circuit.hidden_paths + circuit.output_paths,
            state.hidden_regs + state.output_regs,
        )
    )
    return TraceRecord(
        cycle=state.cycle,
        phase=circuit.phase(min(state.cycle, circuit.latency - 1)),
        accumulators=values,
        argmax_best=state.argmax_best,
        argmax_index=state.argmax_index,
    )


@dataclass
class SimResult:
    predicted_class: int
    latency_cycles: int
    trace: list
    hidden_codes: list
    output_values: list


def run_inference(circuit: CircuitModel, input_codes, keep_trace: bool = True) -> SimResult:
    """Run one full inference from reset; trace has latency + 1 snapshots."""
    codes = list(input_codes)
    if len(codes) != circuit.n_inputs:
        raise ScheduleError(f"got {len(codes)} input codes, circuit needs {circuit.n_inputs}")
    state = reset_state(circuit)
    trace = [snapshot(circuit, state)] if keep_trace else []
    for t in range(circuit.latency):
        step(circuit, state, codes[t] if t < circuit.n_inputs else None)
        if keep_trace:
            trace.append(snapshot(circuit, state))

    hidden_codes = [
        qrelu(neuron_value(p, r), circuit.t_hidden, circuit.max_code)
        for p, r in zip(circuit.hidden_paths, state.hidden_regs)
    ]
    output_values = [
        neuron_value(p, r) for p, r in zip(circuit.output_paths, state.output_regs)
    ]
    return SimResult(
        predicted_class=state.argmax_index,
        latency_cycles=circuit.latency,
        trace=trace,
        hidden_codes=hidden_codes,
        output_values=output_values,
    )


@dataclass(frozen=True)
class BatchResult:
    accuracy: float
    total_cycles: int
    latency_cycles: int


def batch_eval(circuit: CircuitModel, codes: np.ndarray, labels) -> BatchResult:
    """Accuracy over a split plus the aggregate cycle count."""
    codes = np.asarray(codes, dtype=np.int64)
    labels = np.asarray(labels)
    if len(codes) == 0:
        raise ValueError("empty split")
    correct = 0
    for row, label in zip(codes, labels):
        result = run_inference(circuit, [int(c) for c in row], keep_trace=False)
        correct += result.predicted_class == label
    return BatchResult(
        accuracy=correct / len(codes),
        total_cycles=len(codes) * circuit.latency,
        latency_cycles=circuit.latency,
    )


def write_trace_jsonl(trace, path) -> None:
    """One JSON record per cycle with a fixed field order."""
    with Path(path).open("w") as fh:
        for rec in trace:
            fh.write(
                json.dumps(
                    {
                        "cycle": rec.cycle,
                        "phase": rec.phase,
                        "accumulators": list(rec.accumulators),
                        "argmax_best": rec.argmax_best,
                        "argmax_index": rec.argmax_index,
                    }
                )
                + "\n"
            )
