"""Area/power/energy estimation from per-cell technology parameters.

No synthesis tool is involved: the circuit structure is enumerated cell by
cell (flip-flops, 2-to-1 muxes, full adders, inverters, comparator bits,
shifter stages) and priced from a flat technology file. The shipped default
library encodes only relative facts: a 2-to-1 mux costs a quarter of the two
flip-flops it replaces, and flip-flops are disproportionately power-hungry.
All downstream claims about cost are therefore orderings and trends, never
absolute units.

The cell enumeration here is the single source of truth for the structural
census (register bits, mux count, adder bits, comparator bits) that the
emitted RTL must reproduce; shifter stages are mux-shaped constructs and
are counted in the mux bucket. Power is a static per-cell sum, with no
activity factors.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .quantize import QuantizedModel
from .simulate import CircuitModel, MultiCyclePath

CELLS = ("dff", "mux2", "full_adder", "inverter", "comparator_bit", "shifter_stage")


@dataclass(frozen=True)
class TechLibrary:
    area: dict
    power: dict
    clock_period_s: float = 0.08

    def __post_init__(self):
        for cell in CELLS:
            if self.area.get(cell, 0.0) <= 0.0 or self.power.get(cell, 0.0) <= 0.0:
                raise ValueError(f"cell {cell!r} needs positive area and power")
        if self.clock_period_s <= 0.0:
            raise ValueError("clock period must be positive")


def default_tech(clock_period_s: float = 0.08) -> TechLibrary:
    """Relative default library: mux2 = 2 dff / 4 in area, dffs power-heavy."""
    return TechLibrary(
        area={
            "dff": 4.0,
            "mux2": 2.0,
            "full_adder": 3.0,
            "inverter": 0.5,
            "comparator_bit": 3.0,
            "shifter_stage": 2.0,
        },
        power={
            "dff": 2.0,
            "mux2": 0.25,
            "full_adder": 0.5,
            "inverter": 0.1,
            "comparator_bit": 0.5,
            "shifter_stage": 0.25,
        },
        clock_period_s=clock_period_s,
    )


def load_tech(path) -> TechLibrary:
    """Parse a flat `key = value` technology file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = float(val)
    area = {c: values.pop(f"{c}_area") for c in CELLS}
    power = {c: values.pop(f"{c}_power") for c in CELLS}
    clock = values.pop("clock_period_s")
    if values:
        raise ValueError(f"{path}: unknown keys {sorted(values)}")
    return TechLibrary(area=area, power=power, clock_period_s=clock)


def save_tech(tech: TechLibrary, path) -> None:
    lines = [f"{c}_area = {tech.area[c]}" for c in CELLS]
    lines += [f"{c}_power = {tech.power[c]}" for c in CELLS]
    lines.append(f"clock_period_s = {tech.clock_period_s}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class AreaPower:
    area: float
    power: float

    def __add__(self, other: "AreaPower") -> "AreaPower":
        return AreaPower(self.area + other.area, self.power + other.power)


def _price(cells: Counter, tech: TechLibrary) -> AreaPower:
    return AreaPower(
        area=sum(n * tech.area[c] for c, n in cells.items()),
        power=sum(n * tech.power[c] for c, n in cells.items()),
    )


def mux_cost(n_inputs: int, bit_width: int, tech: TechLibrary) -> AreaPower:
    """Cost of an n-way select: a tree of (n - 1) mux2 cells per bit."""
    if n_inputs < 1:
        raise ValueError("mux needs at least one input")
    return _price(Counter({"mux2": (n_inputs - 1) * bit_width}), tech)


def register_chain_cost(n_entries: int, bit_width: int, tech: TechLibrary) -> AreaPower:
    """Cost of a shift-register chain: one dff per entry per bit."""
    if n_entries < 1:
        raise ValueError("chain needs at least one entry")
    return _price(Counter({"dff": n_entries * bit_width}), tech)


def counter_width(latency: int) -> int:
    return max(1, math.ceil(math.log2(latency)))


def index_width(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def _qrelu_mux_bits(acc_width: int, t: int, out_bits: int) -> int:
    sat = out_bits if acc_width - t > out_bits else 0
    return acc_width + sat


def _multi_cycle_cells(path: MultiCyclePath, entries: int, acc_width: int, input_bits: int) -> Counter:
    res_bits = path.max_residual.bit_length()
    cells = Counter()
    cells["mux2"] += (entries - 1) * (res_bits + 2)  # residual + sign + zero select
    cells["shifter_stage"] += res_bits * (input_bits + path.max_residual)
    cells["mux2"] += acc_width  # invert select for negative weights
    cells["inverter"] += acc_width
    cells["full_adder"] += acc_width  # accumulate, carry-in absorbs the +1
    cells["dff"] += acc_width
    return cells


_SINGLE_CYCLE_CELLS = Counter({"dff": 2, "full_adder": 1})


def circuit_blocks(circuit: CircuitModel) -> dict:
    """Per-block cell counters for the sequential circuit.

    Blocks: controller, hidden, output, interlayer_mux, argmax. The same
    counters feed pricing and the structural census.
    """
    wc = counter_width(circuit.latency)
    blocks: dict = {
        "controller": Counter({"dff": wc, "full_adder": 2 * wc, "comparator_bit": 3 * wc})
    }

    hidden = Counter()
    for path in circuit.hidden_paths:
        if isinstance(path, MultiCyclePath):
            hidden += _multi_cycle_cells(
                path, circuit.n_inputs, circuit.hidden_acc_width, circuit.input_bits
            )
            hidden["mux2"] += _qrelu_mux_bits(
                circuit.hidden_acc_width, circuit.t_hidden, circuit.input_bits
            )
        else:
            hidden += _SINGLE_CYCLE_CELLS
    blocks["hidden"] = hidden

    output = Counter()
    for path in circuit.output_paths:
        if isinstance(path, MultiCyclePath):
            output += _multi_cycle_cells(
                path, circuit.n_hidden, circuit.output_acc_width, circuit.input_bits
            )
        else:
            output += _SINGLE_CYCLE_CELLS
    blocks["output"] = output

    blocks["interlayer_mux"] = Counter(
        {"mux2": (circuit.n_hidden - 1) * circuit.input_bits}
    )
    blocks["argmax"] = Counter(
        {
            "comparator_bit": circuit.output_acc_width,
            "dff": circuit.output_acc_width + index_width(circuit.n_classes),
            "mux2": (circuit.n_classes - 1) * circuit.output_acc_width,
        }
    )
    return blocks


def census_of(blocks: dict) -> dict:
    """Construct counts: register bits, mux2-shaped cells, adder bits, comparator bits."""
    total = Counter()
    for cells in blocks.values():
        total += cells
    return {
        "registers": total["dff"],
        "muxes": total["mux2"] + total["shifter_stage"],
        "adders": total["full_adder"],
        "comparators": total["comparator_bit"],
    }


@dataclass(frozen=True)
class CostReport:
    area: float
    power: float
    latency_cycles: int
    clock_period_s: float
    blocks: dict
    census: dict
    instances: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.power * self.latency_cycles * self.clock_period_s

    def to_doc(self) -> dict:
        return {
            "area": self.area,
            "power": self.power,
            "latency_cycles": self.latency_cycles,
            "clock_period_s": self.clock_period_s,
            "energy": self.energy,
            "blocks": {k: {"area": v.area, "power": v.power} for k, v in sorted(self.blocks.items())},
            "census": dict(sorted(self.census.items())),
            "instances": dict(sorted(self.instances.items())),
        }


def _report(blocks: dict, latency: int, tech: TechLibrary, instances: dict | None = None) -> CostReport:
    priced = {name: _price(cells, tech) for name, cells in blocks.items()}
    return CostReport(
        area=sum(p.area for p in priced.values()),
        power=sum(p.power for p in priced.values()),
        latency_cycles=latency,
        clock_period_s=tech.clock_period_s,
        blocks=priced,
        census=census_of(blocks),
        instances=instances or {},
    )


def circuit_cost(circuit: CircuitModel, tech: TechLibrary) -> CostReport:
    """Price the elaborated sequential circuit block by block."""
    return _report(circuit_blocks(circuit), circuit.latency, tech)


def combinational_baseline_cost(qmodel: QuantizedModel, tech: TechLibrary) -> CostReport:
    """Fully parallel bespoke reference: one shifter+adder per non-zero weight.

    With hardwired pow2 weights a fixed shift is wiring, so shifter instances
    carry no cells; each weight still contributes an accumulator-width adder
    into its neuron's tree. Single-cycle latency, no registers, a parallel
    comparator chain for the argmax.
    """
    spec = qmodel.spec
    widths = {"hidden": qmodel.hidden_acc_width, "output": qmodel.output_acc_width}
    blocks: dict = {}
    instances = {"shifters": 0, "weight_adders": 0}
    for name, layer in (("hidden", qmodel.hidden), ("output", qmodel.outputs)):
        cells = Counter()
        nonzero = int((~layer.zeros).sum())
        cells["full_adder"] += nonzero * widths[name]
        instances["shifters"] += nonzero
        instances["weight_adders"] += nonzero
        if name == "hidden":
            cells["mux2"] += layer.n_neurons * _qrelu_mux_bits(
                widths[name], spec.t_hidden, spec.input_bits
            )
        blocks[name] = cells
    blocks["argmax"] = Counter(
        {
            "comparator_bit": (qmodel.n_classes - 1) * widths["output"],
            "mux2": (qmodel.n_classes - 1)
            * (widths["output"] + index_width(qmodel.n_classes)),
        }
    )
    return _report(blocks, 1, tech, instances)


def save_cost_report(report: CostReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_doc(), indent=2, sort_keys=True) + "\n")
