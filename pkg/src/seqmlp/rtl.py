"""Deterministic RTL generation for the elaborated sequential circuit.

One module per block: controller, hidden_neuron_k, output_neuron_k,
argmax_unit, top. Weights are hardwired constants behind state-indexed
ternary chains, registers exist exactly where the simulator keeps state,
and reset loads the biases. The same CircuitModel always produces
byte-identical text.

`structural_census` recounts registers, muxes, adders, and comparators
straight from the emitted text, independently of the cost model, using
these rules: every `reg` declaration contributes its bit width; every `?:`
contributes the assigned signal's width in 2-to-1 muxes; every binary `+`
or `-` contributes the wider operand's width in adder bits, with a trailing
1-bit addend treated as the adder's carry-in; every `<`/`>` comparison
contributes the operand width in comparator bits. Equality decodes,
bitwise gating, and constant shifts or negations are wiring and gates, not
census cells.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .approx import NeuronApproxPlan
from .simulate import CircuitModel, MultiCyclePath
from .cost import counter_width, index_width


class EmitError(ValueError):
    """Static width or plan inconsistency that would corrupt the RTL."""


def _lit(width: int, value: int) -> str:
    if value < 0:
        return f"-{width}'sd{-value}"
    return f"{width}'d{value}"


def _zeros(n: int) -> str:
    return f"{{{n}{{1'b0}}}}"


def _concat(parts: list) -> str:
    parts = [p for p in parts if p]
    return parts[0] if len(parts) == 1 else "{" + ", ".join(parts) + "}"


def _table(lhs: str, width: int, state_w: int, offset: int, values: list) -> str:
    """State-indexed constant table as a ternary chain; last entry is the default."""
    if len(values) == 1:
        return f"  assign {lhs} = {_lit(width, values[0])};"
    arms = [
        f"(state == {_lit(state_w, offset + j)}) ? {_lit(width, values[j])} : "
        for j in range(len(values) - 1)
    ]
    return f"  assign {lhs} = {''.join(arms)}{_lit(width, values[-1])};"


def _emit_multi_cycle(
    name: str,
    path: MultiCyclePath,
    entries: int,
    offset: int,
    acc_width: int,
    state_w: int,
    input_bits: int,
) -> str:
    res_bits = path.max_residual.bit_length()
    sw = input_bits + path.max_residual
    cs = path.common_shift
    if acc_width < sw + cs + 1:
        raise EmitError(f"{name}: accumulator width {acc_width} cannot hold shifted products")
    if not -(1 << (acc_width - 1)) <= path.bias < (1 << (acc_width - 1)):
        raise EmitError(f"{name}: bias {path.bias} does not fit {acc_width} bits")

    lines = [
        f"module {name}(",
        "  input wire clk,",
        "  input wire rst,",
        "  input wire en,",
        f"  input wire [{state_w - 1}:0] state,",
        f"  input wire [{input_bits - 1}:0] in_value,",
        f"  output wire signed [{acc_width - 1}:0] value",
        ");",
    ]
    if res_bits:
        lines.append(f"  wire [{res_bits - 1}:0] w_shift;")
    lines += [
        "  wire w_sign;",
        "  wire w_zero;",
        f"  wire [{acc_width - 1}:0] spread;",
        f"  wire [{acc_width - 1}:0] gated;",
        f"  wire [{acc_width - 1}:0] addend;",
        f"  reg signed [{acc_width - 1}:0] acc;",
    ]
    if res_bits:
        lines.append(f"  wire [{sw - 1}:0] sh_in;")
        lines += [f"  wire [{sw - 1}:0] sh_{k};" for k in range(res_bits)]
        lines.append(_table("w_shift", res_bits, state_w, offset, list(path.residuals)))
    lines.append(_table("w_sign", 1, state_w, offset, [int(s < 0) for s in path.signs]))
    lines.append(_table("w_zero", 1, state_w, offset, [int(z) for z in path.zeros]))

    if res_bits:
        pad = sw - input_bits
        lines.append(f"  assign sh_in = {_concat([_zeros(pad) if pad else '', 'in_value'])};")
        prev = "sh_in"
        for k in range(res_bits):
            step = 1 << k
            shifted = _concat([f"{prev}[{sw - 1 - step}:0]", _zeros(step)])
            lines.append(f"  assign sh_{k} = w_shift[{k}] ? {shifted} : {prev};")
            prev = f"sh_{k}"
        shifted_src = prev
        src_width = sw
    else:
        shifted_src = "in_value"
        src_width = input_bits

    head = acc_width - src_width - cs
    lines.append(
        f"  assign spread = {_concat([_zeros(head) if head else '', shifted_src, _zeros(cs) if cs else ''])};"
    )
    lines += [
        f"  assign gated = spread & {{{acc_width}{{~w_zero}}}};",
        "  assign addend = w_sign ? ~gated : gated;",
        "  always @(posedge clk) begin",
        "    if (rst)",
        f"      acc <= {_lit(acc_width, path.bias)};",
        "    else if (en)",
        "      acc <= acc + addend + w_sign;",
        "  end",
        "  assign value = acc;",
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


def _emit_single_cycle(
    name: str, plan: NeuronApproxPlan, offset: int, state_w: int, input_bits: int
) -> str:
    """Two capture registers plus one 1-bit add; sign handling is wiring.

    `pair` is a + b for equal signs; for mixed signs it is the 1-bit
    subtraction whose two bits read as two's complement. The (-,-) case
    keeps the positive sum and is negated at the use site.
    """
    if plan.s1 == plan.s2:
        op = "cap_a + cap_b"
    elif plan.s1 > 0:
        op = "cap_a - cap_b"
    else:
        op = "cap_b - cap_a"
    lines = [
        f"module {name}(",
        "  input wire clk,",
        "  input wire rst,",
        "  input wire en,",
        f"  input wire [{state_w - 1}:0] state,",
        f"  input wire [{input_bits - 1}:0] in_value,",
        "  output wire [1:0] pair",
        ");",
        "  reg cap_a;",
        "  reg cap_b;",
        "  always @(posedge clk) begin",
        "    if (rst) begin",
        "      cap_a <= 1'b0;",
        "      cap_b <= 1'b0;",
        "    end else if (en) begin",
        f"      if (state == {_lit(state_w, offset + plan.i1)})",
        f"        cap_a <= in_value[{plan.b1}];",
        f"      if (state == {_lit(state_w, offset + plan.i2)})",
        f"        cap_b <= in_value[{plan.b2}];",
        "    end",
        "  end",
        f"  assign pair = {op};",
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


def _emit_controller(circuit: CircuitModel) -> str:
    wc = counter_width(circuit.latency)
    ib = index_width(circuit.n_classes)
    n = circuit.n_inputs
    nh = n + circuit.n_hidden
    total = circuit.latency
    lines = [
        "module controller(",
        "  input wire clk,",
        "  input wire rst,",
        f"  output reg [{wc - 1}:0] state,",
        "  output wire en_hidden,",
        "  output wire en_output,",
        "  output wire en_argmax,",
        f"  output wire [{ib - 1}:0] class_idx",
        ");",
        "  wire lt_n;",
        "  wire lt_nh;",
        "  wire lt_total;",
        f"  wire [{wc - 1}:0] class_off;",
        "  always @(posedge clk) begin",
        "    if (rst)",
        f"      state <= {_zeros(wc)};",
        "    else",
        "      state <= state + 1'b1;",
        "  end",
        f"  assign lt_n = state < {_lit(wc, n)};",
        f"  assign lt_nh = state < {_lit(wc, nh)};",
        f"  assign lt_total = state < {_lit(wc, total)};",
        "  assign en_hidden = lt_n;",
        "  assign en_output = ~lt_n & lt_nh;",
        "  assign en_argmax = ~lt_nh & lt_total;",
        f"  assign class_off = state - {_lit(wc, nh)};",
        f"  assign class_idx = class_off[{ib - 1}:0];",
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


def _emit_argmax(circuit: CircuitModel) -> str:
    wo = circuit.output_acc_width
    ib = index_width(circuit.n_classes)
    min_const = _concat(["1'b1", _zeros(wo - 1)])
    lines = [
        "module argmax_unit(",
        "  input wire clk,",
        "  input wire rst,",
        "  input wire en,",
        f"  input wire signed [{wo - 1}:0] value,",
        f"  input wire [{ib - 1}:0] class_idx,",
        f"  output wire [{ib - 1}:0] winner",
        ");",
        f"  reg signed [{wo - 1}:0] best;",
        f"  reg [{ib - 1}:0] best_idx;",
        "  always @(posedge clk) begin",
        "    if (rst) begin",
        f"      best <= {min_const};",
        f"      best_idx <= {_zeros(ib)};",
        "    end else if (en) begin",
        "      if (value > best) begin",
        "        best <= value;",
        "        best_idx <= class_idx;",
        "      end",
        "    end",
        "  end",
        "  assign winner = best_idx;",
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


def _qrelu_lines(target: str, prefix: str, value: str, acc_width: int, t: int, out_bits: int) -> tuple:
    """Clamp-shift-saturate from a signed accumulator to an output code."""
    wp = acc_width - t
    if wp < 1:
        raise EmitError(f"truncation {t} leaves no bits of a {acc_width}-bit accumulator")
    decls = [
        f"  wire [{acc_width - 1}:0] {prefix}_pos;",
        f"  wire [{wp - 1}:0] {prefix}_trunc;",
    ]
    body = [
        f"  assign {prefix}_pos = {value}[{acc_width - 1}] ? {_zeros(acc_width)} : {value};",
        f"  assign {prefix}_trunc = {prefix}_pos[{acc_width - 1}:{t}];",
    ]
    if wp > out_bits:
        decls.append(f"  wire {prefix}_sat;")
        if wp - 1 > out_bits:
            body.append(f"  assign {prefix}_sat = |{prefix}_trunc[{wp - 1}:{out_bits}];")
        else:
            body.append(f"  assign {prefix}_sat = {prefix}_trunc[{out_bits}];")
        body.append(
            f"  assign {target} = {prefix}_sat ? {{{out_bits}{{1'b1}}}} : {prefix}_trunc[{out_bits - 1}:0];"
        )
    elif wp == out_bits:
        body.append(f"  assign {target} = {prefix}_trunc;")
    else:
        body.append(f"  assign {target} = {_concat([_zeros(out_bits - wp), prefix + '_trunc'])};")
    return decls, body


def _sc_code_expr(plan: NeuronApproxPlan, pair: str, t: int, out_bits: int) -> str:
    """Output code of a single-cycle hidden neuron: rewiring and gates only.

    The estimate is a two-bit quantity placed at the leading-1 column, so
    after the qReLU shift each of its bits either lands in the code window,
    forces saturation from above it, or falls off below.
    """
    if plan.s1 < 0 and plan.s2 < 0:
        return f"{_zeros(out_bits)}"
    if plan.s1 == plan.s2:
        contributions = [(f"{pair}[0]", plan.lead_col), (f"{pair}[1]", plan.lead_col + 1)]
    else:
        contributions = [(f"({pair}[0] & ~{pair}[1])", plan.lead_col)]
    window = [None] * out_bits
    sat_terms = []
    for expr, col in contributions:
        q = col - t
        if q >= out_bits:
            sat_terms.append(expr)
        elif q >= 0:
            window[q] = expr
    bits = [window[i] if window[i] else "1'b0" for i in reversed(range(out_bits))]
    placed = "{" + ", ".join(bits) + "}"
    if sat_terms:
        force = sat_terms[0] if len(sat_terms) == 1 else "(" + " | ".join(sat_terms) + ")"
        return f"{{{out_bits}{{{force}}}}} | {placed}"
    return placed


def _sc_value_expr(plan: NeuronApproxPlan, pair: str, width: int) -> str:
    """Signed estimate of a single-cycle output neuron, extended to the bus."""
    lead = plan.lead_col
    if lead + 2 > width:
        raise EmitError(f"leading-1 column {lead} does not fit a {width}-bit value")
    low = _zeros(lead) if lead else ""
    if plan.s1 == plan.s2:
        body = _concat([_zeros(width - 2 - lead) if width - 2 - lead else "", pair, low])
        return body if plan.s1 > 0 else f"-$signed({body})"
    return _concat([f"{{{width - 1 - lead}{{{pair}[1]}}}}", f"{pair}[0]", low])


def _emit_top(circuit: CircuitModel) -> str:
    wc = counter_width(circuit.latency)
    ib = index_width(circuit.n_classes)
    wh, wo = circuit.hidden_acc_width, circuit.output_acc_width
    ob = circuit.input_bits
    n, h, c = circuit.n_inputs, circuit.n_hidden, circuit.n_classes

    decls = [
        f"  wire [{wc - 1}:0] state;",
        "  wire en_hidden;",
        "  wire en_output;",
        "  wire en_argmax;",
        f"  wire [{ib - 1}:0] class_idx;",
        f"  wire [{ob - 1}:0] hidden_bus;",
        f"  wire signed [{wo - 1}:0] out_bus;",
    ]
    insts = [
        "  controller u_controller(.clk(clk), .rst(rst), .state(state), .en_hidden(en_hidden),"
        " .en_output(en_output), .en_argmax(en_argmax), .class_idx(class_idx));",
    ]
    code_logic = []

    for j, path in enumerate(circuit.hidden_paths):
        if isinstance(path, MultiCyclePath):
            decls.append(f"  wire signed [{wh - 1}:0] h_value_{j};")
            decls.append(f"  wire [{ob - 1}:0] h_code_{j};")
            insts.append(
                f"  hidden_neuron_{j} u_hidden_{j}(.clk(clk), .rst(rst), .en(en_hidden),"
                f" .state(state), .in_value(in_code), .value(h_value_{j}));"
            )
            q_decls, q_body = _qrelu_lines(
                f"h_code_{j}", f"h{j}", f"h_value_{j}", wh, circuit.t_hidden, ob
            )
            decls += q_decls
            code_logic += q_body
        else:
            decls.append(f"  wire [1:0] h_pair_{j};")
            decls.append(f"  wire [{ob - 1}:0] h_code_{j};")
            insts.append(
                f"  hidden_neuron_{j} u_hidden_{j}(.clk(clk), .rst(rst), .en(en_hidden),"
                f" .state(state), .in_value(in_code), .pair(h_pair_{j}));"
            )
            code_logic.append(
                f"  assign h_code_{j} = {_sc_code_expr(path, f'h_pair_{j}', circuit.t_hidden, ob)};"
            )

    bus_arms = [
        f"(state == {_lit(wc, n + j)}) ? h_code_{j} : " for j in range(h - 1)
    ]
    code_logic.append(f"  assign hidden_bus = {''.join(bus_arms)}h_code_{h - 1};")

    for k, path in enumerate(circuit.output_paths):
        decls.append(f"  wire signed [{wo - 1}:0] o_value_{k};")
        if isinstance(path, MultiCyclePath):
            insts.append(
                f"  output_neuron_{k} u_output_{k}(.clk(clk), .rst(rst), .en(en_output),"
                f" .state(state), .in_value(hidden_bus), .value(o_value_{k}));"
            )
        else:
            decls.append(f"  wire [1:0] o_pair_{k};")
            insts.append(
                f"  output_neuron_{k} u_output_{k}(.clk(clk), .rst(rst), .en(en_output),"
                f" .state(state), .in_value(hidden_bus), .pair(o_pair_{k}));"
            )
            code_logic.append(
                f"  assign o_value_{k} = {_sc_value_expr(path, f'o_pair_{k}', wo)};"
            )

    out_arms = [
        f"(class_idx == {_lit(ib, k)}) ? o_value_{k} : " for k in range(c - 1)
    ]
    code_logic.append(f"  assign out_bus = {''.join(out_arms)}o_value_{c - 1};")
    insts.append(
        "  argmax_unit u_argmax(.clk(clk), .rst(rst), .en(en_argmax), .value(out_bus),"
        " .class_idx(class_idx), .winner(class_out));"
    )

    lines = [
        "module top(",
        "  input wire clk,",
        "  input wire rst,",
        f"  input wire [{ob - 1}:0] in_code,",
        f"  output wire [{ib - 1}:0] class_out",
        ");",
        *decls,
        *insts,
        *code_logic,
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RtlBundle:
    files: dict  # name -> text, insertion-ordered
    testbench: str | None = None

    def manifest(self) -> dict:
        hashes = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in self.files.items()}
        if self.testbench is not None:
            hashes["testbench.v"] = hashlib.sha256(self.testbench.encode()).hexdigest()
        bundle = hashlib.sha256(
            "".join(f"{k}:{v}\n" for k, v in sorted(hashes.items())).encode()
        ).hexdigest()
        return {"files": dict(sorted(hashes.items())), "bundle_sha256": bundle}


def emit_rtl(circuit: CircuitModel) -> RtlBundle:
    """Emit every module of the circuit as deterministic text."""
    wc = counter_width(circuit.latency)
    files = {"controller.v": _emit_controller(circuit)}
    for j, path in enumerate(circuit.hidden_paths):
        name = f"hidden_neuron_{j}"
        if isinstance(path, MultiCyclePath):
            files[f"{name}.v"] = _emit_multi_cycle(
                name, path, circuit.n_inputs, 0, circuit.hidden_acc_width, wc, circuit.input_bits
            )
        else:
            files[f"{name}.v"] = _emit_single_cycle(name, path, 0, wc, circuit.input_bits)
    for k, path in enumerate(circuit.output_paths):
        name = f"output_neuron_{k}"
        if isinstance(path, MultiCyclePath):
            files[f"{name}.v"] = _emit_multi_cycle(
                name, path, circuit.n_hidden, circuit.n_inputs,
                circuit.output_acc_width, wc, circuit.input_bits,
            )
        else:
            files[f"{name}.v"] = _emit_single_cycle(
                name, path, circuit.n_inputs, wc, circuit.input_bits
            )
    files["argmax.v"] = _emit_argmax(circuit)
    files["top.v"] = _emit_top(circuit)
    return RtlBundle(files=files)


def emit_testbench(circuit: CircuitModel, vectors, expected) -> str:
    """Self-checking bench: one input code per cycle, one check per vector."""
    vectors = [list(v) for v in vectors]
    expected = list(expected)
    if len(vectors) != len(expected):
        raise ValueError("one expected class per vector is required")
    for i, v in enumerate(vectors):
        if len(v) != circuit.n_inputs:
            raise ValueError(
                f"vector {i} has {len(v)} codes; the circuit consumes {circuit.n_inputs} per inference"
            )
    ib = index_width(circuit.n_classes)
    ob = circuit.input_bits
    settle = circuit.n_hidden + circuit.n_classes
    lines = [
        "`timescale 1ms/1us",
        "module testbench;",
        "  reg clk;",
        "  reg rst;",
        f"  reg [{ob - 1}:0] in_code;",
        f"  wire [{ib - 1}:0] class_out;",
        "  integer errors;",
        "  top dut(.clk(clk), .rst(rst), .in_code(in_code), .class_out(class_out));",
        "  always #5 clk = ~clk;",
        "  initial begin",
        "    clk = 1'b0;",
        "    errors = 0;",
        f"    in_code = {_zeros(ob)};",
        "    rst = 1'b1;",
    ]
    for i, (vec, exp) in enumerate(zip(vectors, expected)):
        lines += [
            f"    // vector {i}",
            "    rst = 1'b1;",
            "    @(negedge clk);",
            "    rst = 1'b0;",
        ]
        for code in vec:
            lines += [f"    in_code = {_lit(ob, int(code))};", "    @(negedge clk);"]
        lines.append(f"    repeat ({settle}) @(negedge clk);")
        lines += [
            f"    if (class_out !== {_lit(ib, int(exp))}) begin",
            f'      $display("FAIL vector {i}: got %0d expected {int(exp)}", class_out);',
            "      errors = errors + 1;",
            "    end else begin",
            f'      $display("PASS vector {i}");',
            "    end",
        ]
    lines += [
        '    $display("testbench done: %0d errors", errors);',
        "    $finish;",
        "  end",
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


def write_bundle(bundle: RtlBundle, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in bundle.files.items():
        (out / name).write_text(text)
    if bundle.testbench is not None:
        (out / "testbench.v").write_text(bundle.testbench)
    manifest = bundle.manifest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


_DECL_RE = re.compile(
    r"^\s*(?:input\s+|output\s+|inout\s+)?(wire|reg)\s+(?:signed\s+)?"
    r"(?:\[(\d+):(\d+)\]\s*)?(\w+)\s*[;,)]?\s*$"
)
_ASSIGN_RE = re.compile(r"^\s*assign\s+(\w+)\s*=\s*(.+);\s*$")
_NONBLOCK_RE = re.compile(r"^\s*(\w+)\s*<=\s*(.+);\s*$")
_IF_RE = re.compile(r"^\s*(?:end\s+)?(?:else\s+)?if\s*\((.+)\)\s*(?:begin)?\s*$")
_CMP_RE = re.compile(r"([\w\[\]']+)\s*(<|>)\s*([\w\[\]']+)")
_LIT_RE = re.compile(r"^-?(\d+)'s?[bdh]")


def _operand_width(token: str, widths: dict) -> int:
    token = token.strip()
    m = _LIT_RE.match(token)
    if m:
        return int(m.group(1))
    if "[" in token:
        name, sel = token.split("[", 1)
        sel = sel.rstrip("]")
        if ":" in sel:
            hi, lo = (int(x) for x in sel.split(":"))
            return hi - lo + 1
        return 1
    if token in widths:
        return widths[token]
    raise ValueError(f"cannot determine width of operand {token!r}")


def _split_terms(expr: str) -> list | None:
    """Top-level +/- term split; None when the expression is not a plain sum."""
    depth = 0
    terms, current = [], ""
    prev = ""
    for ch in expr:
        if ch in "({[":
            depth += 1
        elif ch in ")}]":
            depth -= 1
        if ch in "+-" and depth == 0 and prev.strip()[-1:] not in ("", "=", "(", "?", ":", ","):
            terms.append(current.strip())
            current = ""
            prev = ""
            continue
        current += ch
        prev += ch
    terms.append(current.strip())
    if len(terms) < 2 or any(not t for t in terms):
        return None
    return terms


def structural_census(files: dict) -> dict:
    """Count registers, muxes, adders, comparators in emitted module text."""
    counts = {"registers": 0, "muxes": 0, "adders": 0, "comparators": 0}
    for text in files.values():
        widths: dict = {}
        lines = [ln.split("//", 1)[0] for ln in text.splitlines()]
        for ln in lines:
            m = _DECL_RE.match(ln)
            if m:
                kind, hi, lo, name = m.groups()
                bits = (int(hi) - int(lo) + 1) if hi is not None else 1
                widths[name] = bits
                if kind == "reg":
                    counts["registers"] += bits

        def count_rhs(lhs: str, rhs: str) -> None:
            if "?" in rhs:
                counts["muxes"] += rhs.count("?") * widths[lhs]
            for m in _CMP_RE.finditer(rhs):
                counts["comparators"] += max(
                    _operand_width(m.group(1), widths), _operand_width(m.group(3), widths)
                )
            if "?" in rhs or _CMP_RE.search(rhs):
                return
            terms = _split_terms(rhs)
            if terms is None:
                return
            if len(terms) == 3 and _operand_width(terms[2], widths) == 1:
                terms = terms[:2]  # trailing 1-bit addend rides the carry-in
            counts["adders"] += max(_operand_width(t, widths) for t in terms[:2])

        for ln in lines:
            m = _ASSIGN_RE.match(ln)
            if m:
                count_rhs(m.group(1), m.group(2))
                continue
            m = _NONBLOCK_RE.match(ln)
            if m:
                count_rhs(m.group(1), m.group(2))
                continue
            m = _IF_RE.match(ln)
            if m:
                for c in _CMP_RE.finditer(m.group(1)):
                    counts["comparators"] += max(
                        _operand_width(c.group(1), widths), _operand_width(c.group(3), widths)
                    )
    return counts
