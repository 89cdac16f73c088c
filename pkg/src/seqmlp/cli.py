"""Command-line interface: run the whole pipeline or any stage on its own.

Stages communicate through the JSON artifacts documented in the package
(model.json, qmodel.json, plan.json, cost_*.json, rtl/). Every command exits
0 on success and nonzero with a stage-tagged message on stderr otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .approx import GaConfig, all_exact_plan, hybrid_accuracy, load_plan, nsga2_select, save_plan
from .cost import circuit_cost, combinational_baseline_cost, default_tech, load_tech, save_cost_report
from .model import DatasetSchema, TrainConfig, accuracy, float_infer, load_dataset, load_model, save_model, train
from .pipeline import (
    PipelineConfig,
    PipelineError,
    compare_reports,
    dataset_codes,
    run_pipeline,
    write_json,
)
from .quantize import QuantSpec, encode_inputs, load_quantized, quantize_model, quantized_accuracy, save_quantized
from .rfp import prune
from .rtl import emit_rtl, emit_testbench, write_bundle
from .simulate import batch_eval, build_circuit, run_inference, write_trace_jsonl


def add_dataset_args(parser):
    parser.add_argument("--dataset", required=True, help="CSV file with a header row")
    parser.add_argument("--label-column", default="-1", help="label column name or index (default: last)")
    parser.add_argument("--drop", action="append", default=[], help="column to ignore; repeatable")
    parser.add_argument("--test-fraction", type=float, default=0.3)
    parser.add_argument("--split-seed", type=int, default=0, help="train/test split seed")


def parse_label(value):
    try:
        return int(value)
    except ValueError:
        return value


def read_dataset(args):
    schema = DatasetSchema(
        label_column=parse_label(args.label_column),
        drop_columns=tuple(args.drop),
        test_fraction=args.test_fraction,
        seed=args.split_seed,
    )
    return load_dataset(args.dataset, schema)


def cmd_train(args):
    dataset = read_dataset(args)
    model = train(
        dataset,
        TrainConfig(hidden=args.hidden, epochs=args.epochs, learning_rate=args.lr, seed=args.seed),
    )
    save_model(model, args.out)
    for split in ("train", "test"):
        acc = accuracy(lambda x: float_infer(model, x)[0], dataset, split)
        print(f"{split} accuracy: {acc:.4f}")
    print(f"wrote {args.out}")


def cmd_quantize(args):
    dataset = read_dataset(args)
    model = load_model(args.model)
    spec = QuantSpec(e_max=args.e_max)
    codes = encode_inputs(dataset.normalized("train"), spec)
    qmodel = quantize_model(model, spec, train_codes=codes, calibrate=not args.static)
    save_quantized(qmodel, args.out)
    for split in ("train", "test"):
        acc = quantized_accuracy(qmodel, dataset_codes(dataset, split, qmodel), dataset.split_labels(split))
        print(f"{split} accuracy: {acc:.4f}")
    print(f"wrote {args.out}")


def cmd_prune(args):
    dataset = read_dataset(args)
    qmodel = load_quantized(args.qmodel)
    result = prune(
        qmodel,
        dataset_codes(dataset, "train", qmodel),
        dataset.split_labels("train"),
        threshold=args.threshold,
    )
    save_quantized(result.model, args.out)
    kept = len(result.kept_indices)
    print(f"kept {kept}/{qmodel.n_inputs} inputs (threshold {result.threshold:.4f})")
    if result.threshold_unreachable:
        print("warning: threshold unreachable; all inputs kept", file=sys.stderr)
    test_acc = quantized_accuracy(
        result.model, dataset_codes(dataset, "test", result.model), dataset.split_labels("test")
    )
    print(f"pruned test accuracy: {test_acc:.4f}")
    print(f"wrote {args.out}")


def cmd_approximate(args):
    dataset = read_dataset(args)
    qmodel = load_quantized(args.qmodel)
    result = nsga2_select(
        qmodel,
        dataset_codes(dataset, "train", qmodel),
        dataset.split_labels("train"),
        GaConfig(
            population=args.population,
            generations=args.generations,
            crossover_rate=args.crossover,
            mutation_rate=args.mutation,
            seed=args.seed,
            max_drop=args.max_drop,
        ),
    )
    save_plan(result.chosen, args.out)
    print(
        f"approximated {result.chosen.approximated_count} neurons "
        f"(accuracy {result.chosen.accuracy:.4f}, baseline {result.chosen.baseline_accuracy:.4f})"
    )
    print(f"wrote {args.out}")


def load_plan_or_exact(plan_path, qmodel):
    if plan_path:
        return load_plan(plan_path)
    return all_exact_plan(qmodel)


def cmd_simulate(args):
    dataset = read_dataset(args)
    qmodel = load_quantized(args.qmodel)
    plan = load_plan_or_exact(args.plan, qmodel)
    circuit = build_circuit(qmodel, plan)
    codes = dataset_codes(dataset, args.split, qmodel)
    labels = dataset.split_labels(args.split)
    result = batch_eval(circuit, codes, labels)
    doc = {
        "split": args.split,
        "accuracy": result.accuracy,
        "latency_cycles": result.latency_cycles,
        "total_cycles": result.total_cycles,
        "samples": len(codes),
    }
    write_json(doc, args.out)
    print(f"{args.split} accuracy {result.accuracy:.4f}, latency {result.latency_cycles} cycles")
    if args.trace is not None:
        sample = run_inference(circuit, [int(c) for c in codes[args.trace_sample]])
        write_trace_jsonl(sample.trace, args.trace)
        print(f"wrote cycle trace of sample {args.trace_sample} to {args.trace}")
    print(f"wrote {args.out}")


def resolve_tech_args(args):
    tech = load_tech(args.tech) if args.tech else default_tech()
    if args.clock is not None:
        tech = dataclasses.replace(tech, clock_period_s=args.clock)
    return tech


def cmd_cost(args):
    qmodel = load_quantized(args.qmodel)
    plan = load_plan_or_exact(args.plan, qmodel)
    tech = resolve_tech_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {
        "sequential_exact": circuit_cost(build_circuit(qmodel), tech),
        "sequential_hybrid": circuit_cost(build_circuit(qmodel, plan), tech),
        "combinational": combinational_baseline_cost(qmodel, tech),
    }
    for name, report in reports.items():
        save_cost_report(report, out / f"cost_{name}.json")
        print(
            f"{name:>18}: area {report.area:10.1f}  power {report.power:9.2f}  "
            f"energy {report.energy:12.4f}  ({report.latency_cycles} cycles)"
        )
    print(f"wrote cost reports to {out}")


def cmd_emit(args):
    qmodel = load_quantized(args.qmodel)
    plan = load_plan_or_exact(args.plan, qmodel)
    circuit = build_circuit(qmodel, plan)
    bundle = emit_rtl(circuit)
    rng = np.random.default_rng(args.seed)
    vectors = [list(map(int, rng.integers(0, 16, circuit.n_inputs))) for _ in range(args.vectors)]
    expected = [run_inference(circuit, v, keep_trace=False).predicted_class for v in vectors]
    bundle = dataclasses.replace(bundle, testbench=emit_testbench(circuit, vectors, expected))
    manifest = write_bundle(bundle, args.out)
    print(f"emitted {len(manifest['files'])} files to {args.out}")
    print(f"bundle sha256: {manifest['bundle_sha256']}")


def cmd_run(args):
    config = PipelineConfig.from_file(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    report = run_pipeline(config, stop_after=args.stage)
    if report is None:
        print(f"stopped after stage {args.stage!r}; artifacts in {config.out_dir}")
        return
    acc = report.accuracy
    print(f"pipeline complete; artifacts in {config.out_dir}")
    for stage in ("float", "quantized", "pruned", "hybrid"):
        print(f"  {stage:>10}: train {acc[f'{stage}_train']:.4f}  test {acc[f'{stage}_test']:.4f}")
    print(
        f"  kept {report.features['kept']}/{report.features['total']} inputs, "
        f"approximated {report.approx['approximated']} neurons, "
        f"latency {report.latency_cycles} cycles"
    )


def cmd_compare(args):
    docs = [json.loads(Path(p).read_text()) for p in args.reports]
    names = [Path(p).parent.name or Path(p).stem for p in args.reports]
    rows = compare_reports(docs, names)
    from .report import format_compare_table, render_compare_figure, write_compare_csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_compare_csv(rows, out / "compare.csv")
    render_compare_figure(rows, out / "compare.png")
    print(format_compare_table(rows))
    print(f"wrote {out / 'compare.csv'} and {out / 'compare.png'}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seqmlp",
        description="Compile small MLP classifiers into sequential circuits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a float MLP on a CSV dataset")
    add_dataset_args(p)
    p.add_argument("--hidden", type=int, default=5)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="model.json")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("quantize", help="quantize a float model to pow2 weights")
    add_dataset_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--e-max", type=int, default=0)
    p.add_argument("--static", action="store_true", help="worst-case truncation instead of calibration")
    p.add_argument("--out", default="qmodel.json")
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("prune", help="drop redundant inputs below the accuracy threshold")
    add_dataset_args(p)
    p.add_argument("--qmodel", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default="pruned.json")
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("approximate", help="select single-cycle neurons with NSGA-II")
    add_dataset_args(p)
    p.add_argument("--qmodel", required=True)
    p.add_argument("--population", type=int, default=50)
    p.add_argument("--generations", type=int, default=100)
    p.add_argument("--crossover", type=float, default=0.9)
    p.add_argument("--mutation", type=float, default=None)
    p.add_argument("--max-drop", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="plan.json")
    p.set_defaults(fn=cmd_approximate)

    p = sub.add_parser("simulate", help="cycle-accurate evaluation of the circuit")
    add_dataset_args(p)
    p.add_argument("--qmodel", required=True)
    p.add_argument("--plan", default=None)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--trace", default=None, help="write one sample's cycle trace (JSON lines)")
    p.add_argument("--trace-sample", type=int, default=0)
    p.add_argument("--out", default="sim.json")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("cost", help="estimate area, power, and energy")
    p.add_argument("--qmodel", required=True)
    p.add_argument("--plan", default=None)
    p.add_argument("--tech", default=None, help="technology file (default: relative library)")
    p.add_argument("--clock", type=float, default=None, help="clock period in seconds")
    p.add_argument("--out", default="cost")
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("emit", help="generate RTL and a self-checking testbench")
    p.add_argument("--qmodel", required=True)
    p.add_argument("--plan", default=None)
    p.add_argument("--vectors", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="rtl")
    p.set_defaults(fn=cmd_emit)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--stage", default=None, help="stop after this stage")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("compare", help="tabulate cost ratios across run reports")
    p.add_argument("reports", nargs="+", help="report.json files; first is the reference")
    p.add_argument("--out", default="compare")
    p.set_defaults(fn=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except PipelineError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # argparse handles usage errors before this
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
