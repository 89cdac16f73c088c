"""End-to-end pipeline: train, quantize, prune, approximate, simulate, cost, emit.

One config file (plus its seed) fully determines every artifact byte. Each
stage persists its JSON artifact so any stage can be rerun independently
through the CLI; the final report references those artifacts by relative
path and never embeds the output directory, so two runs of one config are
byte-identical wherever they land.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rfp as rfp_mod
from .approx import GaConfig, HybridPlan, all_exact_plan, hybrid_accuracy, nsga2_select, save_plan
from .cost import CostReport, circuit_cost, combinational_baseline_cost, default_tech, load_tech, save_cost_report, save_tech
from .model import Dataset, DatasetSchema, TrainConfig, accuracy, float_infer, load_dataset, save_model, train
from .quantize import QuantSpec, QuantizedModel, encode_inputs, quantize_model, quantized_accuracy, save_quantized
from .rtl import emit_rtl, emit_testbench, write_bundle
from .simulate import batch_eval, build_circuit, run_inference

STAGES = ("train", "quantize", "prune", "approximate", "simulate", "cost", "emit", "report")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    dataset_path: str
    label_column: str | int = -1
    drop_columns: tuple = ()
    test_fraction: float = 0.3
    seed: int = 0
    hidden: int = 5
    epochs: int = 200
    learning_rate: float = 0.1
    loss: str = "mse"
    input_bits: int = 4
    exponent_levels: int = 8
    e_max: int = 0
    truncation: str = "calibrate"  # or "static"
    rfp_enabled: bool = True
    rfp_threshold: float | None = None  # None: quantized train accuracy
    ga_enabled: bool = True
    population: int = 50
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float | None = None
    max_drop: float = 0.01
    tech_path: str | None = None
    clock_period_s: float | None = None
    testbench_vectors: int = 20
    out_dir: str = "runs/out"

    def to_doc(self) -> dict:
        doc = dataclasses.asdict(self)
        doc.pop("out_dir")  # keeps reports location-independent
        doc["drop_columns"] = list(self.drop_columns)
        return doc

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        if "drop_columns" in doc:
            doc["drop_columns"] = tuple(doc["drop_columns"])
        return PipelineConfig(**doc)


@dataclass
class RunReport:
    config: dict
    dataset: dict
    accuracy: dict
    features: dict
    approx: dict
    latency_cycles: int
    total_test_cycles: int
    cost: dict  # name -> CostReport doc
    tech: dict
    artifacts: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "config": self.config,
            "dataset": self.dataset,
            "accuracy": self.accuracy,
            "features": self.features,
            "approx": self.approx,
            "latency_cycles": self.latency_cycles,
            "total_test_cycles": self.total_test_cycles,
            "cost": self.cost,
            "tech": self.tech,
            "artifacts": self.artifacts,
        }


def write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def dataset_codes(dataset: Dataset, split: str, qmodel: QuantizedModel) -> np.ndarray:
    """Quantized input codes of a split, projected onto the model's kept inputs."""
    codes = encode_inputs(dataset.normalized(split), qmodel.spec)
    return codes[:, list(qmodel.kept_input_indices)]


def resolve_tech(config: PipelineConfig):
    tech = load_tech(config.tech_path) if config.tech_path else default_tech()
    if config.clock_period_s is not None:
        tech = dataclasses.replace(tech, clock_period_s=config.clock_period_s)
    return tech


def run_pipeline(config: PipelineConfig, stop_after: str | None = None) -> RunReport | None:
    """Execute every stage, writing one artifact per stage into out_dir.

    `stop_after` truncates the pipeline after the named stage (artifacts up
    to that point are still written); the report is only produced by a full
    run. Any stage failure raises PipelineError tagged with the stage name.
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}; expected one of {STAGES}")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}

    def stage_done(name: str) -> bool:
        return stop_after == name

    try:
        schema = DatasetSchema(
            label_column=config.label_column,
            drop_columns=config.drop_columns,
            test_fraction=config.test_fraction,
            seed=config.seed,
        )
        dataset = load_dataset(config.dataset_path, schema)
    except Exception as exc:
        raise PipelineError("load", str(exc)) from exc

    try:
        model = train(
            dataset,
            TrainConfig(
                hidden=config.hidden,
                epochs=config.epochs,
                learning_rate=config.learning_rate,
                seed=config.seed,
                loss=config.loss,
            ),
        )
        save_model(model, out / "model.json")
        artifacts["model"] = "model.json"
        acc = {
            "float_train": accuracy(lambda x: float_infer(model, x)[0], dataset, "train"),
            "float_test": accuracy(lambda x: float_infer(model, x)[0], dataset, "test"),
        }
    except Exception as exc:
        raise PipelineError("train", str(exc)) from exc
    if stage_done("train"):
        return None

    try:
        spec = QuantSpec(
            input_bits=config.input_bits,
            exponent_levels=config.exponent_levels,
            e_max=config.e_max,
        )
        train_codes_full = encode_inputs(dataset.normalized("train"), spec)
        qmodel = quantize_model(
            model, spec, train_codes=train_codes_full, calibrate=config.truncation == "calibrate"
        )
        save_quantized(qmodel, out / "qmodel.json")
        artifacts["quantized_model"] = "qmodel.json"
        acc["quantized_train"] = quantized_accuracy(
            qmodel, dataset_codes(dataset, "train", qmodel), dataset.split_labels("train")
        )
        acc["quantized_test"] = quantized_accuracy(
            qmodel, dataset_codes(dataset, "test", qmodel), dataset.split_labels("test")
        )
    except Exception as exc:
        raise PipelineError("quantize", str(exc)) from exc
    if stage_done("quantize"):
        return None

    try:
        if config.rfp_enabled:
            result = rfp_mod.prune(
                qmodel,
                dataset_codes(dataset, "train", qmodel),
                dataset.split_labels("train"),
                threshold=config.rfp_threshold,
            )
            pruned = result.model
            features = {
                "total": dataset.n_features,
                "kept": len(result.kept_indices),
                "kept_fraction": len(result.kept_indices) / dataset.n_features,
                "threshold": result.threshold,
                "threshold_unreachable": result.threshold_unreachable,
            }
            write_json(
                {
                    "kept_indices": list(result.kept_indices),
                    "ranking_order": list(result.ranking.order),
                    "relevance": list(result.ranking.relevance),
                    "achieved_accuracy": result.achieved_accuracy,
                    "threshold": result.threshold,
                    "threshold_unreachable": result.threshold_unreachable,
                },
                out / "rfp.json",
            )
            artifacts["rfp"] = "rfp.json"
        else:
            pruned = qmodel
            features = {
                "total": dataset.n_features,
                "kept": dataset.n_features,
                "kept_fraction": 1.0,
                "threshold": None,
                "threshold_unreachable": False,
            }
        save_quantized(pruned, out / "pruned.json")
        artifacts["pruned_model"] = "pruned.json"
        train_codes = dataset_codes(dataset, "train", pruned)
        test_codes = dataset_codes(dataset, "test", pruned)
        train_labels = dataset.split_labels("train")
        test_labels = dataset.split_labels("test")
        acc["pruned_train"] = quantized_accuracy(pruned, train_codes, train_labels)
        acc["pruned_test"] = quantized_accuracy(pruned, test_codes, test_labels)
    except Exception as exc:
        raise PipelineError("prune", str(exc)) from exc
    if stage_done("prune"):
        return None

    try:
        from .approx import eligible_plans

        n_eligible = len(eligible_plans(pruned, train_codes))
        if config.ga_enabled:
            ga_result = nsga2_select(
                pruned,
                train_codes,
                train_labels,
                GaConfig(
                    population=config.population,
                    generations=config.generations,
                    crossover_rate=config.crossover_rate,
                    mutation_rate=config.mutation_rate,
                    seed=config.seed,
                    max_drop=config.max_drop,
                ),
            )
            plan = ga_result.chosen
            approx_info = {
                "eligible": n_eligible,
                "approximated": plan.approximated_count,
                "max_drop": config.max_drop,
                "no_gain": ga_result.no_gain,
                "mask": [bool(b) for b in plan.mask],
                "pareto_counts": [p.approximated_count for p in ga_result.pareto],
            }
        else:
            baseline = hybrid_accuracy(pruned, all_exact_plan(pruned), train_codes, train_labels)
            plan = dataclasses.replace(
                all_exact_plan(pruned, baseline), max_drop=config.max_drop
            )
            approx_info = {
                "eligible": n_eligible,
                "approximated": 0,
                "max_drop": config.max_drop,
                "no_gain": True,
                "mask": [False] * len(plan.mask),
                "pareto_counts": [0],
            }
        save_plan(plan, out / "plan.json")
        artifacts["plan"] = "plan.json"
        acc["hybrid_train"] = hybrid_accuracy(pruned, plan, train_codes, train_labels)
        acc["hybrid_test"] = hybrid_accuracy(pruned, plan, test_codes, test_labels)
    except Exception as exc:
        raise PipelineError("approximate", str(exc)) from exc
    if stage_done("approximate"):
        return None

    try:
        circuit = build_circuit(pruned, plan)
        exact_circuit = build_circuit(pruned)
        sim = batch_eval(circuit, test_codes, test_labels)
        if sim.accuracy != acc["hybrid_test"]:
            raise RuntimeError(
                f"simulator accuracy {sim.accuracy} disagrees with evaluator {acc['hybrid_test']}"
            )
        write_json(
            {
                "split": "test",
                "accuracy": sim.accuracy,
                "latency_cycles": sim.latency_cycles,
                "total_cycles": sim.total_cycles,
                "samples": len(test_codes),
            },
            out / "sim.json",
        )
        artifacts["simulation"] = "sim.json"
    except Exception as exc:
        raise PipelineError("simulate", str(exc)) from exc
    if stage_done("simulate"):
        return None

    try:
        tech = resolve_tech(config)
        reports = {
            "sequential_exact": circuit_cost(exact_circuit, tech),
            "sequential_hybrid": circuit_cost(circuit, tech),
            "combinational": combinational_baseline_cost(pruned, tech),
        }
        for name, report in reports.items():
            save_cost_report(report, out / f"cost_{name}.json")
            artifacts[f"cost_{name}"] = f"cost_{name}.json"
        save_tech(tech, out / "library.tech")
        artifacts["tech"] = "library.tech"
    except Exception as exc:
        raise PipelineError("cost", str(exc)) from exc
    if stage_done("cost"):
        return None

    try:
        bundle = emit_rtl(circuit)
        rng = np.random.default_rng(config.seed)
        n_vec = min(config.testbench_vectors, len(test_codes))
        picks = rng.choice(len(test_codes), size=n_vec, replace=False) if n_vec else []
        vectors = [[int(c) for c in test_codes[i]] for i in picks]
        expected = [
            run_inference(circuit, v, keep_trace=False).predicted_class for v in vectors
        ]
        bundle = dataclasses.replace(bundle, testbench=emit_testbench(circuit, vectors, expected))
        manifest = write_bundle(bundle, out / "rtl")
        artifacts["rtl"] = "rtl"
        artifacts["rtl_manifest"] = "rtl/manifest.json"
    except Exception as exc:
        raise PipelineError("emit", str(exc)) from exc
    if stage_done("emit"):
        return None

    try:
        report = RunReport(
            config=config.to_doc(),
            dataset={
                "path": config.dataset_path,
                "n_features": dataset.n_features,
                "n_classes": dataset.n_classes,
                "n_train": len(dataset.train_idx),
                "n_test": len(dataset.test_idx),
            },
            accuracy=acc,
            features=features,
            approx=approx_info,
            latency_cycles=circuit.latency,
            total_test_cycles=sim.total_cycles,
            cost={name: r.to_doc() for name, r in reports.items()},
            tech={"area": tech.area, "power": tech.power, "clock_period_s": tech.clock_period_s},
            artifacts=artifacts,
        )
        write_json(report.to_doc(), out / "report.json")
        from .report import write_report_csv, render_run_figures

        write_report_csv(report, out / "report.csv")
        render_run_figures(report, tech, out / "figures")
    except Exception as exc:
        raise PipelineError("report", str(exc)) from exc
    return report


def compare_reports(report_docs: list, names: list | None = None) -> list:
    """Rows of cross-report ratios against the first report (the reference).

    Ratios use the hybrid sequential circuit (the emitted design); each row
    also carries its own sequential-vs-combinational area ratio. Reports
    priced with different technology parameters cannot be compared.
    """
    if len(report_docs) < 2:
        raise ValueError("compare needs at least two reports")
    names = names or [f"report_{i}" for i in range(len(report_docs))]
    ref_tech = report_docs[0]["tech"]
    for doc in report_docs[1:]:
        if doc["tech"] != ref_tech:
            raise ValueError("reports use different technology libraries; ratios are meaningless")
    ref = report_docs[0]["cost"]["sequential_hybrid"]
    ref_acc = report_docs[0]["accuracy"]["hybrid_test"]
    rows = []
    for name, doc in zip(names, report_docs):
        seq = doc["cost"]["sequential_hybrid"]
        comb = doc["cost"]["combinational"]
        rows.append(
            {
                "name": name,
                "area": seq["area"],
                "power": seq["power"],
                "energy": seq["energy"],
                "area_vs_ref": seq["area"] / ref["area"],
                "power_vs_ref": seq["power"] / ref["power"],
                "energy_vs_ref": seq["energy"] / ref["energy"],
                "seq_over_comb_area": seq["area"] / comb["area"],
                "seq_over_comb_energy": seq["energy"] / comb["energy"],
                "accuracy_delta_vs_ref": doc["accuracy"]["hybrid_test"] - ref_acc,
            }
        )
    return rows
