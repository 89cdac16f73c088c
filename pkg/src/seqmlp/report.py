"""Delimited summaries and figures for run reports and comparisons.

Every figure is rendered headless to a file next to the CSV it illustrates:
stage accuracies, cost block breakdowns, the register-vs-mux area curves
under the active library, and cross-report ratio bars.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .cost import TechLibrary, mux_cost, register_chain_cost

ACC_STAGES = ("float", "quantized", "pruned", "hybrid")


def flatten_report(report) -> list:
    """(metric, value) rows covering every reported number."""
    doc = report.to_doc() if hasattr(report, "to_doc") else report
    rows = []

    def walk(prefix, node):
        if isinstance(node, dict):
            for key in sorted(node):
                walk(f"{prefix}.{key}" if prefix else key, node[key])
        elif isinstance(node, list):
            rows.append((prefix, " ".join(str(v) for v in node)))
        else:
            rows.append((prefix, node))

    for section in ("dataset", "accuracy", "features", "approx", "cost"):
        walk(section, doc[section])
    rows.append(("latency_cycles", doc["latency_cycles"]))
    rows.append(("total_test_cycles", doc["total_test_cycles"]))
    return rows


def write_report_csv(report, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(flatten_report(report))


def render_run_figures(report, tech: TechLibrary, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_doc() if hasattr(report, "to_doc") else report
    written = []

    fig, ax = plt.subplots(figsize=(6, 3.2))
    xs = range(len(ACC_STAGES))
    train = [doc["accuracy"][f"{s}_train"] for s in ACC_STAGES]
    test = [doc["accuracy"][f"{s}_test"] for s in ACC_STAGES]
    width = 0.38
    ax.bar([x - width / 2 for x in xs], train, width, label="train")
    ax.bar([x + width / 2 for x in xs], test, width, label="test")
    ax.set_xticks(list(xs), ACC_STAGES)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False)
    ax.set_title("accuracy per pipeline stage")
    fig.tight_layout()
    fig.savefig(out / "accuracy_stages.png", dpi=150)
    plt.close(fig)
    written.append(out / "accuracy_stages.png")

    fig, ax = plt.subplots(figsize=(6, 3.2))
    designs = ("sequential_exact", "sequential_hybrid", "combinational")
    metrics = ("area", "power", "energy")
    for i, metric in enumerate(metrics):
        vals = [doc["cost"][d][metric] for d in designs]
        ref = vals[0] or 1.0
        ax.bar(
            [i * 4 + j for j in range(3)],
            [v / ref for v in vals],
            tick_label=None,
            color=["#4878d0", "#ee854a", "#6acc64"],
        )
    ax.set_xticks([i * 4 + 1 for i in range(3)], metrics)
    ax.set_ylabel("relative to sequential exact")
    ax.set_title("cost by design (blue exact, orange hybrid, green combinational)")
    fig.tight_layout()
    fig.savefig(out / "cost_comparison.png", dpi=150)
    plt.close(fig)
    written.append(out / "cost_comparison.png")

    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    ns = list(range(2, 65))
    ax.plot(ns, [register_chain_cost(n, 1, tech).area for n in ns], label="shift registers")
    ax.plot(ns, [mux_cost(n, 1, tech).area for n in ns], label="multiplexers")
    ax.set_xlabel("entries")
    ax.set_ylabel("area (library units)")
    ax.legend(frameon=False)
    ax.set_title("storage area: registers vs muxes")
    fig.tight_layout()
    fig.savefig(out / "mux_vs_register.png", dpi=150)
    plt.close(fig)
    written.append(out / "mux_vs_register.png")
    return written


COMPARE_COLUMNS = (
    "name",
    "area",
    "power",
    "energy",
    "area_vs_ref",
    "power_vs_ref",
    "energy_vs_ref",
    "seq_over_comb_area",
    "seq_over_comb_energy",
    "accuracy_delta_vs_ref",
)


def write_compare_csv(rows: list, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def format_compare_table(rows: list) -> str:
    header = f"{'name':<20}{'area/ref':>10}{'power/ref':>11}{'energy/ref':>12}{'seq/comb area':>15}{'acc delta':>11}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['name']:<20}{r['area_vs_ref']:>10.3f}{r['power_vs_ref']:>11.3f}"
            f"{r['energy_vs_ref']:>12.3f}{r['seq_over_comb_area']:>15.3f}"
            f"{r['accuracy_delta_vs_ref']:>11.3f}"
        )
    return "\n".join(lines)


def render_compare_figure(rows: list, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 3.4))
    xs = range(len(rows))
    width = 0.28
    for off, key, label in (
        (-width, "area_vs_ref", "area"),
        (0.0, "power_vs_ref", "power"),
        (width, "energy_vs_ref", "energy"),
    ):
        ax.bar([x + off for x in xs], [r[key] for r in rows], width, label=label)
    ax.set_xticks(list(xs), [r["name"] for r in rows], rotation=20, ha="right")
    ax.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax.set_ylabel("ratio vs reference")
    ax.legend(frameon=False)
    ax.set_title("cost ratios against the reference report")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
