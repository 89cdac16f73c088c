"""seqmlp: compile small MLP classifiers into sequential circuits.

Pipeline stages: train a float MLP, quantize inputs to 4-bit codes and
weights to signed powers of two, prune redundant features, plan and select
single-cycle neuron approximations, simulate the resulting circuit cycle by
cycle, estimate area/power/energy, and emit RTL.
"""

from .model import Dataset, DatasetSchema, MlpModel, TrainConfig, accuracy, float_infer, load_dataset, train
from .quantize import (
    Pow2Weight,
    QuantSpec,
    QuantizedModel,
    quantize_input,
    quantize_model,
    quantize_weight,
    quantized_infer,
    qrelu,
)
from .rfp import FeatureRanking, PruneResult, feature_relevance, prune
from .approx import (
    GaConfig,
    HybridPlan,
    NeuronApproxPlan,
    approx_neuron_eval,
    avg_expected_products,
    hybrid_accuracy,
    nsga2_select,
    plan_single_cycle,
)
from .simulate import CircuitModel, SimState, batch_eval, build_circuit, run_inference, step
from .cost import CostReport, TechLibrary, circuit_cost, combinational_baseline_cost, default_tech, mux_cost, register_chain_cost
from .rtl import RtlBundle, emit_rtl, emit_testbench, structural_census

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
