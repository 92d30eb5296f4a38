"""Distance-3 surface code with Z-type checks only (9 data + 4 ancilla qubits): memory experiments with soft-information decoding."""

__version__ = "0.1.0"

from .code_model import CodeLayout, build_surface13, codeword_states
from .noisy_circuit import NoiseParams, build_memory_circuit, sample_shots
from .decoding_graph import DecodingGraph, derive_model_graph, estimate_correlation_graph
from .decoders import DECODERS, mwpm_decode
from .experiment import RunConfig, run_memory_experiment, fit_error_rate

__all__ = [
    "CodeLayout",
    "build_surface13",
    "codeword_states",
    "NoiseParams",
    "build_memory_circuit",
    "sample_shots",
    "DecodingGraph",
    "derive_model_graph",
    "estimate_correlation_graph",
    "DECODERS",
    "mwpm_decode",
    "RunConfig",
    "run_memory_experiment",
    "fit_error_rate",
]
