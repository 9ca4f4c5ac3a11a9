"""Optimal-transport dataset distillation for multi-source domain adaptation."""

__version__ = "0.1.0"

from .barycenter import BarycenterParams, BarycenterResult, free_support_barycenter, project_simplex, solve_barycenter
from .bench_io import TABLE1, RunRecord, SynthSpec, gen_synth, load_csv, read_records, save_csv, write_records
from .dadil import DadilParams, Dictionary, dadil_compress_target, dadil_fit
from .distill import (
    METHODS,
    DMParams,
    Summary,
    distill_msda_dm,
    distill_random_source,
    distill_random_target_oracle,
    distill_wbt,
)
from .distributions import GroundCost, LabeledMeasure, MultiDomainDataset, standardize
from .errors import ConfigError, DataError, NumericalError, OTDistillError
from .evaluation import ClassifierParams, SweepConfig, compression_ratio, evaluate, fit_linear, sweep
from .ot_core import SinkhornParams, TransportPlan, class_mmd_sq, exact_ot, linear_mmd, sinkhorn, wasserstein

__all__ = [
    "BarycenterParams", "BarycenterResult", "free_support_barycenter", "project_simplex", "solve_barycenter",
    "TABLE1", "RunRecord", "SynthSpec", "gen_synth", "load_csv", "read_records", "save_csv", "write_records",
    "DadilParams", "Dictionary", "dadil_compress_target", "dadil_fit",
    "METHODS", "DMParams", "Summary", "distill_msda_dm", "distill_random_source",
    "distill_random_target_oracle", "distill_wbt",
    "GroundCost", "LabeledMeasure", "MultiDomainDataset", "standardize",
    "ConfigError", "DataError", "NumericalError", "OTDistillError",
    "ClassifierParams", "SweepConfig", "compression_ratio", "evaluate", "fit_linear", "sweep",
    "SinkhornParams", "TransportPlan", "class_mmd_sq", "exact_ot", "linear_mmd", "sinkhorn", "wasserstein",
]
