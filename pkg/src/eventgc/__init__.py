"""Learn Granger causality between event types from asynchronous event sequences.

A neural point process is fitted to the sequences; Integrated Gradients
attributions of its per-type cumulative intensities to past event types are
aggregated into a K x K causality matrix.
"""
from .causality import CausalityMatrix, batched_statistic, naive_statistic
from .evaluation import EvalReport, auc, kendall_tau
from .npp import BasisFamily, NppModel, TrainConfig, train
from .seqdata import Dataset, EventSequence

__all__ = [
    "BasisFamily",
    "CausalityMatrix",
    "Dataset",
    "EvalReport",
    "EventSequence",
    "NppModel",
    "TrainConfig",
    "auc",
    "batched_statistic",
    "kendall_tau",
    "naive_statistic",
    "train",
]

__version__ = "0.1.0"
