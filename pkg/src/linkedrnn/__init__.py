"""Recurrent encoders for sequences that are linked by a graph.

Each sequence is encoded by a GRU, pooled to one vector, averaged over its
graph neighbourhood for a few rounds, and classified or regressed from the
combined representation. Everything runs on a small float64 reverse-mode tape.
"""

from .data import (
    LinkedSequenceDataset,
    Split,
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    make_split,
    micro_macro_f1,
    mse,
    save_dataset,
)
from .linklayer import LinkGraph, matrix_individual_equivalence_check, propagate, propagate_once
from .model import (
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    predict,
    predict_inductive,
    represent_inductive,
    rnn_baseline,
    save_checkpoint,
    stored_neighbor_layers,
)
from .train import TrainConfig, grad_check, run_experiment, tiny_dataset, train

__version__ = "0.1.0"
