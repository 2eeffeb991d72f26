"""Invariant link selection for temporal link prediction under distribution shift.

The package couples a small reverse-mode autodiff engine with temporal-graph
plumbing: per-query computational subgraphs feed a selection network that
scores every historical edge, a history-only prior regularizes the selection
through a Bernoulli KL term, and a predictor aggregates the kept edges into a
link probability.  Training minimizes mean binary cross entropy plus the
weighted selection KL.  Experiment helpers build edge-attribute hold-outs,
synthetic node-feature shifts, and a planted-motif benchmark with known
invariant structure.
"""

from .ablation import AblationCurves, lower_ood_loss_fraction, run_ablation
from .data import (PlantedDataset, ShiftSpec, generate_planted_motif_dataset,
                   ood_edge_filter, synthesize_node_shift)
from .ibloss import PROB_EPS, LossBreakdown, bce, bernoulli_kl, total_loss
from .metrics import MetricsRecord, export_metrics, read_metrics, roc_auc
from .nets import (BranchParams, EdgeSelectionProbabilities, ModelParams,
                   TimeEncoder, aggregate_node, encode_time, forward_selector,
                   init_model, pinned_probabilities, predict_link,
                   prior_probability, selection_probability)
from .tensor import (Tensor, backward, finite_difference_check, load_manifest,
                     primitive_forward, save_manifest)
from .tgraph import (ComputationalSubgraph, QueryLink, StoreView, TemporalEdge,
                     TemporalGraphStore, chronological_split,
                     extract_computational_subgraph, load_temporal_graph,
                     neighbors_before)
from .train import (FitResult, OptimizerState, TrainConfig, TrainData,
                    adam_step, evaluate, fit, sample_training_batch,
                    train_epoch)

__version__ = "0.1.0"

__all__ = [
    "AblationCurves", "BranchParams", "ComputationalSubgraph",
    "EdgeSelectionProbabilities", "FitResult", "LossBreakdown",
    "MetricsRecord", "ModelParams", "OptimizerState", "PROB_EPS",
    "PlantedDataset", "QueryLink", "ShiftSpec", "StoreView", "Tensor",
    "TemporalEdge", "TemporalGraphStore", "TimeEncoder", "TrainConfig",
    "TrainData", "adam_step", "aggregate_node", "backward", "bce",
    "bernoulli_kl", "chronological_split", "encode_time", "evaluate",
    "export_metrics", "extract_computational_subgraph",
    "finite_difference_check", "fit", "forward_selector",
    "generate_planted_motif_dataset", "init_model", "load_manifest",
    "load_temporal_graph", "lower_ood_loss_fraction", "neighbors_before",
    "ood_edge_filter", "pinned_probabilities", "predict_link",
    "primitive_forward", "prior_probability", "read_metrics", "roc_auc",
    "run_ablation", "sample_training_batch", "save_manifest",
    "selection_probability", "synthesize_node_shift", "total_loss",
    "train_epoch",
]
