"""Crossmodal embedding training for monomodal affect recognition.

Train modality-specific recurrent encoders into a shared embedding space with
an auxiliary modality (joint loss plus batch-hard crossmodal triplet loss);
run inference with the target modality alone.
"""

from .data import SequenceDataset, SynthSpec, UtteranceDataset, generate_crossmodal
from .errors import CrossemoError
from .losses import LossReport, ObjectiveConfig, compose_objective
from .metrics import ccc, fisher_r_to_z_test, macro_f1, one_tailed_z_test, pcc
from .model import ModelConfig, TrainedModel, build_model, encode, load_checkpoint, predict, save_checkpoint
from .numkit import SeededRng, finite_diff_grad, matmul
from .postprocess import PostprocessPlan, center_and_scale, grid_search, median_filter, time_shift
from .training import SweepGrid, TrainConfig, compensate_delay, fit_standardizer, run_training, sweep, train
from .triplet import CrossmodalBatch, HardTriplet, mine_hard_triplets, pairwise_distances, triplet_loss

__version__ = "0.1.0"

__all__ = [
    "CrossemoError",
    "CrossmodalBatch",
    "HardTriplet",
    "LossReport",
    "ModelConfig",
    "ObjectiveConfig",
    "PostprocessPlan",
    "SeededRng",
    "SequenceDataset",
    "SweepGrid",
    "SynthSpec",
    "TrainConfig",
    "TrainedModel",
    "UtteranceDataset",
    "build_model",
    "ccc",
    "center_and_scale",
    "compensate_delay",
    "compose_objective",
    "encode",
    "finite_diff_grad",
    "fisher_r_to_z_test",
    "fit_standardizer",
    "generate_crossmodal",
    "grid_search",
    "load_checkpoint",
    "macro_f1",
    "matmul",
    "median_filter",
    "mine_hard_triplets",
    "one_tailed_z_test",
    "pairwise_distances",
    "pcc",
    "predict",
    "run_training",
    "save_checkpoint",
    "sweep",
    "time_shift",
    "train",
    "triplet_loss",
]
