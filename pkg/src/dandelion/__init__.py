"""Open-set heterogeneous domain adaptation on dandelion geometry.

Transfers intrusion knowledge from a labeled source domain to an unlabeled
target domain that may contain unseen categories, by shaping a shared
hyperspherical subspace where each known category forms a compact pappus
and unknowns fall into the gaps.
"""
from .data import Domain, OpenSetTask, SynthSpec, make_openset_task, preprocess_domain, preprocess_task, synth_task
from .embedding import FeatherParams, GraphEmbedding, feather_embed
from .evaluation import Metrics, compute_metrics, openness, predict_labels
from .geometry import Dandelion, DandelionGraph, Membership, assign_membership, build_graph, fit_dandelion
from .losses import LossReport, SemanticDandelion
from .model import Dims, Model, classify, discriminate, init_model, project
from .training import HyperParams, TrainHistory, load_checkpoint, save_checkpoint, train

__all__ = [
    "Domain", "OpenSetTask", "SynthSpec", "make_openset_task", "preprocess_domain",
    "preprocess_task", "synth_task",
    "FeatherParams", "GraphEmbedding", "feather_embed",
    "Metrics", "compute_metrics", "openness", "predict_labels",
    "Dandelion", "DandelionGraph", "Membership", "assign_membership", "build_graph",
    "fit_dandelion",
    "LossReport", "SemanticDandelion",
    "Dims", "Model", "classify", "discriminate", "init_model", "project",
    "HyperParams", "TrainHistory", "load_checkpoint", "save_checkpoint", "train",
]

__version__ = "0.1.0"
