"""Uncertainty quantification for stochastic agent-based simulators.

Pipeline pieces: a wolf-sheep predator-prey simulator, Latin hypercube
designs, GP regression, heteroskedastic GP emulation from replicate moments,
GP classification of where the output exists, IMSPE sequential design, and
history matching.
"""

from .abm import SimConfig, SimOutcome, run, run_replicates, step
from .classify import ClassifierModel, fit_classifier, predict_class, predict_prob
from .design import ReplicatedDesign, lhd, maximin_lhd, min_pairwise_distance
from .gp import GPModel, KernelParams, Prediction, build_model, fit, predict
from .hetgp import HetGPModel, TrainingSummary, fit_hetgp, predict_hetgp, summarize_replicates
from .history_match import Observation, WaveResult, implausibility, nroy_filter, run_waves, sample_nroy
from .seqdesign import DesignState, ReferenceSet, candidate_gain, imspe, run_sequential, select_next

__all__ = [
    "SimConfig", "SimOutcome", "run", "run_replicates", "step",
    "ReplicatedDesign", "lhd", "maximin_lhd", "min_pairwise_distance",
    "GPModel", "KernelParams", "Prediction", "build_model", "fit", "predict",
    "HetGPModel", "TrainingSummary", "fit_hetgp", "predict_hetgp", "summarize_replicates",
    "ClassifierModel", "fit_classifier", "predict_class", "predict_prob",
    "ReferenceSet", "DesignState", "imspe", "candidate_gain", "select_next", "run_sequential",
    "Observation", "WaveResult", "implausibility", "nroy_filter", "sample_nroy", "run_waves",
]

__version__ = "0.1.0"
