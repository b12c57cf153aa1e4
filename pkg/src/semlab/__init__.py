"""Desk-scale lab for a stochastic ensemble of smoothed models.

A zoo of small heterogeneous classifiers is trained with Gaussian input
noise at several sigmas. The defense answers each query with a freshly
sampled ensemble (member quantity, distinct architectures, a sigma per
member) and is judged by N-trial hard votes with an abstention threshold.
Attackers range over white-box surrogates with varying knowledge of the
library and score-based black-box estimators; evaluation measures attack
success against distortion with a coarse-plus-bisection minimal-distortion
search per sample.
"""

from .attacks import AttackConfig, GradientOracle, attack_config, run_attack
from .checkpoint import (load_checkpoint, load_collection, save_checkpoint,
                         save_collection)
from .config import RunConfig, load_config, save_config
from .data import SyntheticDataset, gen_dataset, load_cifar10_binary
from .ensemble import (EnsembleAttributes, ModelCollection, build_collection,
                       occurrence_weights, sample_attributes,
                       sem_expectation_oracle, sem_predict, sween_predict)
from .evaluation import (Curve, asr_at_epsilon, build_curve, judge_success,
                         min_distortion_search)
from .nets import ArchitectureSpec, Model, build_model, default_zoo, train
from .smoothing import SmoothedModel, hard_vote, smoothed_soft_predict
from .threat import (DefenseConfig, ScenarioSpec, SCENARIO_TABLE,
                     build_scenario)

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "AttackConfig", "Curve", "DefenseConfig",
    "EnsembleAttributes", "GradientOracle", "Model", "ModelCollection",
    "RunConfig", "ScenarioSpec", "SCENARIO_TABLE", "SmoothedModel",
    "SyntheticDataset", "asr_at_epsilon", "attack_config", "build_collection",
    "build_curve", "build_model", "build_scenario", "default_zoo",
    "gen_dataset", "hard_vote", "judge_success", "load_checkpoint",
    "load_cifar10_binary", "load_collection", "load_config",
    "min_distortion_search", "occurrence_weights", "run_attack",
    "sample_attributes", "save_checkpoint", "save_collection", "save_config",
    "sem_expectation_oracle", "sem_predict", "smoothed_soft_predict",
    "sween_predict", "train",
]
