"""Label-aware distribution calibration for long-tailed classification in feature space."""

from .calibration import (
    CalibratedDistribution,
    CalibrationConfig,
    calibrate_posterior,
    calibrate_prior,
    calibrate_tail,
    prior_weights,
    select_neighbors,
)
from .classifier import LinearClassifier, TrainConfig, gradient_check, logits, predict, train
from .dataset import (
    FeatureDataset,
    HeadTailPartition,
    SyntheticSpec,
    cross_polytope_spec,
    generate_synthetic,
    load_dataset,
    partition_head_tail,
    save_dataset,
)
from .evaluation import GroupedAccuracy, ScatterExport, distribution_gap, grouped_accuracy, project_2d
from .sampler import BatchSpec, SamplingPlan, draw_batch, sampling_probabilities
from .stats import ClassStats, GaussianSampler, class_statistics, cholesky, sample_gaussian, squared_distance

__version__ = "0.1.0"

__all__ = [
    "BatchSpec",
    "CalibratedDistribution",
    "CalibrationConfig",
    "ClassStats",
    "FeatureDataset",
    "GaussianSampler",
    "GroupedAccuracy",
    "HeadTailPartition",
    "LinearClassifier",
    "SamplingPlan",
    "ScatterExport",
    "SyntheticSpec",
    "TrainConfig",
    "calibrate_posterior",
    "calibrate_prior",
    "calibrate_tail",
    "cholesky",
    "class_statistics",
    "cross_polytope_spec",
    "distribution_gap",
    "draw_batch",
    "generate_synthetic",
    "gradient_check",
    "grouped_accuracy",
    "load_dataset",
    "logits",
    "partition_head_tail",
    "predict",
    "prior_weights",
    "project_2d",
    "sample_gaussian",
    "sampling_probabilities",
    "save_dataset",
    "select_neighbors",
    "squared_distance",
    "train",
]
