"""Covariate-shift correction with shift compensation networks.

Estimates the test/train density ratio of sampling-biased data and
trains importance-weighted classifiers against it.  Ships a small taped
autodiff core, discriminator plus feature-mean-matching weight
estimation, classical density-ratio baselines, synthetic biased-sampling
benchmarks with exact ground-truth ratios, and a CLI for running
experiment grids.
"""

__version__ = "0.1.0"

from .baselines import (dfw_weights, exact_mean_match_oracle, kde_weights,
                        kliep_weights)
from .errors import (ConfigError, DimensionGuardError, GraphError,
                     NonFiniteError, ShapeError, TrainingDivergedError)
from .experiment import (ExperimentConfig, generate_data, load_config,
                         run_experiment, run_single, summarize)
from .metrics import (auc, average_precision, effective_sample_size,
                      evaluate_multilabel, f1, weighted_risk)
from .networks import build_mlp, classify, discriminate, extract_features
from .rng import make_rng
from .shift import (MovingMean, ShiftWeights, discriminative_loss,
                    feature_discrepancy, fsmm_loss, shift_factor,
                    uniform_weights, weighted_classification_loss)
from .synthdata import (Dataset, gen_gaussian_shift, gen_spatial_bias,
                        load_dataset, save_dataset, true_shift_factor)
from .trainer import (ScnConfig, ScnModel, train_scn, train_vanilla,
                      train_weighted)

__all__ = [
    "ConfigError", "Dataset", "DimensionGuardError", "ExperimentConfig",
    "GraphError", "MovingMean", "NonFiniteError", "ScnConfig", "ScnModel",
    "ShapeError", "ShiftWeights", "TrainingDivergedError", "auc",
    "average_precision", "build_mlp", "classify", "dfw_weights",
    "discriminate", "discriminative_loss", "effective_sample_size",
    "evaluate_multilabel", "exact_mean_match_oracle", "extract_features",
    "f1", "feature_discrepancy", "fsmm_loss", "gen_gaussian_shift",
    "gen_spatial_bias", "generate_data", "kde_weights", "kliep_weights",
    "load_config", "load_dataset", "make_rng", "run_experiment",
    "run_single", "save_dataset", "shift_factor", "summarize", "train_scn",
    "train_vanilla", "train_weighted", "true_shift_factor",
    "uniform_weights", "weighted_classification_loss", "weighted_risk",
    "__version__",
]
