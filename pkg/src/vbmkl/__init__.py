"""Multiple kernel learning with conjugate variational Bayes.

A kernel-combination classifier trained by closed-form coordinate ascent:
per-instance weights score each kernel separately, a learned weight vector
combines the per-kernel scores, and labels attach through a margin
truncation.  The package covers kernel-bank construction, binary and
multiclass training, calibrated probabilistic prediction, persistence and a
replication benchmark harness.
"""

from .bench import (
    ExperimentConfig,
    ExperimentResult,
    load_dataset,
    metric_accuracy,
    metric_auc,
    metric_eer,
    run_benchmark,
    scenario_hyperparams,
    split_train_test,
    standardize,
)
from .engine import (
    EngineError,
    HyperParams,
    PosteriorState,
    TrainedModel,
    elbo,
    fit,
    initialize,
)
from .kernels import (
    BundleFormatError,
    FeatureMatrix,
    KernelBundle,
    build_feature_bank,
    distance_to_kernel,
    gaussian_kernel,
    load_bundle,
    polynomial_kernel,
    save_bundle,
    spherical_normalize,
)
from .model import ModelFormatError, load_model, save_model
from .multiclass import (
    MulticlassModel,
    fit_one_vs_all,
    fit_shared_weights,
    load_multiclass,
    predict_multiclass,
    save_multiclass,
)
from .predict import (
    Prediction,
    predict,
    predict_f,
    predict_g,
    predict_proba,
    selected_kernels,
)
from .tnorm import truncated_normal_moments

__version__ = "0.1.0"

__all__ = [
    "BundleFormatError",
    "EngineError",
    "ExperimentConfig",
    "ExperimentResult",
    "FeatureMatrix",
    "HyperParams",
    "KernelBundle",
    "ModelFormatError",
    "MulticlassModel",
    "PosteriorState",
    "Prediction",
    "TrainedModel",
    "build_feature_bank",
    "distance_to_kernel",
    "elbo",
    "fit",
    "fit_one_vs_all",
    "fit_shared_weights",
    "gaussian_kernel",
    "initialize",
    "load_bundle",
    "load_dataset",
    "load_model",
    "load_multiclass",
    "metric_accuracy",
    "metric_auc",
    "metric_eer",
    "polynomial_kernel",
    "predict",
    "predict_f",
    "predict_g",
    "predict_multiclass",
    "predict_proba",
    "run_benchmark",
    "save_bundle",
    "save_model",
    "save_multiclass",
    "scenario_hyperparams",
    "selected_kernels",
    "spherical_normalize",
    "split_train_test",
    "standardize",
    "truncated_normal_moments",
]
