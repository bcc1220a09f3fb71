"""Task-driven acquisition protocol design for quantitative diffusion MRI.

Pipeline: simulate labeled tissue cohorts under a candidate b-value
protocol (bi-exponential signal model, echo-time coupling, Rician noise),
estimate per-subject parameters with segmented fitting, and score the
protocol by cross-validated KNN accuracy on the estimated parameters.
Two optimizers search protocol space against that score: a simulated
annealer over the estimation-variance (CRLB) objective, and a
policy-gradient agent trained directly on the task objective.
"""

from .classify import (
    EvalConfig,
    SimulationEnv,
    Task,
    cross_val_accuracy,
    knn_predict,
    parameter_auc,
    task_objective,
)
from .cohort import (
    Cohort,
    CohortSpec,
    Dataset,
    TissueClass,
    TissueDistribution,
    sample_cohort,
    simulate_dataset,
)
from .crlb import CrlbConfig, crlb_objective, fisher_matrix, optimize_crlb, signal_jacobian
from .fitting import FitBounds, FitResult, segmented_fit, segmented_fit_batch
from .ivim import (
    ADHOC_B_VALUES,
    AcquisitionProtocol,
    IvimParams,
    ScannerConfig,
    add_rician_noise,
    ivim_signal,
    min_te,
    simulate_acquisition,
)
from .ppo import PpoAgent, PpoConfig, rollout_greedy, train
from .protocol_env import ProtocolEnv
from .seeds import derive_rng

__version__ = "0.1.0"

__all__ = [
    "ADHOC_B_VALUES",
    "AcquisitionProtocol",
    "Cohort",
    "CohortSpec",
    "CrlbConfig",
    "Dataset",
    "EvalConfig",
    "FitBounds",
    "FitResult",
    "IvimParams",
    "PpoAgent",
    "PpoConfig",
    "ProtocolEnv",
    "ScannerConfig",
    "SimulationEnv",
    "Task",
    "TissueClass",
    "TissueDistribution",
    "add_rician_noise",
    "cross_val_accuracy",
    "crlb_objective",
    "derive_rng",
    "fisher_matrix",
    "ivim_signal",
    "knn_predict",
    "min_te",
    "optimize_crlb",
    "parameter_auc",
    "rollout_greedy",
    "sample_cohort",
    "segmented_fit",
    "segmented_fit_batch",
    "signal_jacobian",
    "simulate_acquisition",
    "simulate_dataset",
    "task_objective",
    "train",
]
