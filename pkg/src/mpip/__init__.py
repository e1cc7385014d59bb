"""Movement primitives with ensemble filtering and phase-domain MPC.

The package learns a probabilistic latent-space model of multi-channel
human-robot time series from demonstrations, filters live partial
observations to predict future observed and unobserved channels, and plans
control trajectories by minimizing phase-domain load cost functions inside
a model-predictive control loop.
"""

from .basis import (BasisModel, PsiCache, WeightVector, design_matrix,
                    evaluate_basis, fit_weights, precompute_psi, reconstruct,
                    squared_basis_integral)
from .errors import DomainError, FormatError, MpipError, NumericalError
from .filtering import (Ensemble, FilterSession, Observation, observe_member,
                        posterior, predict, predict_trajectory, update)
from .metrics import TrialMetrics, impulse, lyapunov_exponent, peak, value_at_event
from .model import (Demonstration, IPModel, ProcessNoise, TrainConfig, ingest,
                    load_model, load_session, prior_statistics, save_model,
                    train, write_session)
from .mpc import (ControlPlan, CostConfig, MpcSession, Objective,
                  control_output, cost, couple_weights, horizon_psi,
                  optimize_plan)
from .synth import (StrideTruth, WorldConfig, bench_world, counterfactual_force,
                    generate_demonstration, generate_session,
                    ground_truth_force, jump_world, simulate_stride, walk_world)

__version__ = "0.1.0"

__all__ = [
    "BasisModel", "PsiCache", "WeightVector", "design_matrix",
    "evaluate_basis", "fit_weights", "precompute_psi", "reconstruct",
    "squared_basis_integral",
    "DomainError", "FormatError", "MpipError", "NumericalError",
    "Ensemble", "FilterSession", "Observation", "observe_member", "posterior",
    "predict", "predict_trajectory", "update",
    "TrialMetrics", "impulse", "lyapunov_exponent", "peak", "value_at_event",
    "Demonstration", "IPModel", "ProcessNoise", "TrainConfig", "ingest",
    "load_model", "load_session", "prior_statistics", "save_model", "train",
    "write_session",
    "ControlPlan", "CostConfig", "MpcSession", "Objective", "control_output",
    "cost", "couple_weights", "horizon_psi", "optimize_plan",
    "StrideTruth", "WorldConfig", "bench_world", "counterfactual_force",
    "generate_demonstration", "generate_session", "ground_truth_force",
    "jump_world", "simulate_stride", "walk_world",
    "__version__",
]
