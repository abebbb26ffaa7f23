"""Planning in MDPs with RKHS embeddings of the transition dynamics."""
from .embedding import (
    ConditionalEmbedding,
    TransitionSample,
    UndefinedQueryError,
    cv_lambda,
    fit,
    fit_sparse,
    incomplete_cholesky,
)
from .kernels import StateActionKernelConfig, StateKernelConfig, knn_bandwidth
from .oracle import TabularMDP, exact_policy_value, exact_value_iteration, q_star
from .planner import (
    GreedyPolicy,
    PlannerConfig,
    ValueEstimate,
    evaluate_policy,
    q_value,
    value_iteration,
)

__version__ = "0.1.0"
