"""Diversity-aware group-relative rewards and soft-matching evaluation for embedded hypothesis sets."""

__version__ = "0.1.0"

from .grpo import AdvantageSet, PolicyUpdateConfig, clipped_surrogate, group_advantages, kl_penalty
from .metrics import EvaluationConfig, MetricReport, SoftMatchEvaluator, threshold_sweep
from .rewards import GateMode, ResponseGroup, RewardConfig, Rollout, ScatterReward, compute_rewards
from .synthetic import ToyGRPOTrainer, ToyPolicy, ToyTrainConfig, generate_universe
from .vectors import GroundTruthSet, cosine_similarity, validity_score

__all__ = [
    "AdvantageSet",
    "EvaluationConfig",
    "GateMode",
    "GroundTruthSet",
    "MetricReport",
    "PolicyUpdateConfig",
    "ResponseGroup",
    "RewardConfig",
    "Rollout",
    "ScatterReward",
    "SoftMatchEvaluator",
    "ToyGRPOTrainer",
    "ToyPolicy",
    "ToyTrainConfig",
    "clipped_surrogate",
    "compute_rewards",
    "cosine_similarity",
    "generate_universe",
    "group_advantages",
    "kl_penalty",
    "threshold_sweep",
    "validity_score",
]
