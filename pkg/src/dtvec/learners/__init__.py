"""Policies: baselines, experts and the actor-critic learners."""
from .baselines import (BalancedPolicy, DriftPlusPenaltyPolicy, FixedPolicy, GreedyLocalPolicy,
                        Policy, RandomPolicy, UniformPolicy)
from .codebook import Codebook
from .marl import (LearnedPolicy, LearnerHyper, MultiAgentLearner, TrainingError, VecEnv,
                   marl_train, sarl_hyper)
from .nets import MLP, soft_update

__all__ = [
    "BalancedPolicy", "Codebook", "DriftPlusPenaltyPolicy", "FixedPolicy", "GreedyLocalPolicy",
    "LearnedPolicy", "LearnerHyper", "MLP", "MultiAgentLearner", "Policy", "RandomPolicy",
    "TrainingError", "UniformPolicy", "VecEnv", "marl_train", "sarl_hyper", "soft_update",
]
