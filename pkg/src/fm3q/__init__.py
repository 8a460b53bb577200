"""Factorized multi-agent minimax Q-learning for two-team zero-sum Markov
games, with exact tabular oracles and an evaluation harness."""

__version__ = "0.1.0"

from .games import (
    AugmentedState,
    EpisodeStep,
    GridConfig,
    GridKeepawayGame,
    JointAction,
    TabularGame,
    TwoTeamGame,
    grid_keepaway_game,
    matrix_team_game,
    random_deterministic_game,
    random_tabular_game,
    step,
)
from .learner import (
    GreedyPolicyPair,
    NeuralFactorizedQ,
    ReplayBuffer,
    TabularFactorizedQ,
    TrainConfig,
    build_neural_fq,
    exact_operator_apply,
    extract_policies,
    igmm_check,
    mix_forward,
    select_actions,
    td_target,
    train,
)
from .oracle import best_response, nashconv, solve_superb_q

__all__ = [
    "AugmentedState",
    "EpisodeStep",
    "GreedyPolicyPair",
    "GridConfig",
    "GridKeepawayGame",
    "JointAction",
    "NeuralFactorizedQ",
    "ReplayBuffer",
    "TabularFactorizedQ",
    "TabularGame",
    "TrainConfig",
    "TwoTeamGame",
    "best_response",
    "build_neural_fq",
    "exact_operator_apply",
    "extract_policies",
    "grid_keepaway_game",
    "igmm_check",
    "matrix_team_game",
    "mix_forward",
    "nashconv",
    "random_deterministic_game",
    "random_tabular_game",
    "select_actions",
    "solve_superb_q",
    "step",
    "td_target",
    "train",
]
