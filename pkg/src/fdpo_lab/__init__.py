"""Tabular f-DPO: divergence catalog, closed-form optimal policies, preference
training, PPO baselines, calibration metrics and an experiment harness."""

__version__ = "0.1.0"

from .divergence import (
    Divergence,
    DivergenceSpec,
    exact_divergence,
    f_double_prime,
    f_prime,
    f_prime_inv,
    f_value,
    mc_estimate,
    parse_divergence,
    penalty_term,
)
from .fdpo import TrainConfig, TrainTrace, grad, loss, train
from .kkt import KktSolution, reconstruct_reward, solve_optimal_policy
from .metrics import CalibrationReport, distinct_n, ece_bound_rhs, ece_exact, frontier_record
from .policy import TabularPolicy, TaskSpace, make_policy
from .preference import PreferenceDataset, PreferenceTriple, RewardTable, generate_dataset
from .records import SweepRecord
from .rl_baselines import PpoConfig, penalized_reward, ppo_objective, train_ppo
