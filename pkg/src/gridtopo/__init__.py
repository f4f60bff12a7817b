"""Topology-control agents that keep a power grid's transfer margins high.

The package covers the whole loop: a two-bus-bar grid model with
switchable topology, AC/DC power flow, scenario time series, the
operation MDP with overload and cooldown rules, a hand-differentiated
dueling Q-network, prioritized replay, imitation pretraining, guided
exploration training, and the early-warning evaluation policy.
"""

from .grid import GridModel, TopologyState, connectivity_check, electrical_nodes, load_grid
from .actions import Action, ActionSpace, DO_NOTHING, apply_action, build_full_space, \
    enumerate_line_actions, enumerate_node_actions, is_legal, reduce_space
from .powerflow import Injections, build_case, line_loading, solve_ac, solve_dc
from .chronics import Chronic, SyntheticConfig, forecast_at, generate_synthetic, \
    injections_at, load_chronic, split_days, write_chronic
from .env import EnvConfig, Environment, observation_layout, observation_size, \
    reward_value, step_score_value
from .nn import NetConfig, NetworkParams, adam_init, adam_step, copy_weights, forward, grad
from .replay import Experience, PrioritizedBuffer
from .imitation import ImitationDataset, PretrainConfig, generate_dataset, pretrain, weighted_mse
from .training import TrainConfig, guided_select, td_targets, train
from .evaluation import EWConfig, EvaluationReport, evaluate, ew_policy, warning_flag

__version__ = "0.1.0"
