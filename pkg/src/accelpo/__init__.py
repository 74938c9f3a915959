"""Accelerated policy optimization on tabular MDPs.

Exact solvers, Bellman operators and lookahead search, update rules for
momentum, optimism and extra-gradient, and the online agents (policy
gradient, actor-critic, forward-search PG, meta-learned optimistic PG).
"""
from .agents import (ALGORITHMS, ConfigError, MetaBuffer, MetaLearner, RegretTrace, RunConfig,
                     TargetSupportError, accelerated_policy_iteration, make_target, meta_gradient,
                     meta_loss, run, run_ac, run_fws, run_opg_expert, run_opg_pred, run_pg)
from .bellman import lookahead_recursion, opi_eval_step, search_advantage, search_values, t_opt, t_pi
from .mdp import (MazeError, Rollout, TabularMdp, default_maze, exact_q, exact_v, load_maze, parse_maze,
                  performance, random_mdp, sample_rollout, value_iteration, visitation)
from .optim import AdamState, adam_step, sgd_step
from .policy import (DirectPolicy, TabularPolicy, euclidean_project, kl_rows, mirror_step, projected_step,
                     soft_pi_mix, softmax, softmax_policy_gradient, sampled_policy_gradient, weighted_kl)
from .updates import (UpdateState, extragrad_update, momentum_update, optimistic_update, vanilla_update)

__version__ = "0.1.0"
