"""Comparing tabular Q-learning with value iteration on the augmented MDP."""
# %%
import numpy as np

from tlcompose.automaton import translate
from tlcompose.env import FsaAugmentedMdp, chain_world
from tlcompose.experiment import DEFAULT_CONFIG, PHI2, task_env
from tlcompose.learner import TrainConfig, q_learning_train, value_iteration_oracle
from tlcompose.logic import parse_formula

# %% three-cell chain, small enough to check by hand
chain = FsaAugmentedMdp(chain_world(3), translate(parse_formula("F x > 1")), horizon=10)
print(value_iteration_oracle(chain).values[:2, 0, :2])

# %% the grid; only occupied (s, q) pairs count toward the gap
env = task_env(PHI2, DEFAULT_CONFIG["env"])
oracle = value_iteration_oracle(env).values
mask = env.reachable() & ~env.terminal[None, :]
for steps in (50_000, 200_000):
    qt, _ = q_learning_train(env, TrainConfig(steps=steps, seed=0))
    print(steps, "steps: sup-norm gap", np.abs(qt.values - oracle)[mask].max().round(4))
