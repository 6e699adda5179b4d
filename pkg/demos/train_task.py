"""Learning a single task on the 10x8 grid, then rendering its greedy policy."""
# %%
import numpy as np

from tlcompose.cli import render_table
from tlcompose.env import evaluate_satisfaction
from tlcompose.experiment import DEFAULT_CONFIG, PHI1, task_env
from tlcompose.learner import QTable, TrainConfig, greedy_policy, q_learning_train

env = task_env(PHI1, DEFAULT_CONFIG["env"])
print(env.fsa.n_states, "automaton states,", env.n_states, "grid cells")

# %% success rate as the budget grows
for steps in (2_000, 10_000, 50_000):
    qt, buf = q_learning_train(env, TrainConfig(steps=steps, seed=0))
    rep = evaluate_satisfaction(env, greedy_policy(qt), 100, 1)
    print(f"{steps:>6} steps  success={rep.success_rate:.2f}  mean steps={rep.mean_steps:.1f}")

# %% arrows per automaton state; letters mark the goal regions
# the renderer reads the grid layout from the table metadata
print(render_table(QTable(qt.values, dict(qt.metadata, env_config=DEFAULT_CONFIG["env"]))))
print("buffer holds", len(buf), "transitions; Q range", np.round([qt.values.min(), qt.values.max()], 3))
