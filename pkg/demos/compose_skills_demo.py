"""Building a policy for the conjunction out of two separately trained tables."""
# %%
from tlcompose.automaton import product
from tlcompose.compose import CompositionJob, compose_skills
from tlcompose.env import GridWorld, evaluate_satisfaction
from tlcompose.experiment import DEFAULT_CONFIG, OVERLAP_MACROS, PHI1, PHI2, augmented_env, task_env
from tlcompose.learner import ReplayBuffer, TrainConfig, greedy_policy, q_learning_train

grid = GridWorld()
samples = [grid.sample(s) for s in range(grid.n_states)]

for name, cfg in (("disjoint", DEFAULT_CONFIG["env"]), ("overlap", dict(DEFAULT_CONFIG["env"], macros=OVERLAP_MACROS))):
    e1, e2 = task_env(PHI1, cfg), task_env(PHI2, cfg)
    q1, b1 = q_learning_train(e1, TrainConfig(steps=20_000, seed=0))
    q2, b2 = q_learning_train(e2, TrainConfig(steps=20_000, seed=0))
    pf = product(e1.fsa, e2.fsa)
    penv = augmented_env(cfg, pf)

    # %% no environment steps from here on, only the stored transitions
    job = CompositionJob(q1, q2, pf, ReplayBuffer.merge(b1, b2), samples, stage="c3", updates=20_000, seed=0)
    res = compose_skills(job)
    rates = {k: evaluate_satisfaction(penv, greedy_policy(t), 100, 3).success_rate for k, t in res.stage_tables.items()}
    print(f"{name:>8}: success {rates}  largest correction {res.correction_max:.3f}")
