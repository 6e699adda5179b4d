"""Monte-Carlo look at Q = Q_1 + Q_2 - Q_joint when the two goal regions share a cell."""
# %%
import json

import numpy as np

from tlcompose.automaton import product, translate
from tlcompose.compose import decomposition_check
from tlcompose.experiment import DEFAULT_CONFIG, OVERLAP_MACROS, PHI1, PHI2, augmented_env, parse_task

cfg = dict(DEFAULT_CONFIG["env"], macros=OVERLAP_MACROS)
pf = product(translate(parse_task(PHI1, cfg)), translate(parse_task(PHI2, cfg)))
penv = augmented_env(cfg, pf)

# %% any fixed policy works; the identity is about returns, not optimality
policy = np.random.default_rng(0).integers(5, size=(penv.n_states, penv.n_q))
rep = decomposition_check(penv, policy, 3000, seed=0)
print(json.dumps(rep.as_dict(), indent=2))
