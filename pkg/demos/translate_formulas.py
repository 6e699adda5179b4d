"""Turning temporal-logic task specs into automata and checking them against robustness."""
# %%
import numpy as np

from tlcompose.automaton import product, to_dot, translate
from tlcompose.env import GridWorld
from tlcompose.experiment import GRID_MACROS, PHI1, PHI2
from tlcompose.logic import parse_formula, robustness, to_text

feats = GridWorld.features
phi1 = parse_formula(PHI1, feats, GRID_MACROS)
phi2 = parse_formula(PHI2, feats, GRID_MACROS)
print(phi1)

# %% one automaton per task
f1, f2 = translate(phi1), translate(phi2)
for fsa in (f1, f2):
    print([to_text(label) for label in fsa.labels])

# %% the product tracks both tasks at once
pf = product(f1, f2)
print(pf.n_states, "states,", len(pf.accepting), "accepting")
print("\n".join(to_dot(pf, "phi1_and_phi2").splitlines()[:6]), "\n  ...")

# %% acceptance lines up with the sign of robustness on random traces (rho = 0 counts as a miss)
rng = np.random.default_rng(0)
for _ in range(5):
    cells = rng.integers(0, 8, size=(int(rng.integers(2, 15)), 2))
    trace = [{"x": float(x), "y": float(y)} for x, y in cells]
    print(f"rho={robustness(trace, phi1):+.1f}  accepted={f1.accepts(trace)}")
