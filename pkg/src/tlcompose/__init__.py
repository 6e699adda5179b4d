"""Temporal-logic task specification, automaton-guided Q-learning and skill composition."""
from .automaton import Fsa, Guard, ProductFsa, product, to_dot, translate
from .compose import (CompositionError, CompositionJob, compose_skills, decomposition_check,
                      relabel)
from .env import FsaAugmentedMdp, GridWorld, augmented_step, evaluate_satisfaction, grid_step
from .learner import (QTable, ReplayBuffer, TrainConfig, greedy_policy, normalize_q,
                      q_learning_train, value_iteration_oracle)
from .logic import (Formula, FormulaError, FormulaSyntaxError, parse_formula, robustness,
                    robustness_signal, to_text)

__all__ = [
    "Fsa", "Guard", "ProductFsa", "product", "to_dot", "translate",
    "CompositionError", "CompositionJob", "compose_skills", "decomposition_check", "relabel",
    "FsaAugmentedMdp", "GridWorld", "augmented_step", "evaluate_satisfaction", "grid_step",
    "QTable", "ReplayBuffer", "TrainConfig", "greedy_policy", "normalize_q",
    "q_learning_train", "value_iteration_oracle",
    "Formula", "FormulaError", "FormulaSyntaxError", "parse_formula", "robustness",
    "robustness_signal", "to_text",
]
