"""Discrete MDPs, the grid world, and the automaton-augmented wrapper."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .automaton import Fsa
from .logic import StateSample

UP, DOWN, LEFT, RIGHT, STAY = range(5)
GRID_ACTIONS = ("up", "down", "left", "right", "stay")
_MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0), STAY: (0, 0)}


class DiscreteMdp(Protocol):
    """Enumerable MDP: states are indices ``0..n_states-1``."""

    n_states: int
    n_actions: int
    features: tuple[str, ...]

    def sample(self, s: int) -> StateSample: ...

    def reset(self, rng: np.random.Generator) -> int: ...

    def step(self, s: int, a: int, rng: np.random.Generator) -> int: ...

    def transition_matrix(self) -> np.ndarray | None: ...

    def config(self) -> dict: ...


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class GridWorld:
    """``width`` x ``height`` grid; a command is followed w.p. ``1 - slip``,
    otherwise one of the five actions is executed uniformly at random.
    Moves off the grid leave the agent where it is.

    ``start`` is ``"uniform"`` or a fixed ``(x, y)`` cell.
    """

    features = ("x", "y")
    n_actions = 5
    action_names = GRID_ACTIONS

    def __init__(self, width: int = 10, height: int = 8, slip: float = 0.2,
                 start: str | tuple[int, int] = "uniform"):
        if width < 1 or height < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 <= slip <= 1.0:
            raise ValueError("slip must lie in [0, 1]")
        self.width = int(width)
        self.height = int(height)
        self.slip = float(slip)
        if start != "uniform":
            start = (int(start[0]), int(start[1]))
            if not self.in_bounds(*start):
                raise ValueError(f"start cell {start} is off the grid")
        self.start = start
        self.n_states = self.width * self.height
        self._move = np.empty((self.n_states, 5), dtype=np.int64)
        for s in range(self.n_states):
            x, y = self.cell(s)
            for a, (dx, dy) in _MOVES.items():
                nx, ny = x + dx, y + dy
                self._move[s, a] = self.index(nx, ny) if self.in_bounds(nx, ny) else s

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def cell(self, s: int) -> tuple[int, int]:
        return s % self.width, s // self.width

    def sample(self, s: int) -> dict[str, float]:
        x, y = self.cell(s)
        return {"x": float(x), "y": float(y)}

    def reset(self, rng: np.random.Generator) -> int:
        if self.start == "uniform":
            return int(rng.integers(self.n_states))
        return self.index(*self.start)

    def step(self, s: int, a: int, rng: np.random.Generator) -> int:
        if self.slip > 0 and rng.random() < self.slip:
            a = int(rng.integers(5))
        return int(self._move[s, a])

    def transition_matrix(self) -> np.ndarray:
        """``P[a, s, s']`` for the slip mixture."""
        P = np.zeros((5, self.n_states, self.n_states))
        for a in range(5):
            for s in range(self.n_states):
                P[a, s, self._move[s, a]] += 1.0 - self.slip
                for b in range(5):
                    P[a, s, self._move[s, b]] += self.slip / 5
        return P

    def config(self) -> dict:
        start = self.start if self.start == "uniform" else list(self.start)
        return {"kind": "grid", "width": self.width, "height": self.height,
                "slip": self.slip, "start": start}


def grid_step(state: tuple[int, int], action: int, rng: np.random.Generator,
              world: GridWorld | None = None) -> tuple[int, int]:
    world = world or GridWorld()
    return world.cell(world.step(world.index(*state), action, rng))


class TabularMdp:
    """MDP given by an explicit transition tensor ``P[a, s, s']``."""

    def __init__(self, P: np.ndarray, samples: Sequence[StateSample],
                 start: int | None = None, action_names: Sequence[str] | None = None):
        P = np.asarray(P, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2] or P.shape[1] != len(samples):
            raise ValueError("P must have shape (actions, states, states) matching samples")
        if not np.allclose(P.sum(axis=2), 1.0):
            raise ValueError("transition rows must sum to one")
        self.P = P
        self.n_actions, self.n_states, _ = P.shape
        self._samples = [dict(s) for s in samples]
        self.features = tuple(sorted(self._samples[0]))
        self.start = start
        self.action_names = tuple(action_names or (str(a) for a in range(self.n_actions)))
        self._cdf = np.cumsum(P, axis=2)

    def sample(self, s: int) -> dict[str, float]:
        return self._samples[s]

    def reset(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_states)) if self.start is None else self.start

    def step(self, s: int, a: int, rng: np.random.Generator) -> int:
        u = rng.random()
        return int(min(np.searchsorted(self._cdf[a, s], u, side="right"), self.n_states - 1))

    def transition_matrix(self) -> np.ndarray:
        return self.P

    def config(self) -> dict:
        return {"kind": "tabular", "P": self.P.tolist(), "samples": self._samples,
                "start": self.start}


def chain_world(n: int = 3) -> TabularMdp:
    """Deterministic chain ``x = 0..n-1`` with actions (right, stay), starting at 0."""
    P = np.zeros((2, n, n))
    for s in range(n):
        P[0, s, min(s + 1, n - 1)] = 1.0
        P[1, s, s] = 1.0
    return TabularMdp(P, [{"x": float(s)} for s in range(n)], start=0, action_names=("right", "stay"))


class EpisodeFinished(RuntimeError):
    pass


class FsaAugmentedMdp:
    """Product of an enumerable MDP with an automaton.

    The automaton moves on the *new* sample: ``q' = delta(q, s')`` and the
    reward is 1 exactly when ``s'`` satisfies the disjunction of the guards
    leaving ``q`` (self-loops and the trap excluded).  Both are tabulated per
    ``(q, s')`` at construction.
    """

    def __init__(self, mdp: DiscreteMdp, fsa: Fsa, horizon: int = 200):
        if horizon < 0:
            raise ValueError("horizon must be non-negative")
        self.mdp = mdp
        self.fsa = fsa
        self.horizon = int(horizon)
        nq, ns = fsa.n_states, mdp.n_states
        self.next_q = np.empty((nq, ns), dtype=np.int64)
        self.reward = np.zeros((nq, ns))
        self.terminal = np.array([fsa.is_terminal(q) for q in range(nq)])
        self.accepting = np.array([q in fsa.accepting for q in range(nq)])
        for s in range(ns):
            truth = fsa.truth(mdp.sample(s))
            for q in range(nq):
                self.next_q[q, s] = fsa.successor(q, truth)
                self.reward[q, s] = float(fsa.outgoing_disjunction(q).holds(truth))
        self._rng: np.random.Generator | None = None
        self._state: tuple[int, int] | None = None
        self._t = 0
        self._done = True

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    @property
    def n_q(self) -> int:
        return self.fsa.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def start_states(self) -> list[int]:
        start = getattr(self.mdp, "start", None)
        if start is None or start == "uniform":
            return list(range(self.n_states))
        if isinstance(start, tuple):
            return [self.mdp.index(*start)]
        return [int(start)]

    def reachable(self) -> np.ndarray:
        """Boolean mask ``[s, q]`` of augmented states reachable from the start distribution."""
        P = self.mdp.transition_matrix()
        if P is None:
            raise ValueError("reachability needs an exact transition matrix")
        succ = [np.flatnonzero(P[:, s, :].sum(axis=0) > 0) for s in range(self.n_states)]
        mask = np.zeros((self.n_states, self.n_q), dtype=bool)
        stack = [(s, self.initial_q(s)) for s in self.start_states()]
        for s, q in stack:
            mask[s, q] = True
        while stack:
            s, q = stack.pop()
            if self.terminal[q]:
                continue
            for s2 in succ[s]:
                q2 = int(self.next_q[q, s2])
                if not mask[s2, q2]:
                    mask[s2, q2] = True
                    stack.append((s2, q2))
        return mask

    def initial_q(self, s: int) -> int:
        # the automaton reads the first sample before any action is taken
        return int(self.next_q[self.fsa.initial, s])

    def reset(self, rng: np.random.Generator) -> tuple[int, int]:
        self._rng = rng
        s = self.mdp.reset(rng)
        q = self.initial_q(s)
        self._state = (s, q)
        self._t = 0
        self._done = bool(self.terminal[q]) or self.horizon == 0
        return self._state

    @property
    def done(self) -> bool:
        return self._done

    @property
    def t(self) -> int:
        return self._t

    def transition(self, s: int, q: int, a: int, rng: np.random.Generator) -> tuple[tuple[int, int], float]:
        if self.terminal[q]:
            raise EpisodeFinished(f"automaton state {q} is terminal")
        s2 = self.mdp.step(s, a, rng)
        return (s2, int(self.next_q[q, s2])), float(self.reward[q, s2])

    def step(self, a: int) -> tuple[tuple[int, int], float, bool]:
        if self._done or self._state is None:
            raise EpisodeFinished("episode is finished; call reset()")
        s, q = self._state
        (s2, q2), r = self.transition(s, q, a, self._rng)
        self._t += 1
        self._state = (s2, q2)
        self._done = bool(self.terminal[q2]) or self._t >= self.horizon
        return self._state, r, self._done


def augmented_step(m: FsaAugmentedMdp, state: tuple[int, int], action: int,
                   rng: np.random.Generator) -> tuple[tuple[int, int], float, bool]:
    """Stateless single transition; ``done`` ignores the horizon."""
    (s2, q2), r = m.transition(state[0], state[1], action, rng)
    return (s2, q2), r, bool(m.terminal[q2])


@dataclass
class EvalReport:
    episodes: int
    success_rate: float
    mean_steps: float          # steps to acceptance, successes only (nan if none)
    mean_return: float
    mean_episode_len: float = float("nan")
    successes: list[bool] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"episodes": self.episodes, "success_rate": self.success_rate,
                "mean_steps": self.mean_steps, "mean_return": self.mean_return,
                "mean_episode_len": self.mean_episode_len}


Policy = Callable[[int, int], int]


def _as_policy(policy) -> Policy:
    if callable(policy):
        return policy
    table = np.asarray(policy)
    return lambda s, q: int(table[s, q])


def run_episode(m: FsaAugmentedMdp, policy, rng: np.random.Generator) -> tuple[bool, int, float]:
    pi = _as_policy(policy)
    s, q = m.reset(rng)
    ret = 0.0
    while not m.done:
        (s, q), r, _ = m.step(pi(s, q))
        ret += r
    return bool(m.accepting[q]), m.t, ret


def evaluate_satisfaction(m: FsaAugmentedMdp, policy, episodes: int,
                          rng: np.random.Generator | int) -> EvalReport:
    """Roll out ``policy`` (callable ``(s, q) -> a`` or an ``[s, q]`` action table).

    Each episode gets its own child generator, so results do not depend on
    how episodes are split across workers.
    """
    seeds = _episode_seeds(rng, episodes)
    results = [run_episode(m, policy, np.random.default_rng(seed)) for seed in seeds]
    return summarize(results)


def _episode_seeds(rng: np.random.Generator | int, episodes: int) -> list[np.random.SeedSequence]:
    if isinstance(rng, np.random.Generator):
        root = np.random.SeedSequence(int(rng.integers(2**63)))
    else:
        root = np.random.SeedSequence(int(rng))
    return root.spawn(episodes)


def summarize(results: Sequence[tuple[bool, int, float]]) -> EvalReport:
    n = len(results)
    if n == 0:
        return EvalReport(0, float("nan"), float("nan"), float("nan"))
    ok = [r[0] for r in results]
    steps = [r[1] for r in results if r[0]]
    return EvalReport(
        episodes=n,
        success_rate=sum(ok) / n,
        mean_steps=float(np.mean(steps)) if steps else float("nan"),
        mean_return=float(np.mean([r[2] for r in results])),
        mean_episode_len=float(np.mean([r[1] for r in results])),
        successes=ok,
    )
