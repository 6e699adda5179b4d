"""Tabular Q-learning on automaton-augmented MDPs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .env import FsaAugmentedMdp, config_hash


@dataclass
class QTable:
    """Dense ``values[s, q, a]`` with provenance metadata."""

    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("QTable values must be 3-dimensional (state, automaton state, action)")

    @classmethod
    def zeros(cls, n_states: int, n_q: int, n_actions: int, **metadata) -> "QTable":
        return cls(np.zeros((n_states, n_q, n_actions)), dict(metadata))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def copy(self) -> "QTable":
        return QTable(self.values.copy(), dict(self.metadata))

    def to_json(self) -> dict:
        S, Q, A = self.shape
        return {
            "format": "qtable/1",
            "shape": [S, Q, A],
            "index": ["state", "automaton_state", "action"],
            "metadata": self.metadata,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "QTable":
        if d.get("format") != "qtable/1":
            raise ValueError("not a qtable/1 document")
        values = np.asarray(d["values"], dtype=float).reshape(d["shape"])
        return cls(values, dict(d.get("metadata", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "QTable":
        return cls.from_json(json.loads(Path(path).read_text()))


class ReplayBuffer:
    """Raw environment transitions ``(s, a, s', episode, t)``; no automaton states."""

    _FIELDS = ("s", "a", "s_next", "episode", "t")

    def __init__(self):
        self._rows: list[tuple[int, int, int, int, int]] = []
        self._arrays: dict[str, np.ndarray] | None = None

    def add(self, s: int, a: int, s_next: int, episode: int, t: int) -> None:
        self._rows.append((s, a, s_next, episode, t))
        self._arrays = None

    def __len__(self) -> int:
        return len(self._rows)

    def arrays(self) -> dict[str, np.ndarray]:
        if self._arrays is None:
            data = np.asarray(self._rows, dtype=np.int64).reshape(-1, 5)
            self._arrays = {k: data[:, i] for i, k in enumerate(self._FIELDS)}
        return self._arrays

    @property
    def s(self) -> np.ndarray:
        return self.arrays()["s"]

    @property
    def a(self) -> np.ndarray:
        return self.arrays()["a"]

    @property
    def s_next(self) -> np.ndarray:
        return self.arrays()["s_next"]

    @classmethod
    def merge(cls, *buffers: "ReplayBuffer") -> "ReplayBuffer":
        out = cls()
        offset = 0
        for b in buffers:
            if len(b) == 0:
                continue
            for s, a, s2, ep, t in b._rows:
                out._rows.append((s, a, s2, ep + offset, t))
            offset += max(r[3] for r in b._rows) + 1
        return out

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, **self.arrays())

    @classmethod
    def load(cls, path: str | Path) -> "ReplayBuffer":
        with np.load(path) as data:
            cols = [data[k] for k in cls._FIELDS]
        out = cls()
        out._rows = [tuple(int(v) for v in row) for row in zip(*cols)]
        return out


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    alpha: float = 0.1
    steps: int = 2000
    seed: int = 0
    exploration: str = "uniform"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.exploration != "uniform":
            raise ValueError("only uniform exploration is supported")


def table_metadata(env: FsaAugmentedMdp, **extra) -> dict:
    source = env.fsa.source
    meta = {
        "formula": str(source) if source is not None else None,
        "fsa_fingerprint": env.fsa.fingerprint(),
        "env_hash": config_hash(env.mdp.config()),
        "horizon": env.horizon,
    }
    meta.update(extra)
    return meta


def q_learning_train(env: FsaAugmentedMdp, cfg: TrainConfig,
                     callback: Callable[[int, np.ndarray], None] | None = None,
                     callback_every: int = 0) -> tuple[QTable, ReplayBuffer]:
    """Uniform-exploration Q-learning for ``cfg.steps`` transitions.

    Terminal automaton states bootstrap to 0; horizon cut-offs bootstrap
    normally (a time-out is not a task outcome).  ``callback(step, Q)`` is
    invoked every ``callback_every`` updates and is handed the live array.
    """
    rng = np.random.default_rng(cfg.seed)
    Q = np.zeros((env.n_states, env.n_q, env.n_actions))
    buffer = ReplayBuffer()
    gamma, alpha = cfg.gamma, cfg.alpha
    terminal = env.terminal
    n_actions = env.n_actions

    episode = -1

    def fresh() -> tuple[int, int] | None:
        nonlocal episode
        for _ in range(1000):
            episode += 1
            state = env.reset(rng)
            if not env.done:
                return state
        return None

    state = fresh() if cfg.steps else None
    for step in range(1, cfg.steps + 1):
        if state is None:
            break
        s, q = state
        a = int(rng.integers(n_actions))
        t = env.t
        (s2, q2), r, done = env.step(a)
        target = r if terminal[q2] else r + gamma * Q[s2, q2].max()
        Q[s, q, a] += alpha * (target - Q[s, q, a])
        buffer.add(s, a, s2, episode, t)
        state = fresh() if done else (s2, q2)
        if callback is not None and callback_every and step % callback_every == 0:
            callback(step, Q)

    meta = table_metadata(env, gamma=gamma, alpha=alpha, steps=cfg.steps, seed=cfg.seed)
    return QTable(Q, meta), buffer


def greedy_action(qt: QTable | np.ndarray, s: int, q: int) -> int:
    values = qt.values if isinstance(qt, QTable) else qt
    return int(np.argmax(values[s, q]))   # argmax returns the lowest index on ties


def greedy_policy(qt: QTable | np.ndarray) -> np.ndarray:
    """Action table ``[s, q]``."""
    values = qt.values if isinstance(qt, QTable) else qt
    return np.argmax(values, axis=2)


def extract_subpolicy(qt: QTable | np.ndarray, q: int) -> np.ndarray:
    """Per-state greedy actions with the automaton state frozen at ``q``."""
    return greedy_policy(qt)[:, q]


def value_iteration_oracle(env: FsaAugmentedMdp, gamma: float = 0.95, tol: float = 1e-9,
                           max_iter: int = 100_000) -> QTable:
    """Bellman-optimal Q for the augmented MDP from its exact transition tensor."""
    P = env.mdp.transition_matrix()
    if P is None:
        raise ValueError("environment exposes no exact transition matrix")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    cont = (~env.terminal[env.next_q]).astype(float)      # [q, s']
    live = ~env.terminal
    Q = np.zeros((env.n_states, env.n_q, env.n_actions))
    for _ in range(max_iter):
        V = Q.max(axis=2)                                  # [s, q]
        nxt = V[np.arange(env.n_states)[None, :], env.next_q]   # [q, s'] -> V[s', q']
        X = env.reward + gamma * cont * nxt
        new = np.einsum("ast,qt->sqa", P, X)
        new[:, ~live, :] = 0.0
        delta = np.max(np.abs(new - Q))
        Q = new
        if delta < tol:
            break
    return QTable(Q, table_metadata(env, gamma=gamma, oracle="value_iteration"))


class UntrainedTableError(ValueError):
    pass


def normalize_q(qt: QTable) -> QTable:
    """Divide every entry by the global maximum (which must be positive)."""
    top = float(qt.values.max()) if qt.values.size else 0.0
    if not top > 0:
        raise UntrainedTableError("cannot normalise a table whose maximum is not positive")
    out = QTable(qt.values / top, dict(qt.metadata))
    out.metadata["normalized_by"] = top
    return out
