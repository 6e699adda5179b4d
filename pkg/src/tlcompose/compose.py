"""Skill composition over product automata from stored experience.

Stages:
    c1  Q = Q1 + Q2 (max-normalised copies, indexed through the product)
    c2  additionally learn the overlap correction C from the joint reward
        r12 = 1(D1) * 1(D2) and return Q1 + Q2 - C
    c3  additionally run off-policy Q-learning on the result with the task
        reward r = 1(D1) + 1(D2) - r12

None of the stages touches an environment; only recorded ``(s, a, s')``
transitions and the per-state feature samples are used.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .automaton import ProductFsa
from .env import FsaAugmentedMdp
from .learner import QTable, ReplayBuffer, UntrainedTableError, normalize_q
from .logic import StateSample

STAGES = ("c1", "c2", "c3")


class CompositionError(ValueError):
    pass


@dataclass
class RelabelTables:
    """Per ``(product state, s')`` lookups; rows of terminal states are zero."""

    r1: np.ndarray        # 1(D1^{q1} holds at s')
    r2: np.ndarray        # 1(D2^{q2} holds at s')
    r_joint: np.ndarray   # r1 * r2
    r_task: np.ndarray    # r1 + r2 - r_joint
    next_q: np.ndarray    # product successor index
    terminal: np.ndarray  # [q]


@dataclass
class Relabeled:
    """Every buffered transition annotated for every product state (``[n, q]``)."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r_joint: np.ndarray
    r_task: np.ndarray
    q_next: np.ndarray


def relabel_tables(pf: ProductFsa, samples: Sequence[StateSample]) -> RelabelTables:
    f1, f2 = pf.factors
    nq, ns = pf.n_states, len(samples)
    r1 = np.zeros((nq, ns))
    r2 = np.zeros((nq, ns))
    next_q = np.empty((nq, ns), dtype=np.int64)
    terminal = np.array([pf.is_terminal(q) for q in range(nq)])
    for s, sample in enumerate(samples):
        try:
            t1, t2, tp = f1.truth(sample), f2.truth(sample), pf.truth(sample)
        except KeyError as exc:
            raise CompositionError(f"state {s}: {exc.args[0]}") from None
        for q, comp in enumerate(pf.components):
            next_q[q, s] = pf.successor(q, tp)
            if comp is None or terminal[q]:
                continue
            q1, q2 = comp
            r1[q, s] = f1.outgoing_disjunction(q1).holds(t1)
            r2[q, s] = f2.outgoing_disjunction(q2).holds(t2)
    joint = r1 * r2
    return RelabelTables(r1, r2, joint, r1 + r2 - joint, next_q, terminal)


def relabel(buffer: ReplayBuffer, pf: ProductFsa, samples: Sequence[StateSample]) -> Relabeled:
    """Annotate raw transitions with product rewards and successors for all product states.

    Valid because guards only look at ``s'``: one stored transition serves
    every automaton row.
    """
    tables = relabel_tables(pf, samples)
    s2 = buffer.s_next
    return Relabeled(buffer.s, buffer.a, s2,
                     tables.r_joint[:, s2].T, tables.r_task[:, s2].T, tables.next_q[:, s2].T)


@dataclass
class CompositionJob:
    q1: QTable
    q2: QTable
    product: ProductFsa
    buffer: ReplayBuffer
    samples: Sequence[StateSample]
    stage: str = "c1"
    updates: int = 50_000
    gamma: float = 0.95
    alpha: float = 0.1
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise CompositionError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        h1, h2 = self.q1.metadata.get("env_hash"), self.q2.metadata.get("env_hash")
        if h1 != h2:
            raise CompositionError(f"environment hashes differ: {h1} vs {h2}")
        f1, f2 = self.product.factors
        for qt, f, name in ((self.q1, f1, "first"), (self.q2, f2, "second")):
            fp = qt.metadata.get("fsa_fingerprint")
            if fp is not None and fp != f.fingerprint():
                raise CompositionError(f"{name} table was trained on a different automaton")
            if qt.shape[1] != f.n_states or qt.shape[0] != len(self.samples):
                raise CompositionError(f"{name} table shape {qt.shape} does not match its automaton")
        if self.stage != "c1" and len(self.buffer) == 0:
            raise CompositionError(f"stage {self.stage} needs a non-empty replay buffer")


@dataclass
class CompositionResult:
    q: QTable
    correction: np.ndarray | None
    stage_tables: dict[str, QTable]

    @property
    def correction_max(self) -> float:
        return 0.0 if self.correction is None else float(np.abs(self.correction).max())


def _normalized(qt: QTable) -> QTable:
    try:
        return normalize_q(qt)
    except UntrainedTableError:
        # an all-zero table (e.g. an already satisfied task) carries no value to rescale
        return qt.copy()


def initial_sum(q1: QTable, q2: QTable, pf: ProductFsa) -> np.ndarray:
    """Q(s, (q1, q2), a) = Q1(s, q1, a) + Q2(s, q2, a); trap/accepting rows zero."""
    S, _, A = q1.shape
    out = np.zeros((S, pf.n_states, A))
    for q, comp in enumerate(pf.components):
        if comp is None or pf.is_terminal(q):
            continue
        out[:, q, :] = q1.values[:, comp[0], :] + q2.values[:, comp[1], :]
    return out


def offpolicy_update(Q: np.ndarray, data: Relabeled, reward: np.ndarray, terminal: np.ndarray,
                     updates: int, gamma: float, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Q-learning over uniformly sampled stored transitions, all product rows at once."""
    Q = Q.copy()
    n = len(data.s)
    live = np.flatnonzero(~terminal)
    if n == 0 or live.size == 0:
        return Q
    cont = (~terminal).astype(float)
    picks = rng.integers(n, size=updates)
    for i in picks:
        s, a, s2 = data.s[i], data.a[i], data.s_next[i]
        qn = data.q_next[i, live]
        target = reward[i, live] + gamma * cont[qn] * Q[s2, qn].max(axis=1)
        Q[s, live, a] += alpha * (target - Q[s, live, a])
    return Q


def compose_skills(job: CompositionJob) -> CompositionResult:
    """Run the composition pipeline up to ``job.stage`` (stages are cumulative)."""
    pf = job.product
    q1n, q2n = _normalized(job.q1), _normalized(job.q2)
    base = initial_sum(q1n, q2n, pf)
    meta = dict(job.metadata)
    meta.update({
        "stage": "c1",
        "formula": str(pf.source) if pf.source is not None else None,
        "fsa_fingerprint": pf.fingerprint(),
        "env_hash": job.q1.metadata.get("env_hash"),
        "components": [job.q1.metadata.get("fsa_fingerprint"), job.q2.metadata.get("fsa_fingerprint")],
        "gamma": job.gamma, "alpha": job.alpha, "updates": job.updates, "seed": job.seed,
    })
    stages = {"c1": QTable(base, dict(meta))}
    if job.stage == "c1":
        return CompositionResult(stages["c1"], None, stages)

    rng = np.random.default_rng(job.seed)
    data = relabel(job.buffer, pf, job.samples)
    terminal = np.array([pf.is_terminal(q) for q in range(pf.n_states)])
    correction = offpolicy_update(np.zeros_like(base), data, data.r_joint, terminal,
                                  job.updates, job.gamma, job.alpha, rng)
    c2 = base - correction
    stages["c2"] = QTable(c2, {**meta, "stage": "c2"})
    if job.stage == "c2":
        return CompositionResult(stages["c2"], correction, stages)

    c3 = offpolicy_update(c2, data, data.r_task, terminal, job.updates, job.gamma, job.alpha, rng)
    stages["c3"] = QTable(c3, {**meta, "stage": "c3"})
    return CompositionResult(stages["c3"], correction, stages)


# ---------------------------------------------------------------- decomposition check

@dataclass
class TermEstimate:
    mean: float
    stderr: float
    samples: int


@dataclass
class DecompositionReport:
    total: TermEstimate
    first: TermEstimate
    second: TermEstimate
    joint: TermEstimate
    residual: float
    tolerance: float
    passed: bool
    exact_reward_identity: bool

    def as_dict(self) -> dict:
        def term(t):
            return {"mean": t.mean, "stderr": t.stderr, "samples": t.samples}
        return {"Q": term(self.total), "Q_q1": term(self.first), "Q_q2": term(self.second),
                "Q_q1_and_q2": term(self.joint), "residual": self.residual,
                "tolerance": self.tolerance, "passed": self.passed,
                "exact_reward_identity": self.exact_reward_identity}


def _rollout_returns(env: FsaAugmentedMdp, tables: RelabelTables, policy: np.ndarray,
                     which: str, start: tuple[int, int, int] | None, gamma: float,
                     rng: np.random.Generator) -> float:
    """Discounted return of one episode; ``which`` picks the reward stream."""
    if start is None:
        s, q = env.reset(rng)
        a = int(policy[s, q]) if not env.done else 0
    else:
        s, q, a = start
    G, disc = 0.0, 1.0
    for t in range(env.horizon):
        if env.terminal[q]:
            break
        s2 = env.mdp.step(s, a, rng)
        if which == "total":
            r = env.reward[q, s2]
        elif which == "first":
            r = tables.r1[q, s2]
        elif which == "second":
            r = tables.r2[q, s2]
        else:
            r = tables.r_joint[q, s2]
        G += disc * r
        disc *= gamma
        s, q = s2, int(env.next_q[q, s2])
        a = int(policy[s, q])
    return G


def decomposition_check(env: FsaAugmentedMdp, policy: np.ndarray, samples: int, gamma: float = 0.95,
                        start: tuple[int, int, int] | None = None, seed: int = 0,
                        z: float = 3.0) -> DecompositionReport:
    """Monte-Carlo test of Q = Q_q1 + Q_q2 - Q_{q1 and q2} under one fixed policy.

    ``env`` must wrap a :class:`ProductFsa`.  The left side uses the product
    automaton's own reward; each right-hand term uses its own reward stream,
    and every term is estimated from an independent batch of rollouts.
    """
    pf = env.fsa
    if not isinstance(pf, ProductFsa):
        raise TypeError("decomposition_check needs an environment over a product automaton")
    if samples < 2:
        raise ValueError("at least two rollouts per term are needed for a standard error")
    tables = relabel_tables(pf, [env.mdp.sample(s) for s in range(env.n_states)])
    policy = np.asarray(policy)
    streams = np.random.SeedSequence(seed).spawn(4)
    est = {}
    for which, ss in zip(("total", "first", "second", "joint"), streams):
        rng = np.random.default_rng(ss)
        g = np.array([_rollout_returns(env, tables, policy, which, start, gamma, rng) for _ in range(samples)])
        est[which] = TermEstimate(float(g.mean()), float(g.std(ddof=1) / np.sqrt(samples)), samples)
    residual = est["total"].mean - (est["first"].mean + est["second"].mean - est["joint"].mean)
    combined = float(np.sqrt(sum(e.stderr ** 2 for e in est.values())))
    tol = z * combined
    identity = bool(np.array_equal(tables.r_task + tables.r_joint, tables.r1 + tables.r2))
    return DecompositionReport(est["total"], est["first"], est["second"], est["joint"],
                               float(residual), tol, bool(abs(residual) <= tol), identity)

