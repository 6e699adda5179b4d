"""Deterministic guarded automata compiled from scTLTL by formula progression.

A state is a *residual obligation*: what is left of the formula after the
samples read so far.  Residuals are kept as minimal monotone DNFs over
"elements" (temporal nodes and literals), which is a canonical form, so two
residuals are the same state exactly when their DNFs coincide.

Successors are found by Shannon expansion of the one-step unfolding of a
residual over the predicate alphabet; every leaf of the expansion is a cube
of literals (the guard) and a residual over next-step obligations.
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .logic import (
    FALSE, TRUE, And, Bottom, Eventually, Formula, Next, Not, Or, Pred, StateSample,
    Then, Top, Until, atoms, conjunction, disjunction, formula_from_json,
    formula_to_json, then_equivalent, to_text,
)

MAX_ATOMS = 16

Literal = tuple[Pred, bool]
Cube = frozenset


class AlphabetOverflowError(ValueError):
    pass


class CompletenessError(RuntimeError):
    """An automaton had zero or several enabled edges for one input."""


# ---------------------------------------------------------------- guards

def _lit_key(lit: Literal) -> tuple[str, bool]:
    return (to_text(lit[0]), not lit[1])


def _consistent(cube: Iterable[Literal]) -> bool:
    seen: dict[Pred, bool] = {}
    for p, v in cube:
        if seen.setdefault(p, v) != v:
            return False
    return True


def _absorb(cubes: Iterable[frozenset]) -> frozenset:
    """Drop cubes that are supersets of another cube (monotone minimisation)."""
    ordered = sorted(set(cubes), key=len)
    kept: list[frozenset] = []
    for c in ordered:
        if not any(k <= c for k in kept):
            kept.append(c)
    return frozenset(kept)


@dataclass(frozen=True)
class Guard:
    """Boolean combination of predicate literals, stored as a DNF of cubes.

    A cube is a frozenset of ``(pred, polarity)`` literals.  The empty DNF is
    constant false, a DNF holding the empty cube is constant true.
    """

    cubes: frozenset = frozenset()

    @classmethod
    def true(cls) -> "Guard":
        return cls(frozenset({frozenset()}))

    @classmethod
    def false(cls) -> "Guard":
        return cls(frozenset())

    @classmethod
    def literal(cls, pred: Pred, polarity: bool = True) -> "Guard":
        return cls(frozenset({frozenset({(pred, polarity)})}))

    @classmethod
    def from_cubes(cls, cubes: Iterable[Iterable[Literal]]) -> "Guard":
        return cls(_simplify(frozenset(c) for c in cubes))

    @property
    def is_false(self) -> bool:
        return not self.cubes

    @property
    def is_true(self) -> bool:
        return frozenset() in self.cubes

    def atoms(self) -> frozenset[Pred]:
        return frozenset(p for c in self.cubes for p, _ in c)

    def holds(self, truth: Mapping[Pred, bool]) -> bool:
        return any(all(truth[p] == v for p, v in c) for c in self.cubes)

    def holds_at(self, sample: StateSample) -> bool:
        truth = {p: p.holds(sample) for p in self.atoms()}
        return self.holds(truth)

    def __and__(self, other: "Guard") -> "Guard":
        cubes = (a | b for a in self.cubes for b in other.cubes)
        return Guard(_simplify(c for c in cubes if _consistent(c)))

    def __or__(self, other: "Guard") -> "Guard":
        return Guard(_simplify(self.cubes | other.cubes))

    def to_formula(self) -> Formula:
        terms = []
        for cube in sorted(self.cubes, key=lambda c: [_lit_key(l) for l in sorted(c, key=_lit_key)]):
            lits = [p if v else Not(p) for p, v in sorted(cube, key=_lit_key)]
            terms.append(conjunction(lits))
        return disjunction(terms)

    def __str__(self) -> str:
        return to_text(self.to_formula())


QM_MAX_ATOMS = 8


def _simplify(cubes: Iterable[frozenset]) -> frozenset:
    cubes = _absorb(cubes)
    preds = sorted({p for c in cubes for p, _ in c}, key=to_text)
    if 0 < len(preds) <= QM_MAX_ATOMS:
        return _quine_mccluskey(cubes, preds)
    return _merge_adjacent(cubes)


def _quine_mccluskey(cubes: frozenset, preds: list[Pred]) -> frozenset:
    """Exact prime implicants plus a deterministic greedy cover."""
    n = len(preds)
    pos = {p: i for i, p in enumerate(preds)}
    full = (1 << n) - 1
    minterms: set[int] = set()
    for cube in cubes:
        care = val = 0
        for p, v in cube:
            care |= 1 << pos[p]
            val |= (1 << pos[p]) if v else 0
        free = [i for i in range(n) if not care >> i & 1]
        for k in range(1 << len(free)):
            m = val
            for j, i in enumerate(free):
                if k >> j & 1:
                    m |= 1 << i
            minterms.add(m)
    if not minterms:
        return frozenset()
    if len(minterms) == 1 << n:
        return frozenset({frozenset()})

    # implicants as (value, care-mask)
    current = {(m, full) for m in minterms}
    primes: set[tuple[int, int]] = set()
    while current:
        merged: set[tuple[int, int]] = set()
        used: set[tuple[int, int]] = set()
        by_mask: dict[int, list[int]] = {}
        for v, mask in current:
            by_mask.setdefault(mask, []).append(v)
        for mask, values in by_mask.items():
            vs = set(values)
            for v in values:
                for i in range(n):
                    bit = 1 << i
                    if mask & bit and not v & bit and (v | bit) in vs:
                        merged.add((v, mask & ~bit))
                        used.add((v, mask))
                        used.add((v | bit, mask))
        primes |= current - used
        current = merged

    def covers(imp, m):
        return (m & imp[1]) == imp[0]

    order = sorted(primes, key=lambda imp: (bin(imp[1]).count("1"), imp[1], imp[0]))
    chosen: list[tuple[int, int]] = []
    remaining = set(minterms)
    for m in sorted(minterms):
        hits = [imp for imp in order if covers(imp, m)]
        if len(hits) == 1 and hits[0] not in chosen:
            chosen.append(hits[0])
    for imp in chosen:
        remaining -= {m for m in remaining if covers(imp, m)}
    while remaining:
        best = max(order, key=lambda imp: sum(1 for m in remaining if covers(imp, m)))
        chosen.append(best)
        remaining -= {m for m in remaining if covers(best, m)}
    out = []
    for v, mask in chosen:
        out.append(frozenset((preds[i], bool(v >> i & 1)) for i in range(n) if mask >> i & 1))
    return _absorb(out)


def _merge_adjacent(cubes: frozenset) -> frozenset:
    """Merge cubes that differ in one literal's polarity, then absorb."""
    current = set(cubes)
    changed = True
    while changed:
        changed = False
        by_rest: dict[tuple, list[frozenset]] = {}
        for c in current:
            for lit in c:
                by_rest.setdefault((c - {lit}, lit[0]), []).append(c)
        for (rest, _), group in by_rest.items():
            if len(group) == 2 and rest not in current:
                current.difference_update(group)
                current.add(rest)
                changed = True
                break
        if changed:
            current = set(_absorb(current))
    return frozenset(current)


# ---------------------------------------------------------------- residuals

# A residual is a frozenset of cubes; each cube is a frozenset of elements
# (formula nodes other than True/False/And/Or).  {frozenset()} is True,
# frozenset() is False.
_R_TRUE = frozenset({frozenset()})
_R_FALSE: frozenset = frozenset()


def _dnf_product(a: frozenset, b: frozenset) -> frozenset:
    return _absorb(x | y for x in a for y in b)


def residual_of(f: Formula) -> frozenset:
    """Canonical DNF of ``f`` treating non-Boolean nodes as opaque elements."""
    if isinstance(f, Top):
        return _R_TRUE
    if isinstance(f, Bottom):
        return _R_FALSE
    if isinstance(f, Or):
        return _absorb(c for child in f.children for c in residual_of(child))
    if isinstance(f, And):
        out = _R_TRUE
        for child in f.children:
            out = _dnf_product(out, residual_of(child))
            if not out:
                break
        return out
    return frozenset({frozenset({f})})


def residual_formula(res: frozenset) -> Formula:
    """Label formula for a canonical residual (sorted, hence bit-stable)."""
    terms = []
    for cube in res:
        terms.append(conjunction(sorted(cube, key=to_text)))
    terms.sort(key=to_text)
    return disjunction(terms)


# One-step unfolding.  Items are ("now", pred, polarity) or ("next", formula).

def _unfold(f: Formula) -> frozenset:
    if isinstance(f, Top):
        return _R_TRUE
    if isinstance(f, Bottom):
        return _R_FALSE
    if isinstance(f, Pred):
        return frozenset({frozenset({("now", f, True)})})
    if isinstance(f, Not):
        return frozenset({frozenset({("now", f.child, False)})})
    if isinstance(f, Or):
        return _absorb(c for child in f.children for c in _unfold(child))
    if isinstance(f, And):
        out = _R_TRUE
        for child in f.children:
            out = _dnf_product(out, _unfold(child))
            if not out:
                break
        return out
    if isinstance(f, Eventually):
        return _absorb(_unfold(f.child) | {frozenset({("next", f)})})
    if isinstance(f, Next):
        return frozenset({frozenset({("next", f.child)})})
    if isinstance(f, Until):
        wait = _dnf_product(_unfold(f.left), frozenset({frozenset({("next", f)})}))
        return _absorb(_unfold(f.right) | wait)
    if isinstance(f, Then):
        return _unfold(then_equivalent(f.left, f.right))
    raise TypeError(f"not a formula: {f!r}")


def _unfold_residual(res: frozenset) -> frozenset:
    out: set = set()
    for cube in res:
        acc = _R_TRUE
        for elem in cube:
            acc = _dnf_product(acc, _unfold(elem))
            if not acc:
                break
        out.update(acc)
    return _absorb(out)


def _restrict(dnf: frozenset, pred: Pred, value: bool) -> frozenset:
    out = []
    for cube in dnf:
        if ("now", pred, not value) in cube:
            continue
        out.append(cube - {("now", pred, value)})
    return _absorb(out)


# "some sample remains": what X true leaves behind.  Kept as an element so a
# pending next-step obligation is not confused with a discharged one.
_MORE = Eventually(TRUE)


def _next_residual(dnf: frozenset) -> frozenset:
    out: set = set()
    for cube in dnf:
        if not cube:
            return _R_TRUE
        acc = _R_TRUE
        for item in cube:
            acc = _dnf_product(acc, residual_of(item[1]))
            if not acc:
                break
        for c in acc:
            # any other element already needs a further sample
            c = c - {_MORE} if len(c) > 1 else c
            out.add(c if c else frozenset({_MORE}))
    return _absorb(out)


def _now_atoms(dnf: frozenset) -> list[Pred]:
    found = {item[1] for cube in dnf for item in cube if item[0] == "now"}
    return sorted(found, key=to_text)


def progress(res: frozenset) -> list[tuple[frozenset, frozenset]]:
    """Shannon-expand one step of ``res``: list of (literal cube, successor)."""
    leaves: list[tuple[frozenset, frozenset]] = []

    def expand(dnf: frozenset, path: frozenset) -> None:
        pending = _now_atoms(dnf)
        if not pending:
            leaves.append((path, _next_residual(dnf)))
            return
        p = pending[0]
        expand(_restrict(dnf, p, True), path | {(p, True)})
        expand(_restrict(dnf, p, False), path | {(p, False)})

    expand(_unfold_residual(res), frozenset())
    return leaves


def progress_assignment(res: frozenset, truth: Mapping[Pred, bool]) -> frozenset:
    """Successor residual for a full truth assignment (used as a test oracle)."""
    dnf = _unfold_residual(res)
    for p in _now_atoms(dnf):
        dnf = _restrict(dnf, p, truth[p])
    return _next_residual(dnf)


# ---------------------------------------------------------------- automaton

@dataclass(eq=False)
class Fsa:
    """Deterministic, complete automaton with guarded edges.

    ``edges[q]`` lists ``(target, guard)`` pairs; for every truth assignment
    over ``alphabet`` exactly one guard of ``edges[q]`` holds.
    """

    labels: list[Formula]
    edges: list[list[tuple[int, Guard]]]
    initial: int
    accepting: frozenset[int]
    trap: int | None
    alphabet: tuple[Pred, ...]
    source: Formula | None = None
    _dis: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def is_terminal(self, q: int) -> bool:
        return q in self.accepting or q == self.trap

    def truth(self, sample: StateSample) -> dict[Pred, bool]:
        return {p: p.holds(sample) for p in self.alphabet}

    def successor(self, q: int, truth: Mapping[Pred, bool]) -> int:
        hits = [t for t, g in self.edges[q] if g.holds(truth)]
        if len(hits) != 1:
            raise CompletenessError(f"state {q} has {len(hits)} enabled edges")
        return hits[0]

    def step(self, q: int, sample: StateSample) -> int:
        return self.successor(q, self.truth(sample))

    def outgoing_disjunction(self, q: int) -> Guard:
        if q not in self._dis:
            g = Guard.false()
            for target, guard in self.edges[q]:
                if target != q and target != self.trap:
                    g = g | guard
            self._dis[q] = g
        return self._dis[q]

    def accepts(self, trace: Sequence[StateSample]) -> bool:
        q = self.initial
        for sample in trace:
            q = self.step(q, sample)
        return q in self.accepting

    def n_edges(self) -> int:
        return sum(len(e) for e in self.edges)

    def to_json(self) -> dict:
        return {
            "states": [{"index": i, "label": to_text(l), "formula": formula_to_json(l)}
                       for i, l in enumerate(self.labels)],
            "initial": self.initial,
            "accepting": sorted(self.accepting),
            "trap": self.trap,
            "alphabet": [formula_to_json(p) for p in self.alphabet],
            "edges": [{"source": q, "target": t, "guard": formula_to_json(g.to_formula()),
                       "guard_text": str(g)}
                      for q, out in enumerate(self.edges) for t, g in out],
            "source": to_text(self.source) if self.source is not None else None,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_json(cls, d: Mapping) -> "Fsa":
        labels = [formula_from_json(s["formula"]) for s in d["states"]]
        edges: list[list[tuple[int, Guard]]] = [[] for _ in labels]
        for e in d["edges"]:
            edges[e["source"]].append((e["target"], guard_from_formula(formula_from_json(e["guard"]))))
        alphabet = tuple(formula_from_json(p) for p in d["alphabet"])
        return cls(labels, edges, d["initial"], frozenset(d["accepting"]), d["trap"], alphabet)


def guard_from_formula(f: Formula) -> Guard:
    if isinstance(f, Top):
        return Guard.true()
    if isinstance(f, Bottom):
        return Guard.false()
    if isinstance(f, Pred):
        return Guard.literal(f, True)
    if isinstance(f, Not):
        return Guard.literal(f.child, False)
    if isinstance(f, Or):
        g = Guard.false()
        for c in f.children:
            g = g | guard_from_formula(c)
        return g
    if isinstance(f, And):
        g = Guard.true()
        for c in f.children:
            g = g & guard_from_formula(c)
        return g
    raise ValueError(f"guards may not contain temporal operators: {to_text(f)}")


def _finish(labels, edges, initial, accepting, trap, alphabet, source) -> tuple[Fsa, list[int]]:
    """Send states that cannot reach acceptance into the trap, then re-index BFS.

    Also returns the pre-merge index of every new state.
    """
    n = len(labels)
    rev: list[set[int]] = [set() for _ in range(n)]
    for q, out in enumerate(edges):
        for t, _ in out:
            rev[t].add(q)
    alive = set(accepting)
    frontier = deque(accepting)
    while frontier:
        t = frontier.popleft()
        for q in rev[t]:
            if q not in alive:
                alive.add(q)
                frontier.append(q)
    dead = set(range(n)) - alive
    if dead - ({trap} if trap is not None else set()):
        if trap is None:
            trap = n
            labels = list(labels) + [FALSE]
            edges = list(edges) + [[]]
            n += 1
        dead.add(trap)
        merged: list[list[tuple[int, Guard]]] = []
        for q, out in enumerate(edges):
            acc: dict[int, Guard] = {}
            for t, g in out:
                t = trap if t in dead else t
                acc[t] = acc[t] | g if t in acc else g
            merged.append(list(acc.items()))
        edges = merged
        edges[trap] = [(trap, Guard.true())]
        if initial in dead:
            initial = trap

    order: list[int] = []
    index: dict[int, int] = {}
    queue = deque([initial])
    index[initial] = 0
    while queue:
        q = queue.popleft()
        order.append(q)
        for t, _ in edges[q]:
            if t not in index:
                index[t] = len(index)
                queue.append(t)
    new_edges = [[(index[t], g) for t, g in edges[q]] for q in order]
    new_acc = frozenset(index[q] for q in accepting if q in index)
    new_trap = index.get(trap) if trap is not None else None
    return Fsa([labels[q] for q in order], new_edges, 0, new_acc, new_trap, alphabet, source), order


def translate(formula: Formula) -> Fsa:
    """Compile ``formula`` into a deterministic complete automaton."""
    alphabet = tuple(sorted(atoms(formula), key=to_text))
    if len(alphabet) > MAX_ATOMS:
        raise AlphabetOverflowError(f"{len(alphabet)} atomic predicates exceed the limit of {MAX_ATOMS}")

    start = residual_of(formula)
    ids: dict[frozenset, int] = {start: 0}
    residuals = [start]
    edges: list[list[tuple[int, Guard]]] = []
    queue = deque([start])
    while queue:
        res = queue.popleft()
        if res == _R_TRUE or res == _R_FALSE:
            edges.append([(ids[res], Guard.true())])
            continue
        grouped: dict[frozenset, list[frozenset]] = {}
        for path, succ in progress(res):
            grouped.setdefault(succ, []).append(path)
        out = []
        for succ, paths in grouped.items():
            if succ not in ids:
                ids[succ] = len(residuals)
                residuals.append(succ)
                queue.append(succ)
            out.append((ids[succ], Guard.from_cubes(paths)))
        edges.append(out)

    labels = [residual_formula(r) for r in residuals]
    accepting = frozenset(i for i, r in enumerate(residuals) if r == _R_TRUE)
    trap = ids.get(_R_FALSE)
    return _finish(labels, edges, 0, accepting, trap, alphabet, formula)[0]


def fsa_step(fsa: Fsa, q: int, sample: StateSample) -> int:
    return fsa.step(q, sample)


def outgoing_disjunction(fsa: Fsa, q: int) -> Guard:
    """Disjunction of guards on edges leaving ``q`` (self-loops and trap excluded)."""
    return fsa.outgoing_disjunction(q)


# ---------------------------------------------------------------- product

@dataclass(eq=False)
class ProductFsa(Fsa):
    """Automaton over pairs of factor states; failing pairs share one trap.

    ``components[i]`` is the factor pair of state ``i`` (``None`` for the
    shared trap).
    """

    components: list = field(default_factory=list)
    factors: tuple = ()

    def index_of(self, q1: int, q2: int) -> int:
        f1, f2 = self.factors
        if q1 == f1.trap or q2 == f2.trap:
            return self.trap
        pairs = self._pair_index
        if (q1, q2) not in pairs and self.trap is None:
            raise KeyError(f"pair {(q1, q2)} is not a reachable product state")
        # reachable pairs missing here could not reach acceptance and were merged into the trap
        return pairs.get((q1, q2), self.trap)

    @property
    def _pair_index(self) -> dict:
        cached = self._dis.get("pairs")
        if cached is None:
            cached = {c: i for i, c in enumerate(self.components) if c is not None}
            self._dis["pairs"] = cached
        return cached

    def to_json(self) -> dict:
        d = super().to_json()
        d["components"] = [list(c) if c is not None else None for c in self.components]
        return d


def product(f1: Fsa, f2: Fsa) -> ProductFsa:
    """Reachable product of two automata with pairwise-conjoined guards."""
    alphabet = tuple(sorted(set(f1.alphabet) | set(f2.alphabet), key=to_text))

    def failing(pair) -> bool:
        return pair[0] == f1.trap or pair[1] == f2.trap

    start = (f1.initial, f2.initial)
    TRAP = "trap"
    start_key = TRAP if failing(start) else start
    ids: dict = {start_key: 0}
    keys = [start_key]
    edges: list[list[tuple[int, Guard]]] = []
    queue = deque([start_key])
    while queue:
        key = queue.popleft()
        if key == TRAP:
            edges.append([(ids[TRAP], Guard.true())])
            continue
        q1, q2 = key
        acc: dict = {}
        for t1, g1 in f1.edges[q1]:
            for t2, g2 in f2.edges[q2]:
                g = g1 & g2
                if g.is_false:
                    continue
                tkey = TRAP if failing((t1, t2)) else (t1, t2)
                acc[tkey] = acc[tkey] | g if tkey in acc else g
        out = []
        for tkey, g in acc.items():
            if tkey not in ids:
                ids[tkey] = len(keys)
                keys.append(tkey)
                queue.append(tkey)
            out.append((ids[tkey], g))
        edges.append(out)

    labels = [FALSE if k == TRAP else _conjoin_labels(f1.labels[k[0]], f2.labels[k[1]]) for k in keys]
    accepting = frozenset(i for i, k in enumerate(keys)
                          if k != TRAP and k[0] in f1.accepting and k[1] in f2.accepting)
    source = None
    if f1.source is not None and f2.source is not None:
        source = conjunction([f1.source, f2.source])
    # pairs that are individually live can still be jointly unsatisfiable
    fsa, order = _finish(labels, edges, 0, accepting, ids.get(TRAP), alphabet, source)
    components = [None if i == fsa.trap else keys[old] for i, old in enumerate(order)]
    return ProductFsa(fsa.labels, fsa.edges, fsa.initial, fsa.accepting, fsa.trap, alphabet, source,
                      components=components, factors=(f1, f2))


def _conjoin_labels(a: Formula, b: Formula) -> Formula:
    if isinstance(a, Top):
        return b
    if isinstance(b, Top):
        return a
    return And((a, b))


# ---------------------------------------------------------------- DOT

def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(fsa: Fsa, name: str = "fsa") -> str:
    lines = [f"digraph {name} {{", "  rankdir=LR;", '  __start [shape=point, label=""];']
    for q, label in enumerate(fsa.labels):
        shape = "doublecircle" if q in fsa.accepting else "circle"
        style = ", style=dashed" if q == fsa.trap else ""
        lines.append(f"  q{q} [shape={shape}{style}, label={_dot_quote(f'q{q}: {to_text(label)}')}];")
    lines.append(f"  __start -> q{fsa.initial};")
    for q, out in enumerate(fsa.edges):
        for t, g in out:
            lines.append(f"  q{q} -> q{t} [label={_dot_quote(str(g))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
