import itertools
import json
import re

import numpy as np
import pytest

from tlcompose.automaton import (
    MAX_ATOMS, AlphabetOverflowError, Fsa, Guard, ProductFsa, fsa_step, guard_from_formula,
    outgoing_disjunction, product, progress_assignment, residual_formula, residual_of, to_dot,
    translate,
)
from tlcompose.experiment import GRID_MACROS, PHI1, PHI2
from tlcompose.logic import FALSE, TRUE, Eventually, Pred, conjunction, parse_formula, robustness

import oracles

GRID = ("x", "y")


def grid(text):
    return parse_formula(text, GRID, GRID_MACROS)


def pt(x, y):
    return {"x": float(x), "y": float(y)}


def assignments(alphabet):
    for bits in itertools.product((False, True), repeat=len(alphabet)):
        yield dict(zip(alphabet, bits))


def equivalent(g1: Guard, g2: Guard, alphabet) -> bool:
    return all(g1.holds(t) == g2.holds(t) for t in assignments(alphabet))


@pytest.fixture(scope="module")
def corpus():
    return [(f, translate(f)) for f in oracles.formula_corpus(3, 80)]


# ---------------------------------------------------------------- translate examples

def test_eventually_a():
    fsa = translate(grid("F a"))
    assert fsa.n_states == 2 and fsa.trap is None
    assert fsa.accepting == {1}
    a = guard_from_formula(grid("a"))
    targets = dict(fsa.edges[0])
    assert set(targets) == {0, 1}
    assert equivalent(targets[1], a, fsa.alphabet)
    assert equivalent(targets[0], _negate(a, fsa.alphabet), fsa.alphabet)
    assert fsa.labels[1] == TRUE


def _negate(g, alphabet):
    cubes = [[(p, v) for p, v in t.items()] for t in assignments(alphabet) if not g.holds(t)]
    return Guard.from_cubes(cubes)


def test_true_is_single_accepting_state():
    fsa = translate(TRUE)
    assert fsa.n_states == 1 and fsa.accepting == {0}
    assert [t for t, _ in fsa.edges[0]] == [0]


def test_phi1_four_states_no_trap():
    fsa = translate(grid(PHI1))
    assert fsa.n_states == 4
    assert fsa.trap is None
    assert len(fsa.accepting) == 1


def test_phi2_two_states():
    assert translate(grid(PHI2)).n_states == 2


def test_translation_is_deterministic():
    f = grid("(F a U b) | X X c")
    assert translate(f).fingerprint() == translate(f).fingerprint()


def test_alphabet_overflow():
    preds = [Pred.make({"x": 1}, k + 0.5) for k in range(MAX_ATOMS + 1)]
    with pytest.raises(AlphabetOverflowError):
        translate(conjunction([Eventually(p) for p in preds]))


def test_sixteen_atoms_allowed():
    preds = [Pred.make({"x": 1}, k + 0.5) for k in range(MAX_ATOMS)]
    fsa = translate(conjunction(preds))
    assert fsa.n_states == 3   # start, accept, trap


def test_until_failure_reaches_trap():
    fsa = translate(grid("x < 3 U y > 4"))
    q = fsa_step(fsa, fsa.initial, pt(5, 0))
    assert q == fsa.trap and fsa.labels[q] == FALSE


def test_next_true_needs_another_sample():
    fsa = translate(parse_formula("X X true"))
    assert not fsa.accepts([pt(0, 0), pt(0, 0)])
    assert fsa.accepts([pt(0, 0)] * 3)


# ---------------------------------------------------------------- stepping

def test_fsa_step_examples():
    fsa = translate(grid("F a"))
    qf = next(iter(fsa.accepting))
    assert fsa_step(fsa, 0, pt(2, 2)) == qf
    assert fsa_step(fsa, 0, pt(0, 0)) == 0
    for x, y in [(0, 0), (2, 2), (9, 7)]:
        assert fsa_step(fsa, qf, pt(x, y)) == qf


def test_boundary_sample_does_not_advance():
    fsa = translate(grid("F a"))
    assert fsa_step(fsa, 0, pt(3, 2)) == 0


# ---------------------------------------------------------------- outgoing disjunction

def test_outgoing_disjunction_eventually():
    fsa = translate(grid("F a"))
    assert equivalent(outgoing_disjunction(fsa, 0), guard_from_formula(grid("a")), fsa.alphabet)


def test_outgoing_disjunction_phi1_initial():
    fsa = translate(grid(PHI1))
    assert equivalent(outgoing_disjunction(fsa, fsa.initial), guard_from_formula(grid("a | b")), fsa.alphabet)


def test_outgoing_disjunction_terminal_states_false(corpus):
    for _, fsa in corpus:
        for q in range(fsa.n_states):
            if fsa.is_terminal(q):
                assert outgoing_disjunction(fsa, q).is_false


def test_outgoing_disjunction_excludes_trap_and_self(corpus):
    for _, fsa in corpus:
        for q in range(fsa.n_states):
            d = outgoing_disjunction(fsa, q)
            for truth in assignments(fsa.alphabet):
                nxt = fsa.successor(q, truth)
                assert d.holds(truth) == (nxt != q and nxt != fsa.trap and not fsa.is_terminal(q))


# ---------------------------------------------------------------- structural invariants

def test_completeness_by_enumeration(corpus):
    for f, fsa in corpus:
        for q in range(fsa.n_states):
            for truth in assignments(fsa.alphabet):
                hits = [t for t, g in fsa.edges[q] if g.holds(truth)]
                assert len(hits) == 1, (f, q, truth)


def test_terminal_states_absorb(corpus):
    for _, fsa in corpus:
        for q in fsa.accepting | ({fsa.trap} if fsa.trap is not None else set()):
            assert [t for t, _ in fsa.edges[q]] == [q]
            assert fsa.labels[q] == (TRUE if q in fsa.accepting else FALSE)


def test_every_live_state_can_accept(corpus):
    for _, fsa in corpus:
        reach = {q: {t for t, _ in fsa.edges[q]} for q in range(fsa.n_states)}
        for q in range(fsa.n_states):
            if fsa.is_terminal(q):
                continue
            seen, stack = {q}, [q]
            while stack:
                for t in reach[stack.pop()]:
                    if t not in seen:
                        seen.add(t)
                        stack.append(t)
            assert seen & fsa.accepting


def test_states_are_bfs_numbered(corpus):
    for _, fsa in corpus:
        order, seen = [], {fsa.initial}
        queue = [fsa.initial]
        while queue:
            q = queue.pop(0)
            order.append(q)
            for t, _ in fsa.edges[q]:
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
        assert order == list(range(fsa.n_states))


def test_labels_are_distinct(corpus):
    for _, fsa in corpus:
        assert len(set(fsa.labels)) == fsa.n_states


def test_language_equivalence(corpus):
    rng = np.random.default_rng(5)
    for f, fsa in corpus:
        for _ in range(40):
            trace = oracles.random_trace(rng)
            assert oracles.run_fsa(fsa, trace) == (robustness(trace, f) > 0)


def test_edges_follow_progression(corpus):
    # each edge agrees with stepping the canonical residual of its source label
    for _, fsa in corpus:
        residuals = [residual_of(label) for label in fsa.labels]
        for q in range(fsa.n_states):
            if fsa.is_terminal(q):
                continue
            for truth in assignments(fsa.alphabet):
                succ = progress_assignment(residuals[q], truth)
                target = fsa.successor(q, truth)
                if target == fsa.trap:
                    # merged dead states: the residual must be unsatisfiable from here
                    assert translate_residual_rejects(succ)
                else:
                    assert succ == residuals[target]


def translate_residual_rejects(res) -> bool:
    return not translate(residual_formula(res)).accepting


def test_progression_fixpoints(corpus):
    assert translate(TRUE).n_states == 1
    for _, fsa in corpus:
        for q in fsa.accepting:
            sub = translate(fsa.labels[q])
            assert sub.n_states == 1 and sub.accepting == {0}
    assert translate(grid("F a | true")).n_states == 1


# ---------------------------------------------------------------- product

def test_grid_product_eight_states():
    pf = product(translate(grid(PHI1)), translate(grid(PHI2)))
    assert isinstance(pf, ProductFsa)
    assert pf.n_states == 8 and len(pf.accepting) == 1 and pf.trap is None
    (acc,) = pf.accepting
    f1, f2 = pf.factors
    q1, q2 = pf.components[acc]
    assert q1 in f1.accepting and q2 in f2.accepting


def test_product_with_true_is_isomorphic():
    f = translate(grid(PHI1))
    pf = product(f, translate(TRUE))
    assert pf.n_states == f.n_states
    for q, (q1, q2) in enumerate(pf.components):
        assert q2 == 0
        assert (q in pf.accepting) == (q1 in f.accepting)
        for truth in assignments(f.alphabet):
            assert pf.components[pf.successor(q, truth)][0] == f.successor(q1, truth)


def test_product_idempotent_language():
    f = translate(grid("F a"))
    pf = product(f, f)
    rng = np.random.default_rng(0)
    for _ in range(300):
        trace = [pt(*c) for c in rng.integers(0, 4, size=(int(rng.integers(1, 8)), 2))]
        assert pf.accepts(trace) == f.accepts(trace)


def test_product_guards_are_conjunctions(corpus):
    pairs = list(zip(corpus[::2], corpus[1::2]))[:20]
    for (_, f1), (_, f2) in pairs:
        pf = product(f1, f2)
        for q, comp in enumerate(pf.components):
            if comp is None:
                continue
            for truth in assignments(pf.alphabet):
                t1, t2 = f1.successor(comp[0], truth), f2.successor(comp[1], truth)
                assert pf.successor(q, truth) == pf.index_of(t1, t2)


def test_product_soundness(corpus):
    rng = np.random.default_rng(9)
    pairs = list(zip(corpus[::2], corpus[1::2]))
    for (_, f1), (_, f2) in pairs:
        pf = product(f1, f2)
        for _ in range(30):
            trace = oracles.random_trace(rng)
            assert pf.accepts(trace) == (f1.accepts(trace) and f2.accepts(trace))


def test_product_contradiction_collapses_to_trap():
    pf = product(translate(parse_formula("X x < 1")), translate(parse_formula("X !(x < 1)")))
    assert pf.n_states == 1 and pf.trap == 0 and pf.components == [None]


def test_conjunction_text_matches_product_language():
    rng = np.random.default_rng(1)
    joint = translate(grid(f"({PHI1}) & ({PHI2})"))
    pf = product(translate(grid(PHI1)), translate(grid(PHI2)))
    for _ in range(300):
        trace = [pt(*c) for c in rng.integers(0, 8, size=(int(rng.integers(1, 12)), 2))]
        assert joint.accepts(trace) == pf.accepts(trace)


# ---------------------------------------------------------------- serialisation

def test_dot_true():
    dot = to_dot(translate(TRUE))
    assert dot.count("doublecircle") == 1
    assert len(re.findall(r"^\s*q\d+ \[", dot, re.M)) == 1


def test_dot_eventually_a():
    dot = to_dot(translate(grid("F a")))
    assert len(re.findall(r"^\s*q\d+ \[", dot, re.M)) == 2
    assert len(re.findall(r"^\s*q\d+ -> q\d+", dot, re.M)) == 3
    assert dot.startswith("digraph") and dot.rstrip().endswith("}")


def test_dot_product():
    pf = product(translate(grid(PHI1)), translate(grid(PHI2)))
    dot = to_dot(pf)
    assert len(re.findall(r"^\s*q\d+ \[", dot, re.M)) == 8
    assert dot.count("doublecircle") == 1


def test_json_round_trip(corpus):
    for _, fsa in corpus[:30]:
        doc = json.loads(json.dumps(fsa.to_json()))
        back = Fsa.from_json(doc)
        assert back.n_states == fsa.n_states
        assert back.accepting == fsa.accepting and back.trap == fsa.trap
        for q in range(fsa.n_states):
            for truth in assignments(fsa.alphabet):
                assert back.successor(q, truth) == fsa.successor(q, truth)
