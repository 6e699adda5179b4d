import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlcompose.experiment import GRID_MACROS
from tlcompose.logic import (
    FALSE, RHO_MAX, TRUE, And, EmptyFormulaError, Eventually, FormulaError, FormulaSyntaxError, NegationError,
    Next, Not, Or, Pred, Then, Top, UnknownFeatureError, Until, conjunction, disjunction,
    formula_from_json, formula_to_json, parse_formula, predicate_robustness, robustness,
    robustness_signal, satisfies, to_text,
)

import oracles

GRID = ("x", "y")
A = parse_formula(GRID_MACROS["a"], GRID)
B = parse_formula(GRID_MACROS["b"], GRID)


def pt(x, y):
    return {"x": float(x), "y": float(y)}


# ---------------------------------------------------------------- parsing

def test_parse_phi1_with_macros():
    f = parse_formula("F(a) & F(b)", GRID, GRID_MACROS)
    assert f == And((Eventually(A), Eventually(B)))


def test_macro_expands_to_range_conjunction():
    assert A == And((Pred.make({"x": 1}, 1, ">"), Pred.make({"x": 1}, 3, "<"),
                     Pred.make({"y": 1}, 1, ">"), Pred.make({"y": 1}, 3, "<")))


def test_parse_true_and_false():
    assert parse_formula("true") == TRUE
    assert isinstance(parse_formula("true"), Top)
    assert parse_formula("false") == FALSE


def test_negation_over_temporal_rejected():
    with pytest.raises(NegationError):
        parse_formula("!(F (x < 3))", GRID)


def test_negation_pushed_to_predicates():
    f = parse_formula("!(x < 3 & y > 1)", GRID)
    assert f == Or((Not(Pred.make({"x": 1}, 3)), Not(Pred.make({"y": 1}, 1, ">"))))
    assert parse_formula("!!(x < 3)", GRID) == Pred.make({"x": 1}, 3)


def test_implication_sugar():
    f = parse_formula("x < 3 => F y > 1", GRID)
    assert f == Or((Not(Pred.make({"x": 1}, 3)), Eventually(Pred.make({"y": 1}, 1, ">"))))


def test_until_then_left_associative():
    f = parse_formula("x < 1 U y < 1 T x > 2", GRID)
    assert isinstance(f, Then) and isinstance(f.left, Until)


def test_precedence_and_binds_tighter_than_or():
    f = parse_formula("x < 1 | y < 1 & x > 2", GRID)
    assert isinstance(f, Or) and isinstance(f.children[1], And)


def test_linear_combination():
    f = parse_formula("2*x - y + 0.5*x < 4", GRID)
    assert f == Pred.make({"x": 2.5, "y": -1.0}, 4.0)
    assert predicate_robustness(pt(1, 1), f) == pytest.approx(4 - 1.5)


@pytest.mark.parametrize("text,pos", [
    ("F (x < 3", 8),
    ("x < ", 4),
    ("x < 3 &", 7),
    ("x 3", 2),
    ("F x < 3)", 7),
])
def test_syntax_errors_carry_position(text, pos):
    with pytest.raises(FormulaSyntaxError) as info:
        parse_formula(text, GRID)
    assert info.value.position == pos
    assert info.value.expected


def test_unknown_feature():
    with pytest.raises(UnknownFeatureError):
        parse_formula("F z < 3", GRID)


def test_unknown_macro_is_an_error():
    with pytest.raises(UnknownFeatureError, match="'d'"):
        parse_formula("F d", GRID, GRID_MACROS)


@pytest.mark.parametrize("text", ["", "   "])
def test_empty_input(text):
    with pytest.raises(EmptyFormulaError):
        parse_formula(text)


def test_no_non_strict_comparisons():
    with pytest.raises(FormulaSyntaxError):
        parse_formula("x <= 3", GRID)


def test_always_operator_does_not_exist():
    with pytest.raises(FormulaError, match="'G'"):
        parse_formula("G (x < 3)", GRID)


# ---------------------------------------------------------------- robustness examples

def test_robustness_point_goal():
    assert robustness([pt(2, 2)], A) == 1.0


def test_robustness_true_is_rho_max():
    assert robustness([pt(0, 0), pt(5, 5)], TRUE) == RHO_MAX


def test_robustness_eventually():
    assert robustness([pt(0, 0), pt(2, 2)], Eventually(A)) == 1.0
    assert robustness([pt(0, 0)], Eventually(A)) == -1.0


@pytest.mark.parametrize("x,expected", [(2, 1.0), (3, 0.0)])
def test_predicate_robustness_less(x, expected):
    assert predicate_robustness(pt(x, 0), Pred.make({"x": 1}, 3)) == expected


def test_predicate_robustness_greater():
    assert predicate_robustness(pt(2, 2), Pred.make({"x": 1}, 1, ">")) == 1.0


def test_boundary_is_not_satisfaction():
    assert not satisfies([pt(3, 0)], Pred.make({"x": 1}, 3))


def test_next_at_last_step():
    p = Pred.make({"x": 1}, 3)
    assert robustness([pt(0, 0)], Next(p)) == -RHO_MAX
    assert robustness([pt(5, 0), pt(0, 0)], Next(p)) == 3.0


def test_until_example():
    p, q = Pred.make({"x": 1}, 3), Pred.make({"y": 1}, 2, ">")
    trace = [pt(0, 0), pt(1, 0), pt(1, 4), pt(9, 9)]
    # p holds on 0..2, q first holds at 2
    assert robustness(trace, Until(p, q)) == pytest.approx(2.0)
    assert robustness(trace[:2], Until(p, q)) == pytest.approx(-2.0)


def test_then_requires_strict_order():
    p, q = Pred.make({"x": 1}, 1), Pred.make({"y": 1}, 1)
    both_at_once = [pt(0, 0)]
    assert not satisfies(both_at_once, Then(p, q))
    assert satisfies([pt(0, 5), pt(5, 0)], Then(p, q))
    assert not satisfies([pt(5, 0), pt(0, 5)], Then(p, q))


def test_missing_feature():
    with pytest.raises(KeyError):
        robustness([{"x": 0.0}], A)


def test_bad_start_index():
    with pytest.raises(IndexError):
        robustness([pt(0, 0)], A, t=1)


def test_signal_matches_pointwise_calls():
    f = parse_formula("(x < 2 U y > 2) | X F a", GRID, GRID_MACROS)
    trace = [pt(0, 0), pt(1, 3), pt(2, 2), pt(4, 1)]
    sig = robustness_signal(trace, f)
    assert list(sig) == [robustness(trace, f, t) for t in range(len(trace))]


# ---------------------------------------------------------------- property tests

half = st.integers(0, 4).map(lambda k: k + 0.5)
pred_st = st.builds(
    lambda wx, wy, c, op: Pred.make({"x": wx, "y": wy}, c, op),
    st.sampled_from([0, 1, -1, 2]), st.sampled_from([1, -1, 3]), half, st.sampled_from(["<", ">"]),
)
literal_st = st.one_of(pred_st, pred_st.map(Not))


def _extend(children):
    return st.one_of(
        st.lists(children, min_size=2, max_size=3).map(conjunction),
        st.lists(children, min_size=2, max_size=3).map(disjunction),
        children.map(Eventually),
        children.map(Next),
        st.tuples(children, children).map(lambda lr: Until(*lr)),
        st.tuples(children, children).map(lambda lr: Then(*lr)),
    )


formula_st = st.recursive(st.one_of(literal_st, st.just(TRUE)), _extend, max_leaves=6)
trace_st = st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)).map(lambda c: pt(*c)),
                    min_size=1, max_size=8)


@settings(max_examples=300, deadline=None)
@given(formula_st)
def test_printer_round_trip(f):
    text = to_text(f)
    assert parse_formula(text) == f
    assert to_text(parse_formula(text)) == text


@settings(max_examples=200, deadline=None)
@given(formula_st)
def test_json_round_trip(f):
    assert formula_from_json(formula_to_json(f)) == f


@settings(max_examples=300, deadline=None)
@given(formula_st, trace_st)
def test_robustness_matches_recursive_oracle(f, trace):
    sig = robustness_signal(trace, f)
    for t in range(len(trace)):
        assert sig[t] == pytest.approx(oracles.rho(f, trace, t), abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(literal_st, literal_st, trace_st)
def test_boolean_connectives(p, q, trace):
    rp, rq = robustness(trace, p), robustness(trace, q)
    assert robustness(trace, And((p, q))) == min(rp, rq)
    assert robustness(trace, Or((p, q))) == max(rp, rq)
    if isinstance(p, Pred):
        assert robustness(trace, Not(p)) == -rp


@settings(max_examples=200, deadline=None)
@given(formula_st, trace_st, st.integers(0, 7))
def test_time_shift(f, trace, t):
    t = t % len(trace)
    expected = max(robustness(trace, f, k) for k in range(t, len(trace)))
    assert robustness(trace, Eventually(f), t) == expected


def test_sign_agrees_with_boolean_semantics():
    rng = np.random.default_rng(2024)
    checked = 0
    for f in oracles.formula_corpus(11, 1000):
        trace = oracles.random_trace(rng)
        r = robustness(trace, f)
        if r == 0:
            continue
        assert (r > 0) == oracles.holds(f, trace), to_text(f)
        checked += 1
    assert checked == 1000   # half-integer thresholds never produce ties


def test_rho_max_is_finite():
    assert math.isfinite(robustness([pt(0, 0)], Next(FALSE)))
