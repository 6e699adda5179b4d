"""scTLTL formulas: abstract syntax, text parser/printer and robustness.

Formulas are immutable trees of frozen dataclasses.  Negation is kept in
negation-normal form: ``Not`` only ever wraps a ``Pred``.  The always
operator does not exist in this fragment.

Concrete syntax (whitespace-insensitive)::

    formula  := implies
    implies  := until ( "=>" implies )?
    until    := or ( ("U" | "T") or )*
    or       := and ( "|" and )*
    and      := unary ( "&" unary )*
    unary    := "F" unary | "X" unary | "!" unary | atom
    atom     := "(" formula ")" | "true" | "false" | ident | pred | range
    pred     := lincomb ("<" | ">") number
    range    := number ("<" | ">") lincomb [ ("<" | ">") number ]
    lincomb  := ["-"] term ( ("+" | "-") term )*
    term     := [number "*"] ident

A bare ``ident`` names a macro (e.g. ``a`` bound to ``1 < x < 3 & 1 < y < 3``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

RHO_MAX = 1.0e6

StateSample = Mapping[str, float]
Trace = Sequence[StateSample]


class Formula:
    """Base class of all formula nodes."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)

    def sort_key(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Top(Formula):
    pass


@dataclass(frozen=True)
class Bottom(Formula):
    pass


TRUE = Top()
FALSE = Bottom()


@dataclass(frozen=True)
class Pred(Formula):
    """Affine predicate ``sum(w_i * feature_i) < threshold`` (or ``>``)."""

    coeffs: tuple[tuple[str, float], ...]
    threshold: float
    op: str = "<"

    def __post_init__(self):
        if self.op not in ("<", ">"):
            raise ValueError(f"unsupported comparison {self.op!r}")
        if not any(w != 0 for _, w in self.coeffs):
            raise ValueError("predicate needs at least one nonzero coefficient")

    @classmethod
    def make(cls, coeffs: Mapping[str, float], threshold: float, op: str = "<") -> "Pred":
        merged: dict[str, float] = {}
        for name, w in coeffs.items():
            merged[name] = merged.get(name, 0.0) + float(w)
        items = tuple(sorted((k, v) for k, v in merged.items() if v != 0))
        return cls(items, float(threshold), op)

    @property
    def features(self) -> frozenset[str]:
        return frozenset(name for name, _ in self.coeffs)

    def affine(self, sample: StateSample) -> float:
        try:
            return sum(w * float(sample[name]) for name, w in self.coeffs)
        except KeyError as exc:
            raise KeyError(f"sample is missing feature {exc.args[0]!r}") from None

    def value(self, sample: StateSample) -> float:
        f = self.affine(sample)
        return self.threshold - f if self.op == "<" else f - self.threshold

    def holds(self, sample: StateSample) -> bool:
        # boundary (robustness exactly 0) counts as unsatisfied
        return self.value(sample) > 0


Predicate = Pred


@dataclass(frozen=True)
class Not(Formula):
    child: Pred


@dataclass(frozen=True)
class And(Formula):
    children: tuple[Formula, ...]


@dataclass(frozen=True)
class Or(Formula):
    children: tuple[Formula, ...]


@dataclass(frozen=True)
class Eventually(Formula):
    child: Formula


@dataclass(frozen=True)
class Next(Formula):
    child: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Then(Formula):
    left: Formula
    right: Formula


TEMPORAL = (Eventually, Next, Until, Then)


def conjunction(children: Iterable[Formula]) -> Formula:
    flat: list[Formula] = []
    for c in children:
        if isinstance(c, And):
            flat.extend(c.children)
        else:
            flat.append(c)
    if not flat:
        return TRUE
    return flat[0] if len(flat) == 1 else And(tuple(flat))


def disjunction(children: Iterable[Formula]) -> Formula:
    flat: list[Formula] = []
    for c in children:
        if isinstance(c, Or):
            flat.extend(c.children)
        else:
            flat.append(c)
    if not flat:
        return FALSE
    return flat[0] if len(flat) == 1 else Or(tuple(flat))


def then_equivalent(left: Formula, right: Formula) -> Formula:
    """The reading of ``left T right`` used everywhere: F(left & X F right)."""
    return Eventually(conjunction([left, Next(Eventually(right))]))


def atoms(formula: Formula) -> frozenset[Pred]:
    """All predicates occurring in ``formula`` (negated or not)."""
    out: set[Pred] = set()
    stack = [formula]
    while stack:
        f = stack.pop()
        if isinstance(f, Pred):
            out.add(f)
        elif isinstance(f, Not):
            out.add(f.child)
        elif isinstance(f, (And, Or)):
            stack.extend(f.children)
        elif isinstance(f, (Eventually, Next)):
            stack.append(f.child)
        elif isinstance(f, (Until, Then)):
            stack.extend((f.left, f.right))
    return frozenset(out)


def is_temporal_free(formula: Formula) -> bool:
    if isinstance(formula, TEMPORAL):
        return False
    if isinstance(formula, (And, Or)):
        return all(is_temporal_free(c) for c in formula.children)
    return True


# ---------------------------------------------------------------- printing

def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _pred_text(p: Pred) -> str:
    parts = []
    for i, (name, w) in enumerate(p.coeffs):
        mag = abs(w)
        term = name if mag == 1 else f"{_num(mag)}*{name}"
        if i == 0:
            parts.append(term if w > 0 else f"-{term}")
        else:
            parts.append(f"{'+' if w > 0 else '-'} {term}")
    return f"{' '.join(parts)} {p.op} {_num(p.threshold)}"


# binding strength: larger binds tighter
_LEVEL = {Until: 1, Then: 1, Or: 2, And: 3}


def _level(f: Formula) -> int:
    return _LEVEL.get(type(f), 5)


def _wrap(f: Formula, min_level: int) -> str:
    text = to_text(f)
    return f"({text})" if _level(f) < min_level else text


def to_text(f: Formula) -> str:
    """Print ``f`` so that :func:`parse_formula` reproduces the same tree."""
    if isinstance(f, Top):
        return "true"
    if isinstance(f, Bottom):
        return "false"
    if isinstance(f, Pred):
        return _pred_text(f)
    if isinstance(f, Not):
        return f"!({_pred_text(f.child)})"
    if isinstance(f, And):
        return " & ".join(_wrap(c, 4) for c in f.children)
    if isinstance(f, Or):
        return " | ".join(_wrap(c, 3) for c in f.children)
    if isinstance(f, (Eventually, Next)):
        op = "F" if isinstance(f, Eventually) else "X"
        inner = f"({to_text(f.child)})" if _level(f.child) < 5 or isinstance(f.child, Pred) else to_text(f.child)
        return f"{op} {inner}"
    if isinstance(f, (Until, Then)):
        op = "U" if isinstance(f, Until) else "T"
        return f"{_wrap(f.left, 1)} {op} {_wrap(f.right, 2)}"
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------- JSON

def formula_to_json(f: Formula) -> dict:
    if isinstance(f, Top):
        return {"op": "true"}
    if isinstance(f, Bottom):
        return {"op": "false"}
    if isinstance(f, Pred):
        return {"op": "pred", "coeffs": [[k, w] for k, w in f.coeffs],
                "threshold": f.threshold, "cmp": f.op}
    if isinstance(f, Not):
        return {"op": "not", "arg": formula_to_json(f.child)}
    if isinstance(f, (And, Or)):
        return {"op": "and" if isinstance(f, And) else "or",
                "args": [formula_to_json(c) for c in f.children]}
    if isinstance(f, (Eventually, Next)):
        return {"op": "F" if isinstance(f, Eventually) else "X", "arg": formula_to_json(f.child)}
    if isinstance(f, (Until, Then)):
        return {"op": "U" if isinstance(f, Until) else "T",
                "args": [formula_to_json(f.left), formula_to_json(f.right)]}
    raise TypeError(f"not a formula: {f!r}")


def formula_from_json(d: Mapping) -> Formula:
    op = d["op"]
    if op == "true":
        return TRUE
    if op == "false":
        return FALSE
    if op == "pred":
        return Pred(tuple((str(k), float(w)) for k, w in d["coeffs"]), float(d["threshold"]), d["cmp"])
    if op == "not":
        return Not(formula_from_json(d["arg"]))
    if op in ("and", "or"):
        children = tuple(formula_from_json(c) for c in d["args"])
        return And(children) if op == "and" else Or(children)
    if op in ("F", "X"):
        child = formula_from_json(d["arg"])
        return Eventually(child) if op == "F" else Next(child)
    if op in ("U", "T"):
        left, right = (formula_from_json(c) for c in d["args"])
        return Until(left, right) if op == "U" else Then(left, right)
    raise ValueError(f"unknown formula op {op!r}")


# ---------------------------------------------------------------- parsing

class FormulaError(ValueError):
    pass


class FormulaSyntaxError(FormulaError):
    def __init__(self, message: str, position: int, expected: Sequence[str] = ()):
        self.position = position
        self.expected = tuple(expected)
        detail = f" (expected {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at position {position}{detail}")


class UnknownFeatureError(FormulaError):
    pass


class NegationError(FormulaSyntaxError):
    pass


class EmptyFormulaError(FormulaError):
    pass


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<op>=>|[()<>&|!+\-*])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)

_KEYWORDS = {"F", "X", "U", "T", "true", "false"}


@dataclass(frozen=True)
class _Tok:
    kind: str   # num | op | ident | kw | eof
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tok = m.group()
            if kind == "ident" and tok in _KEYWORDS:
                kind = "kw"
            toks.append(_Tok(kind, tok, pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


def negate(f: Formula, position: int = 0) -> Formula:
    """Push a negation down to the predicates (De Morgan)."""
    if isinstance(f, Top):
        return FALSE
    if isinstance(f, Bottom):
        return TRUE
    if isinstance(f, Pred):
        return Not(f)
    if isinstance(f, Not):
        return f.child
    if isinstance(f, And):
        return disjunction(negate(c, position) for c in f.children)
    if isinstance(f, Or):
        return conjunction(negate(c, position) for c in f.children)
    raise NegationError(f"negation of temporal subformula {to_text(f)!r} is not expressible", position)


class _Parser:
    def __init__(self, text: str, features: frozenset[str] | None, macros: Mapping[str, Formula]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.features = features
        self.macros = macros

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("op", "kw") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            raise FormulaSyntaxError(f"unexpected {self._describe(self.tok)}", self.tok.pos, [repr(text)])

    @staticmethod
    def _describe(tok: _Tok) -> str:
        return "end of input" if tok.kind == "eof" else repr(tok.text)

    def parse(self) -> Formula:
        if self.tok.kind == "eof":
            raise EmptyFormulaError("empty formula")
        f = self.implies()
        if self.tok.kind != "eof":
            raise FormulaSyntaxError(f"unexpected {self._describe(self.tok)}", self.tok.pos,
                                     ["'=>'", "'U'", "'T'", "'|'", "'&'", "end of input"])
        return f

    def implies(self) -> Formula:
        pos = self.tok.pos
        left = self.until()
        if self.accept("=>"):
            right = self.implies()
            return disjunction([negate(left, pos), right])
        return left

    def until(self) -> Formula:
        left = self.or_()
        while self.tok.kind == "kw" and self.tok.text in ("U", "T"):
            op = self.tok.text
            self.i += 1
            right = self.or_()
            left = Until(left, right) if op == "U" else Then(left, right)
        return left

    def or_(self) -> Formula:
        children = [self.and_()]
        while self.accept("|"):
            children.append(self.and_())
        return disjunction(children)

    def and_(self) -> Formula:
        children = [self.unary()]
        while self.accept("&"):
            children.append(self.unary())
        return conjunction(children)

    def unary(self) -> Formula:
        tok = self.tok
        if self.accept("F"):
            return Eventually(self.unary())
        if self.accept("X"):
            return Next(self.unary())
        if self.accept("!"):
            return negate(self.unary(), tok.pos)
        return self.atom()

    def atom(self) -> Formula:
        tok = self.tok
        if self.accept("("):
            f = self.implies()
            self.expect(")")
            return f
        if self.accept("true"):
            return TRUE
        if self.accept("false"):
            return FALSE
        if tok.kind == "num":
            if self.peek().kind == "op" and self.peek().text in ("<", ">"):
                return self.range_()
            return self.pred()
        if tok.kind == "ident":
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text in ("<", ">", "+", "-"):
                return self.pred()
            if tok.text in self.macros:
                self.i += 1
                return self.macros[tok.text]
            if self.features is not None and tok.text in self.features:
                raise FormulaSyntaxError(f"feature {tok.text!r} used without a comparison", nxt.pos, ["'<'", "'>'"])
            raise UnknownFeatureError(f"unknown identifier {tok.text!r} at position {tok.pos}")
        if tok.kind == "op" and tok.text == "-":
            return self.pred()
        raise FormulaSyntaxError(f"unexpected {self._describe(tok)}", tok.pos,
                                 ["'('", "'true'", "'F'", "'X'", "'!'", "identifier", "number"])

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        tok = self.tok
        if tok.kind != "num":
            raise FormulaSyntaxError(f"unexpected {self._describe(tok)}", tok.pos, ["number"])
        self.i += 1
        return sign * float(tok.text)

    def lincomb(self) -> dict[str, float]:
        coeffs: dict[str, float] = {}
        sign = -1.0 if self.accept("-") else 1.0
        while True:
            weight = 1.0
            if self.tok.kind == "num":
                weight = self.number()
                self.expect("*")
            tok = self.tok
            if tok.kind != "ident":
                raise FormulaSyntaxError(f"unexpected {self._describe(tok)}", tok.pos, ["feature name"])
            if self.features is not None and tok.text not in self.features:
                raise UnknownFeatureError(f"unknown feature {tok.text!r} at position {tok.pos}")
            self.i += 1
            coeffs[tok.text] = coeffs.get(tok.text, 0.0) + sign * weight
            if self.accept("+"):
                sign = 1.0
            elif self.accept("-"):
                sign = -1.0
            else:
                return coeffs

    def _cmp(self) -> str:
        tok = self.tok
        for op in ("<", ">"):
            if self.accept(op):
                return op
        raise FormulaSyntaxError(f"unexpected {self._describe(tok)}", tok.pos, ["'<'", "'>'"])

    def _make(self, coeffs: dict[str, float], threshold: float, op: str, pos: int) -> Pred:
        try:
            return Pred.make(coeffs, threshold, op)
        except ValueError as exc:
            raise FormulaSyntaxError(str(exc), pos) from None

    def pred(self) -> Formula:
        pos = self.tok.pos
        coeffs = self.lincomb()
        op = self._cmp()
        return self._make(coeffs, self.number(), op, pos)

    def range_(self) -> Formula:
        pos = self.tok.pos
        low = self.number()
        op1 = self._cmp()
        coeffs = self.lincomb()
        # "c < f" is "f > c"
        first = self._make(coeffs, low, ">" if op1 == "<" else "<", pos)
        if self.tok.kind == "op" and self.tok.text in ("<", ">"):
            op2 = self._cmp()
            return conjunction([first, self._make(coeffs, self.number(), op2, pos)])
        return first


def parse_formula(text: str, features: Iterable[str] | None = None,
                  macros: Mapping[str, "str | Formula"] | None = None) -> Formula:
    """Parse ``text`` into a negation-normal-form :class:`Formula`.

    ``features`` restricts which names may appear inside predicates (``None``
    accepts any).  ``macros`` binds bare identifiers to formulas; string
    values are parsed in insertion order and may refer to earlier macros.
    """
    feats = frozenset(features) if features is not None else None
    bound: dict[str, Formula] = {}
    for name, value in (macros or {}).items():
        if name in _KEYWORDS or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise FormulaError(f"invalid macro name {name!r}")
        if feats is not None and name in feats:
            raise FormulaError(f"macro {name!r} shadows a feature")
        bound[name] = value if isinstance(value, Formula) else _Parser(value, feats, dict(bound)).parse()
    return _Parser(text, feats, bound).parse()


# ---------------------------------------------------------------- robustness

def _feature_arrays(trace: Trace) -> dict[str, np.ndarray]:
    if len(trace) == 0:
        raise ValueError("trace must be non-empty")
    names = trace[0].keys()
    return {n: np.array([float(s[n]) for s in trace]) for n in names}


def _pred_signal(p: Pred, arrays: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    f = np.zeros(n)
    for name, w in p.coeffs:
        if name not in arrays:
            raise KeyError(f"trace is missing feature {name!r}")
        f = f + w * arrays[name]
    return p.threshold - f if p.op == "<" else f - p.threshold


def _signal(f: Formula, arrays: Mapping[str, np.ndarray], n: int, memo: dict) -> np.ndarray:
    hit = memo.get(f)
    if hit is not None:
        return hit
    if isinstance(f, Top):
        out = np.full(n, RHO_MAX)
    elif isinstance(f, Bottom):
        out = np.full(n, -RHO_MAX)
    elif isinstance(f, Pred):
        out = _pred_signal(f, arrays, n)
    elif isinstance(f, Not):
        out = -_signal(f.child, arrays, n, memo)
    elif isinstance(f, And):
        out = np.min([_signal(c, arrays, n, memo) for c in f.children], axis=0)
    elif isinstance(f, Or):
        out = np.max([_signal(c, arrays, n, memo) for c in f.children], axis=0)
    elif isinstance(f, Eventually):
        out = np.maximum.accumulate(_signal(f.child, arrays, n, memo)[::-1])[::-1]
    elif isinstance(f, Next):
        inner = _signal(f.child, arrays, n, memo)
        out = np.append(inner[1:], -RHO_MAX)
    elif isinstance(f, Until):
        left = _signal(f.left, arrays, n, memo)
        right = _signal(f.right, arrays, n, memo)
        out = np.empty(n)
        acc = -RHO_MAX
        for t in range(n - 1, -1, -1):
            acc = max(right[t], min(left[t], acc)) if t < n - 1 else right[t]
            out[t] = acc
    elif isinstance(f, Then):
        out = _signal(then_equivalent(f.left, f.right), arrays, n, memo)
    else:
        raise TypeError(f"not a formula: {f!r}")
    memo[f] = out
    return out


def robustness_signal(trace: Trace, formula: Formula) -> np.ndarray:
    """Robustness of every suffix: ``out[t] == robustness(trace, formula, t)``."""
    arrays = _feature_arrays(trace)
    return _signal(formula, arrays, len(trace), {})


def robustness(trace: Trace, formula: Formula, t: int = 0) -> float:
    """Min/max quantitative semantics of ``formula`` on ``trace[t:]``."""
    if not 0 <= t < len(trace):
        raise IndexError(f"start index {t} outside trace of length {len(trace)}")
    return float(robustness_signal(trace, formula)[t])


def predicate_robustness(sample: StateSample, pred: Pred) -> float:
    return pred.value(sample)


def satisfies(trace: Trace, formula: Formula) -> bool:
    return robustness(trace, formula, 0) > 0
