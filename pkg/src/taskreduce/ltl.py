"""LTL over atomic propositions: parsing, printing and evaluation on lasso words.

Only the core connectives (atom, true, not, or, next, until) exist as
nodes. ``F``, ``G``, ``&``, ``->`` and ``false`` are rewritten into them
while parsing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class Top(Formula):
    pass


@dataclass(frozen=True)
class Atom(Formula):
    name: str


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


TRUE = Top()


def land(a, b):
    return Not(Or(Not(a), Not(b)))


def implies(a, b):
    return Or(Not(a), b)


def eventually(a):
    return Until(TRUE, a)


def always(a):
    return Not(eventually(Not(a)))


KEYWORDS = {"X", "F", "G", "U", "true", "false"}


class LtlSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


_TOKEN = re.compile(r"\s*(?:(->)|([!|&()])|([A-Za-z_][A-Za-z0-9_]*))")


def _tokens(text):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            skip = len(text[pos:]) - len(text[pos:].lstrip())
            raise LtlSyntaxError(f"unexpected character {text[pos + skip]!r}", pos + skip)
        tok = m.group(1) or m.group(2) or m.group(3)
        out.append((tok, m.start(m.lastindex)))
        pos = m.end()
    out.append(("<end>", len(text)))
    return out


class _Parser:
    def __init__(self, text, propositions):
        self.toks = _tokens(text)
        self.i = 0
        self.props = set(propositions)

    def peek(self):
        return self.toks[self.i][0]

    def take(self, expect=None):
        tok, pos = self.toks[self.i]
        if expect is not None and tok != expect:
            what = "end of input" if tok == "<end>" else repr(tok)
            raise LtlSyntaxError(f"expected {expect!r}, found {what}", pos)
        self.i += 1
        return tok, pos

    def implication(self):
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return implies(left, self.implication())
        return left

    def disjunction(self):
        left = self.conjunction()
        while self.peek() == "|":
            self.take()
            left = Or(left, self.conjunction())
        return left

    def conjunction(self):
        left = self.until()
        while self.peek() == "&":
            self.take()
            left = land(left, self.until())
        return left

    def until(self):
        left = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self):
        tok, pos = self.toks[self.i]
        if tok == "!":
            self.take()
            return Not(self.unary())
        if tok == "X":
            self.take()
            return Next(self.unary())
        if tok == "F":
            self.take()
            return eventually(self.unary())
        if tok == "G":
            self.take()
            return always(self.unary())
        return self.primary()

    def primary(self):
        tok, pos = self.take()
        if tok == "(":
            inner = self.implication()
            if self.peek() != ")":
                raise LtlSyntaxError("unbalanced parenthesis opened here", pos)
            self.take(")")
            return inner
        if tok == "true":
            return TRUE
        if tok == "false":
            return Not(TRUE)
        if tok == "<end>":
            raise LtlSyntaxError("unexpected end of input", pos)
        if tok in KEYWORDS or not (tok[0].isalpha() or tok[0] == "_"):
            raise LtlSyntaxError(f"unexpected token {tok!r}", pos)
        if tok not in self.props:
            raise LtlSyntaxError(f"unknown proposition {tok!r}", pos)
        return Atom(tok)


def parse_ltl(text: str, propositions: Sequence[str]) -> Formula:
    bad = [p for p in propositions if p in KEYWORDS]
    if bad:
        raise ValueError(f"proposition names clash with keywords: {bad}")
    p = _Parser(text, propositions)
    f = p.implication()
    tok, pos = p.toks[p.i]
    if tok != "<end>":
        msg = "unbalanced closing parenthesis" if tok == ")" else f"unexpected token {tok!r}"
        raise LtlSyntaxError(msg, pos)
    return f


def to_text(f: Formula) -> str:
    """Concrete syntax for a core formula; ``parse_ltl`` inverts it."""
    if isinstance(f, Top):
        return "true"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, Not):
        return "!" + to_text(f.arg)
    if isinstance(f, Next):
        return "X " + to_text(f.arg)
    if isinstance(f, Or):
        return f"({to_text(f.left)} | {to_text(f.right)})"
    if isinstance(f, Until):
        return f"({to_text(f.left)} U {to_text(f.right)})"
    raise TypeError(f"not a formula: {f!r}")


def atoms(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {f.name}
    if isinstance(f, Top):
        return set()
    if isinstance(f, (Not, Next)):
        return atoms(f.arg)
    return atoms(f.left) | atoms(f.right)


def is_propositional(f: Formula) -> bool:
    if isinstance(f, (Atom, Top)):
        return True
    if isinstance(f, Not):
        return is_propositional(f.arg)
    if isinstance(f, Or):
        return is_propositional(f.left) and is_propositional(f.right)
    return False


def eval_label(f: Formula, label: int, propositions: Sequence[str]) -> bool:
    """Truth of a propositional formula under one label bitmask."""
    if isinstance(f, Top):
        return True
    if isinstance(f, Atom):
        return bool(label >> list(propositions).index(f.name) & 1)
    if isinstance(f, Not):
        return not eval_label(f.arg, label, propositions)
    if isinstance(f, Or):
        return eval_label(f.left, label, propositions) or eval_label(f.right, label, propositions)
    raise ValueError("formula is not propositional")


# ---------------------------------------------------------------- lasso words


@dataclass(frozen=True)
class LassoWord:
    prefix: tuple[int, ...]
    cycle: tuple[int, ...]

    def __post_init__(self):
        if not self.cycle:
            raise ValueError("lasso cycle must be nonempty")
        object.__setattr__(self, "prefix", tuple(int(x) for x in self.prefix))
        object.__setattr__(self, "cycle", tuple(int(x) for x in self.cycle))


def ltl_eval_lasso(formula: Formula, word: LassoWord, propositions: Sequence[str]) -> bool:
    """Does ``prefix · cycle^ω`` satisfy ``formula`` at position 0?

    Positions of the prefix and one copy of the cycle form a graph in which
    every position has exactly one successor. Each subformula is evaluated
    on all positions; until is the least fixpoint of its unfolding.
    """
    letters = np.array(word.prefix + word.cycle, dtype=np.int64)
    L = len(letters)
    nxt = np.arange(1, L + 1)
    nxt[-1] = len(word.prefix)
    index = {p: i for i, p in enumerate(propositions)}
    memo = {}

    def sat(f):
        if f in memo:
            return memo[f]
        if isinstance(f, Top):
            out = np.ones(L, dtype=bool)
        elif isinstance(f, Atom):
            out = (letters >> index[f.name]) & 1 == 1
        elif isinstance(f, Not):
            out = ~sat(f.arg)
        elif isinstance(f, Or):
            out = sat(f.left) | sat(f.right)
        elif isinstance(f, Next):
            out = sat(f.arg)[nxt]
        elif isinstance(f, Until):
            hold, goal = sat(f.left), sat(f.right)
            out = goal.copy()
            while True:
                new = goal | (hold & out[nxt])
                if np.array_equal(new, out):
                    break
                out = new
        else:
            raise TypeError(f"not a formula: {f!r}")
        memo[f] = out
        return out

    return bool(sat(formula)[0])
