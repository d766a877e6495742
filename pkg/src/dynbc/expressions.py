"""A deliberately tiny closed-form expression grammar for problem data.

Expressions are sums of products of numbers, powers of the coordinates
x1 / x2 (total polynomial degree at most 4 after expansion), and decaying
factors exp(a*t).  That is exactly enough to state every manufactured
solution and data field without an expression engine:

    1.5*x1^2 - x2^2*exp(-0.5*t) + (x1 + x2)^2

Parsed expressions are canonicalized to a sum of (coefficient, px, py, rate)
monomial terms and evaluate vectorized over point arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

MAX_DEGREE = 4
_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
                    r"|\d+(?:[eE][+-]?\d+)?)|(x1|x2|exp|t)|([()+\-*^]))")


class ExprError(ValueError):
    """Malformed expression text."""


def _tokenize(text: str) -> list[tuple[str, object]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprError(f"unexpected character {text[pos]!r} at offset {pos}")
        num, word, sym = m.groups()
        if num is not None:
            tokens.append(("num", float(num)))
        elif word is not None:
            tokens.append((word, None))
        elif sym is not None:
            tokens.append((sym, None))
        pos = m.end()
    tokens.append(("end", None))
    return tokens


# canonical form: dict {(px, py, rate): coefficient}

def _add(a: dict, b: dict) -> dict:
    out = dict(a)
    for key, coef in b.items():
        out[key] = out.get(key, 0.0) + coef
    return out


def _scale(a: dict, s: float) -> dict:
    return {k: s * c for k, c in a.items()}


def _mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for (pa, qa, ra), ca in a.items():
        for (pb, qb, rb), cb in b.items():
            key = (pa + pb, qa + qb, ra + rb)
            out[key] = out.get(key, 0.0) + ca * cb
    return out


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> str:
        return self.tokens[self.pos][0]

    def take(self, kind: str | None = None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ExprError(f"expected {kind!r}, found {tok[0]!r}")
        self.pos += 1
        return tok

    def parse(self) -> dict:
        terms = self.sum_()
        self.take("end")
        return terms

    def sum_(self) -> dict:
        sign = 1.0
        while self.peek() in ("+", "-"):
            if self.take()[0] == "-":
                sign = -sign
        terms = _scale(self.product(), sign)
        while self.peek() in ("+", "-"):
            op = self.take()[0]
            rhs = self.product()
            terms = _add(terms, _scale(rhs, -1.0 if op == "-" else 1.0))
        return terms

    def product(self) -> dict:
        terms = self.factor()
        while self.peek() == "*":
            self.take()
            terms = _mul(terms, self.factor())
        return terms

    def factor(self) -> dict:
        if self.peek() == "-":
            self.take()
            return _scale(self.factor(), -1.0)
        base = self.atom()
        if self.peek() == "^":
            self.take()
            kind, val = self.take()
            if kind != "num" or val != int(val) or not 0 <= val <= 8:
                raise ExprError("exponent must be an integer in 0..8")
            out = {(0, 0, 0.0): 1.0}
            for _ in range(int(val)):
                out = _mul(out, base)
            return out
        return base

    def atom(self) -> dict:
        kind, val = self.take()
        if kind == "num":
            return {(0, 0, 0.0): val}
        if kind == "x1":
            return {(1, 0, 0.0): 1.0}
        if kind == "x2":
            return {(0, 1, 0.0): 1.0}
        if kind == "(":
            inner = self.sum_()
            self.take(")")
            return inner
        if kind == "exp":
            self.take("(")
            rate = self._exp_rate()
            self.take(")")
            return {(0, 0, rate): 1.0}
        raise ExprError(f"unexpected token {kind!r}")

    def _exp_rate(self) -> float:
        sign = 1.0
        while self.peek() in ("+", "-"):
            if self.take()[0] == "-":
                sign = -sign
        if self.peek() == "num":
            rate = self.take()[1]
            if self.peek() == "*":
                self.take()
                self.take("t")
            elif self.peek() == "t":
                self.take()
            else:
                raise ExprError("exp argument must be a multiple of t")
        else:
            self.take("t")
            rate = 1.0
        return sign * rate


@dataclass(frozen=True)
class Expression:
    """Canonical sum of monomial-times-exponential terms."""

    terms: tuple[tuple[float, int, int, float], ...]   # (coef, px, py, rate)
    text: str

    def __call__(self, xy: np.ndarray, t: float = 0.0) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = np.zeros(len(xy))
        # overflow is data, not a crash; downstream solvers diagnose it
        with np.errstate(over="ignore", invalid="ignore"):
            for coef, px, py, rate in self.terms:
                out += coef * xy[:, 0] ** px * xy[:, 1] ** py * math.exp(rate * t)
        return out

    def at(self, x1: float, x2: float, t: float = 0.0) -> float:
        return float(self(np.array([[x1, x2]]), t)[0])

    @property
    def max_degree(self) -> int:
        return max((px + py for _, px, py, _ in self.terms), default=0)


def parse_expression(text: str) -> Expression:
    """Parse and canonicalize; rejects polynomial degree above 4."""
    if not text or not text.strip():
        raise ExprError("empty expression")
    canon = _Parser(text).parse()
    terms = tuple(sorted((coef, px, py, rate)
                         for (px, py, rate), coef in canon.items() if coef != 0.0))
    for _, px, py, _ in terms:
        if px + py > MAX_DEGREE:
            raise ExprError(f"monomial degree {px + py} exceeds {MAX_DEGREE}")
    return Expression(terms, text.strip())


ZERO = Expression((), "0")
