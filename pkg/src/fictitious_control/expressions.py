"""Small arithmetic-expression grammar for coefficient definitions.

Accepted syntax::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 't' | 'x' | 'pi' | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | exp

Expressions are turned into sympy trees so that coefficient derivatives of
any order are available analytically.
"""

from __future__ import annotations

import re

import sympy as sp

T_SYM, X_SYM = sp.symbols("t x", real=True)

_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


class ExpressionError(ValueError):
    """Raised for malformed coefficient expressions."""


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r} at column {pos + 1} in {text!r}")
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.text))

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None:
            raise ExpressionError(f"unexpected end of expression {self.text!r}")
        if value is not None and tok[1] != value:
            raise ExpressionError(f"expected {value!r} at column {tok[2] + 1} in {self.text!r}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] is not None:
            tok = self.peek()
            raise ExpressionError(f"trailing input {tok[1]!r} at column {tok[2] + 1} in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = node * rhs if op == "*" else node / rhs
        return node

    def unary(self):
        if self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = self.unary()
            return -node if op == "-" else node
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return base ** self.unary()
        return base

    def atom(self):
        kind, value, col = self.take()
        if kind == "num":
            return sp.Float(value) if any(c in value for c in ".eE") else sp.Integer(value)
        if kind == "name":
            if value == "t":
                return T_SYM
            if value == "x":
                return X_SYM
            if value == "pi":
                return sp.pi
            if value in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return _FUNCS[value](arg)
            raise ExpressionError(f"unknown name {value!r} at column {col + 1} in {self.text!r}")
        if value == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ExpressionError(f"unexpected {value!r} at column {col + 1} in {self.text!r}")


def parse_expression(text: str) -> sp.Expr:
    """Parse ``text`` into a sympy expression in the symbols ``t`` and ``x``."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(text).parse()
