"""Arithmetic expressions over the model variables x and y.

Coefficient functions (aging speed, birth and death rates, initial data)
enter through configuration files as strings like ``10*y/(1+x^2)``.  This
module holds a small recursive-descent parser for those strings and an AST
that evaluates on scalars or numpy arrays with broadcasting.

Grammar: ``+ - * / ^`` with conventional precedence (``^`` right
associative, binding tighter than unary minus), parentheses, the unary
functions ``exp``, ``log``, ``abs``, numeric literals, and the variables
``x`` and ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExpressionError",
    "Expression",
    "parse_expression",
    "format_expression",
]

_FUNCTIONS = {"exp": np.exp, "log": np.log, "abs": np.abs}


class ExpressionError(ValueError):
    """Malformed expression text.  ``position`` is the 0-based offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class Expression:
    """Base class for AST nodes."""

    def __call__(self, x=0.0, y=0.0):
        with np.errstate(all="ignore"):
            return self._eval(x, y)

    def _eval(self, x, y):  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class Number(Expression):
    value: float

    def _eval(self, x, y):
        return self.value


@dataclass(frozen=True)
class Variable(Expression):
    name: str

    def _eval(self, x, y):
        return x if self.name == "x" else y


@dataclass(frozen=True)
class Negate(Expression):
    arg: Expression

    def _eval(self, x, y):
        return -self.arg._eval(x, y)


@dataclass(frozen=True)
class Call(Expression):
    func: str
    arg: Expression

    def _eval(self, x, y):
        return _FUNCTIONS[self.func](self.arg._eval(x, y))


@dataclass(frozen=True)
class BinOp(Expression):
    op: str
    left: Expression
    right: Expression

    def _eval(self, x, y):
        a = self.left._eval(x, y)
        b = self.right._eval(x, y)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return np.true_divide(a, b)
        return np.power(a, b)


# ---------------------------------------------------------------------------
# Tokenizer


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            # optional exponent part
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lit = text[i:j]
            try:
                float(lit)
            except ValueError:
                raise ExpressionError(f"bad numeric literal {lit!r}", i) from None
            tokens.append(_Token("num", lit, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("name", text[i:j], i))
            i = j
            continue
        if c in "+-*/^()":
            tokens.append(_Token("op", c, i))
            i += 1
            continue
        raise ExpressionError(f"unexpected character {c!r}", i)
    tokens.append(_Token("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        tok = self.next()
        if tok.kind != "op" or tok.text != op:
            raise ExpressionError(f"expected {op!r}", tok.pos)

    def parse(self) -> Expression:
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExpressionError(f"unexpected {tok.text!r}", tok.pos)
        return e

    def expr(self) -> Expression:
        e = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next().text
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expression:
        e = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next().text
            e = BinOp(op, e, self.factor())
        return e

    def factor(self) -> Expression:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.next()
            return Negate(self.factor())
        if tok.kind == "op" and tok.text == "+":
            self.next()
            return self.factor()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.next()
            # right associative; exponent may carry a sign
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expression:
        tok = self.next()
        if tok.kind == "num":
            return Number(float(tok.text))
        if tok.kind == "name":
            if tok.text in ("x", "y"):
                return Variable(tok.text)
            if tok.text in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(tok.text, arg)
            raise ExpressionError(f"unknown identifier {tok.text!r}", tok.pos)
        if tok.kind == "op" and tok.text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if tok.kind == "end":
            raise ExpressionError("unexpected end of input", tok.pos)
        raise ExpressionError(f"unexpected {tok.text!r}", tok.pos)


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into an evaluable expression tree.

    Raises :class:`ExpressionError` with the offending offset on malformed
    input or unknown identifiers.
    """
    return _Parser(text).parse()


def format_expression(e: Expression) -> str:
    """Render an expression so that re-parsing evaluates identically."""
    if isinstance(e, Number):
        return repr(e.value)
    if isinstance(e, Variable):
        return e.name
    if isinstance(e, Negate):
        return f"-({format_expression(e.arg)})"
    if isinstance(e, Call):
        return f"{e.func}({format_expression(e.arg)})"
    if isinstance(e, BinOp):
        return f"({format_expression(e.left)}{e.op}{format_expression(e.right)})"
    raise TypeError(f"not an expression node: {e!r}")
