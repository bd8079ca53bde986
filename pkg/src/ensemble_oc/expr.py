"""Small arithmetic expression language for vector fields and costs.

Expressions are written over the state coordinates ``x1..xn``, the control
coordinates ``u1..um`` and the time ``t``.  Supported syntax::

    literals     1, 2.5, .5, 1e-3
    operators    + - * / ^   (``^`` is right associative, binds tighter
                               than unary minus: ``-x1^2 == -(x1^2)``)
    functions    sin cos exp abs sign step min max

``step(z)`` is 1 for ``z > 0`` and 0 otherwise; ``sign(0) == 0``.

Trees are immutable and evaluate on NumPy arrays, so one call evaluates a
whole batch of points.  ``x`` is indexed along its last axis, ``x[..., i]``,
and likewise ``u``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ExpressionError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Expr",
    "parse_field_expression",
    "evaluate",
    "to_text",
    "functions_used",
]


class ExpressionError(ValueError):
    """Raised for syntax errors and bad identifiers.

    ``position`` is the 0-based character offset of the offending token,
    or ``None`` when the error is not tied to a location.
    """

    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} at position {position}"
        super().__init__(message)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x", "u" or "t"
    index: int = 0  # 1-based for x and u, 0 for t


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, BinOp, Call]

_ARITY = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "abs": 1,
    "sign": 1,
    "step": 1,
    "min": 2,
    "max": 2,
}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)
_VARNAME = re.compile(r"^([xu])(\d+)$")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    end = len(text.rstrip())
    while pos < end:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    # expr   := term (('+'|'-') term)*
    # term   := unary (('*'|'/') unary)*
    # unary  := '-' unary | '+' unary | power
    # power  := atom ('^' unary)?
    def __init__(self, text: str, n: int, m: int):
        self.text = text
        self.n = n
        self.m = m
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionError(f"expected {value!r}, found {found}", pos, self.text)

    def parse(self) -> Expr:
        tree = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {val!r}", pos, self.text)
        return tree

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(val, pos)
            return self.variable(val, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionError(f"unexpected {found}", pos, self.text)

    def call(self, name: str, pos: int) -> Expr:
        if name not in _ARITY:
            raise ExpressionError(f"unknown function {name!r}", pos, self.text)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != _ARITY[name]:
            raise ExpressionError(
                f"{name} takes {_ARITY[name]} argument(s), got {len(args)}", pos, self.text
            )
        return Call(name, tuple(args))

    def variable(self, name: str, pos: int) -> Expr:
        if name == "t":
            return Var("t", 0)
        m = _VARNAME.match(name)
        if m is None:
            raise ExpressionError(f"unknown identifier {name!r}", pos, self.text)
        kind, idx = m.group(1), int(m.group(2))
        limit = self.n if kind == "x" else self.m
        if not 1 <= idx <= limit:
            raise ExpressionError(
                f"variable {name} out of range ({kind}1..{kind}{limit})", pos, self.text
            )
        return Var(kind, idx)


def parse_field_expression(text: str, n: int, m: int = 0) -> Expr:
    """Parse ``text`` into an expression tree over ``x1..xn``, ``u1..um``, ``t``."""
    if not text or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(text, n, m).parse()


def evaluate(expr: Expr, x, u=None, t=0.0):
    """Evaluate ``expr`` with NumPy broadcasting.

    ``x`` has shape ``(..., n)``; ``u`` has shape ``(..., m)`` or ``(m,)``.
    The result has the broadcast batch shape.  Floating point errors are not
    raised here; callers check finiteness where it matters.
    """
    with np.errstate(all="ignore"):
        return _eval(expr, x, u, t)


def _eval(e, x, u, t):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        if e.kind == "x":
            return x[..., e.index - 1]
        if e.kind == "u":
            return u[..., e.index - 1]
        return t
    if isinstance(e, Neg):
        return -_eval(e.operand, x, u, t)
    if isinstance(e, BinOp):
        a = _eval(e.left, x, u, t)
        b = _eval(e.right, x, u, t)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            return np.divide(a, b)
        return np.power(a, b)
    args = [_eval(a, x, u, t) for a in e.args]
    name = e.name
    if name == "sin":
        return np.sin(args[0])
    if name == "cos":
        return np.cos(args[0])
    if name == "exp":
        return np.exp(args[0])
    if name == "abs":
        return np.abs(args[0])
    if name == "sign":
        return np.sign(args[0])
    if name == "step":
        return np.where(np.asarray(args[0]) > 0, 1.0, 0.0)
    if name == "min":
        return np.minimum(args[0], args[1])
    return np.maximum(args[0], args[1])


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def to_text(e: Expr) -> str:
    """Print ``e`` so that parsing the result gives back the same tree."""
    return _show(e, 0)


def _show(e, ctx: int) -> str:
    if isinstance(e, Num):
        s = repr(float(e.value))
        if s in ("inf", "nan") or e.value < 0:
            # not produced by the parser; keep printing unambiguous
            s = f"({s})"
        return s
    if isinstance(e, Var):
        return "t" if e.kind == "t" else f"{e.kind}{e.index}"
    if isinstance(e, Neg):
        s = "-" + _show(e.operand, 3)
        return f"({s})" if ctx > 3 else s
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        if e.op == "^":
            left, right = _show(e.left, 5), _show(e.right, 3)
        else:
            # left-associative: the right operand needs a strictly higher level
            left, right = _show(e.left, p), _show(e.right, p + 1)
        s = f"{left} {e.op} {right}" if e.op != "^" else f"{left}^{right}"
        return f"({s})" if ctx > p else s
    return f"{e.name}({', '.join(_show(a, 0) for a in e.args)})"


def functions_used(e: Expr) -> set[str]:
    """Names of all functions called anywhere in ``e``."""
    if isinstance(e, Call):
        out = {e.name}
        for a in e.args:
            out |= functions_used(a)
        return out
    if isinstance(e, Neg):
        return functions_used(e.operand)
    if isinstance(e, BinOp):
        return functions_used(e.left) | functions_used(e.right)
    return set()
