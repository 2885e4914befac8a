"""Small infix expression language for metric coefficients.

Expressions are built from the chart variables x, y, z, float literals and
the constant pi, the arithmetic operators + - * / ^ (integer exponents
only), and the functions sin, cos, exp, sinh, cosh, sqrt.  Parsed
expressions are immutable ASTs that evaluate pointwise on numpy arrays, so
a single Expr can be shared across concurrent grid evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("x", "y", "z")
FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "sqrt": np.sqrt,
}
CONSTANTS = {"pi": math.pi}


class ExprError(ValueError):
    """Parse failure; ``offset`` is the byte offset of the first error."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Const, Var, Neg, BinOp, Call]


# --- construction helpers with literal folding -------------------------------
#
# Used when assembling expressions programmatically (e.g. J^T D J products for
# oracle fixtures).  Folding is limited to literal arithmetic and exact 0/1
# absorption so that generated problem files stay readable; it is not a
# simplifier.

def const(v: float) -> Expr:
    return Const(float(v))


def var(name: str) -> Expr:
    if name not in VARIABLES:
        raise ValueError(f"unknown variable {name!r}")
    return Var(name)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(a, Const) and a.value == 0.0:
        return b
    if isinstance(b, Const) and b.value == 0.0:
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if isinstance(b, Const) and b.value == 0.0:
        return a
    if isinstance(a, Const) and a.value == 0.0:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if isinstance(a, Const):
        if a.value == 0.0:
            return Const(0.0)
        if a.value == 1.0:
            return b
    if isinstance(b, Const):
        if b.value == 0.0:
            return Const(0.0)
        if b.value == 1.0:
            return a
    return BinOp("*", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# --- parser -------------------------------------------------------------------

_NUM_START = set("0123456789.")


class _Parser:
    """Recursive-descent parser tracking character positions for diagnostics."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def byte_offset(self, pos: int) -> int:
        return len(self.text[:pos].encode("utf-8"))

    def error(self, message: str, pos: int | None = None) -> ExprError:
        return ExprError(message, self.byte_offset(self.pos if pos is None else pos))

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> Expr:
        expr = self.parse_sum()
        self.skip_ws()
        if self.pos < len(self.text):
            raise self.error(f"unexpected {self.text[self.pos]!r}")
        return expr

    def parse_sum(self) -> Expr:
        left = self.parse_product()
        while True:
            self.skip_ws()
            ch = self.peek()
            if ch not in ("+", "-"):
                return left
            self.pos += 1
            right = self.parse_product()
            left = BinOp(ch, left, right)

    def parse_product(self) -> Expr:
        left = self.parse_unary()
        while True:
            self.skip_ws()
            ch = self.peek()
            if ch not in ("*", "/"):
                return left
            self.pos += 1
            right = self.parse_unary()
            left = BinOp(ch, left, right)

    def parse_unary(self) -> Expr:
        self.skip_ws()
        if self.peek() == "-":
            self.pos += 1
            return Neg(self.parse_unary())
        if self.peek() == "+":
            self.pos += 1
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        self.skip_ws()
        if self.peek() != "^":
            return base
        self.pos += 1
        exponent = self.parse_exponent()
        return BinOp("^", base, exponent)

    def parse_exponent(self) -> Expr:
        # Exponents are restricted to (optionally signed, optionally
        # parenthesized) integer literals.
        self.skip_ws()
        start = self.pos
        if self.peek() == "(":
            self.pos += 1
            inner = self.parse_exponent()
            self.skip_ws()
            if self.peek() != ")":
                raise self.error("unbalanced parentheses", start)
            self.pos += 1
            return inner
        sign = 1
        if self.peek() == "-":
            sign = -1
            self.pos += 1
            self.skip_ws()
        numstart = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _NUM_START:
            self.pos += 1
        token = self.text[numstart:self.pos]
        if not token or not token.isdigit():
            raise self.error("non-integer exponent", numstart)
        value = sign * int(token)
        return Const(float(value)) if sign > 0 else Neg(Const(float(-value)))

    def parse_atom(self) -> Expr:
        self.skip_ws()
        start = self.pos
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            inner = self.parse_sum()
            self.skip_ws()
            if self.peek() != ")":
                raise self.error("unbalanced parentheses", start)
            self.pos += 1
            return inner
        if ch in _NUM_START:
            return self.parse_number()
        if ch.isalpha() or ch == "_":
            while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
                self.pos += 1
            name = self.text[start:self.pos]
            self.skip_ws()
            if self.peek() == "(":
                if name not in FUNCTIONS:
                    raise self.error(f"unknown function {name!r}", start)
                self.pos += 1
                arg = self.parse_sum()
                self.skip_ws()
                if self.peek() != ")":
                    raise self.error("unbalanced parentheses", start)
                self.pos += 1
                return Call(name, arg)
            if name in VARIABLES:
                return Var(name)
            if name in CONSTANTS:
                return Const(CONSTANTS[name])
            raise self.error(f"unknown identifier {name!r}", start)
        if ch == "":
            raise self.error("unexpected end of expression")
        raise self.error(f"unexpected {ch!r}")

    def parse_number(self) -> Expr:
        start = self.pos
        seen_dot = False
        while self.pos < len(self.text):
            c = self.text[self.pos]
            if c.isdigit():
                self.pos += 1
            elif c == "." and not seen_dot:
                seen_dot = True
                self.pos += 1
            elif c in "eE" and self.pos > start:
                # exponent part of a float literal
                save = self.pos
                self.pos += 1
                if self.peek() in ("+", "-"):
                    self.pos += 1
                if not self.peek().isdigit():
                    self.pos = save
                    break
                while self.pos < len(self.text) and self.text[self.pos].isdigit():
                    self.pos += 1
                break
            else:
                break
        token = self.text[start:self.pos]
        try:
            return Const(float(token))
        except ValueError:
            raise self.error(f"bad number {token!r}", start) from None


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an Expr AST; raises ExprError with a byte offset."""
    return _Parser(text).parse()


# --- printing -----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _print(expr: Expr, parent_prec: int, right_side: bool) -> str:
    if isinstance(expr, Const):
        if expr.value < 0:
            return _print(Neg(Const(-expr.value)), parent_prec, right_side)
        s = repr(expr.value)
        return s[:-2] if s.endswith(".0") else s
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Call):
        return f"{expr.fn}({_print(expr.arg, 0, False)})"
    if isinstance(expr, Neg):
        inner = _print(expr.arg, _PREC["neg"], True)
        s = f"-{inner}"
        return f"({s})" if parent_prec >= _PREC["neg"] else s
    if isinstance(expr, BinOp):
        prec = _PREC[expr.op]
        # '^' does not chain, so a power base that is itself a power (or any
        # same-precedence node) must be parenthesized
        left = _print(expr.left, prec, expr.op == "^")
        if expr.op == "^":
            # exponent is an integer literal, possibly negated
            exp = _print(expr.right, 0, False)
            if isinstance(expr.right, Neg):
                exp = f"({exp})"
            s = f"{left}^{exp}"
        else:
            right = _print(expr.right, prec, True)
            s = f"{left} {expr.op} {right}"
        need = prec < parent_prec or (prec == parent_prec and right_side)
        return f"({s})" if need else s
    raise TypeError(f"not an Expr: {expr!r}")


def print_expr(expr: Expr) -> str:
    """Render an AST back to source; parse(print_expr(e)) == e."""
    return _print(expr, 0, False)


# --- evaluation ---------------------------------------------------------------

def evaluate(expr: Expr, x, y, z):
    """Evaluate pointwise; accepts floats or broadcastable numpy arrays.

    Constant subexpressions evaluate to scalars; callers that need full
    arrays should broadcast the result against the sample points.
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return {"x": x, "y": y, "z": z}[expr.name]
    if isinstance(expr, Neg):
        return -evaluate(expr.arg, x, y, z)
    if isinstance(expr, Call):
        return FUNCTIONS[expr.fn](evaluate(expr.arg, x, y, z))
    if isinstance(expr, BinOp):
        a = evaluate(expr.left, x, y, z)
        if expr.op == "^":
            n = expr.right
            power = -n.arg.value if isinstance(n, Neg) else n.value
            return np.power(a, int(power)) if float(power).is_integer() else np.power(a, power)
        b = evaluate(expr.right, x, y, z)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if expr.op == "/":
            return a / b
    raise TypeError(f"not an Expr: {expr!r}")
