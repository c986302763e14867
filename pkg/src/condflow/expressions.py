"""Tiny expression language for scalar potentials.

Grammar (EBNF, whitespace ignored)::

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = ("+" | "-") , unary | power ;
    power   = atom , [ "^" , unary ] ;            (* right associative *)
    atom    = NUMBER | VARIABLE | FUNC , "(" , expr , ")" | "(" , expr , ")" ;
    FUNC    = "sin" | "cos" | "exp" | "log" | "abs" | "sign" ;
    VARIABLE= "x" , digit , { digit } ;           (* x1 .. xd *)
    NUMBER  = decimal or scientific literal ;

Trees evaluate on numpy arrays (vectorized over leading axes) and
differentiate exactly node by node. `abs` differentiates to `sign` with the
kink ignored pointwise; `sign` differentiates to zero.
"""
from __future__ import annotations

import re

import numpy as np

from .errors import EvaluationDomainError, ExpressionSyntaxError, UnknownVariableError

__all__ = ["parse", "Node", "Num", "Var", "default_names"]


def default_names(dimension: int) -> tuple:
    return tuple(f"x{i + 1}" for i in range(dimension))


class Node:
    """Base expression node. Subclasses implement evaluate/diff/__str__."""

    precedence = 100

    def evaluate(self, env):
        raise NotImplementedError

    def diff(self, index: int) -> "Node":
        raise NotImplementedError

    def _wrap(self, child: "Node", tighter: bool = False) -> str:
        limit = self.precedence + (1 if tighter else 0)
        s = str(child)
        return f"({s})" if child.precedence < limit else s


class Num(Node):
    def __init__(self, value):
        self.value = float(value)

    def evaluate(self, env):
        return self.value

    def diff(self, index):
        return Num(0.0)

    def __str__(self):
        return repr(self.value)


class Var(Node):
    def __init__(self, name, index):
        self.name = name
        self.index = index

    def evaluate(self, env):
        return env[..., self.index]

    def diff(self, index):
        return Num(1.0 if index == self.index else 0.0)

    def __str__(self):
        return self.name


def _is_const(node, value=None):
    if not isinstance(node, Num):
        return False
    return True if value is None else node.value == value


class Add(Node):
    precedence = 1

    def __init__(self, a, b):
        self.a, self.b = a, b

    def evaluate(self, env):
        return self.a.evaluate(env) + self.b.evaluate(env)

    def diff(self, index):
        return add(self.a.diff(index), self.b.diff(index))

    def __str__(self):
        return f"{self._wrap(self.a)} + {self._wrap(self.b)}"


class Sub(Node):
    precedence = 1

    def __init__(self, a, b):
        self.a, self.b = a, b

    def evaluate(self, env):
        return self.a.evaluate(env) - self.b.evaluate(env)

    def diff(self, index):
        return sub(self.a.diff(index), self.b.diff(index))

    def __str__(self):
        return f"{self._wrap(self.a)} - {self._wrap(self.b, tighter=True)}"


class Mul(Node):
    precedence = 2

    def __init__(self, a, b):
        self.a, self.b = a, b

    def evaluate(self, env):
        return self.a.evaluate(env) * self.b.evaluate(env)

    def diff(self, index):
        return add(mul(self.a.diff(index), self.b), mul(self.a, self.b.diff(index)))

    def __str__(self):
        return f"{self._wrap(self.a)}*{self._wrap(self.b)}"


class Div(Node):
    precedence = 2

    def __init__(self, a, b):
        self.a, self.b = a, b

    def evaluate(self, env):
        den = self.b.evaluate(env)
        if np.any(den == 0):
            raise EvaluationDomainError(f"division by zero in {self}")
        out = self.a.evaluate(env) / den
        if not np.all(np.isfinite(out)):
            raise EvaluationDomainError(f"non-finite quotient in {self}")
        return out

    def diff(self, index):
        num = sub(mul(self.a.diff(index), self.b), mul(self.a, self.b.diff(index)))
        return div(num, mul(self.b, self.b))

    def __str__(self):
        return f"{self._wrap(self.a)}/{self._wrap(self.b, tighter=True)}"


class Neg(Node):
    precedence = 3

    def __init__(self, a):
        self.a = a

    def evaluate(self, env):
        return -self.a.evaluate(env)

    def diff(self, index):
        return neg(self.a.diff(index))

    def __str__(self):
        return f"-{self._wrap(self.a, tighter=True)}"


class Pow(Node):
    precedence = 4

    def __init__(self, a, b):
        self.a, self.b = a, b

    def evaluate(self, env):
        base = self.a.evaluate(env)
        expo = self.b.evaluate(env)
        with np.errstate(all="ignore"):
            out = np.power(base, expo)
        if not np.all(np.isfinite(out)):
            raise EvaluationDomainError(f"invalid power in {self}")
        return out

    def diff(self, index):
        if isinstance(self.b, Num):
            n = self.b.value
            return mul(mul(Num(n), pow_(self.a, Num(n - 1.0))), self.a.diff(index))
        if isinstance(self.a, Num):
            return mul(mul(self, Num(float(np.log(self.a.value)))), self.b.diff(index))
        # general f^g via f^g * (g' log f + g f'/f)
        inner = add(
            mul(self.b.diff(index), Call("log", self.a)),
            div(mul(self.b, self.a.diff(index)), self.a),
        )
        return mul(self, inner)

    def __str__(self):
        return f"{self._wrap(self.a, tighter=True)}^{self._wrap(self.b)}"


class Call(Node):
    precedence = 5

    _impl = {
        "sin": np.sin,
        "cos": np.cos,
        "exp": np.exp,
        "log": np.log,
        "abs": np.abs,
        "sign": np.sign,
    }

    def __init__(self, name, a):
        self.name = name
        self.a = a

    def evaluate(self, env):
        arg = self.a.evaluate(env)
        if self.name == "log":
            if np.any(arg <= 0):
                raise EvaluationDomainError(f"log of a nonpositive value in {self}")
            return np.log(arg)
        out = self._impl[self.name](arg)
        if self.name == "exp" and not np.all(np.isfinite(out)):
            raise EvaluationDomainError(f"overflow in {self}")
        return out

    def diff(self, index):
        da = self.a.diff(index)
        if self.name == "sin":
            outer = Call("cos", self.a)
        elif self.name == "cos":
            outer = neg(Call("sin", self.a))
        elif self.name == "exp":
            outer = self
        elif self.name == "log":
            return div(da, self.a)
        elif self.name == "abs":
            outer = Call("sign", self.a)
        elif self.name == "sign":
            return Num(0.0)
        else:  # pragma: no cover
            raise ValueError(self.name)
        return mul(outer, da)

    def __str__(self):
        return f"{self.name}({self.a})"


# Smart constructors fold constants so derivative trees stay small.


def add(a, b):
    if _is_const(a) and _is_const(b):
        return Num(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a, b):
    if _is_const(a) and _is_const(b):
        return Num(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a, b):
    if _is_const(a) and _is_const(b):
        return Num(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Num(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a, b):
    if _is_const(a, 0.0):
        return Num(0.0)
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and b.value != 0:
        return Num(a.value / b.value)
    return Div(a, b)


def neg(a):
    if _is_const(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def pow_(a, b):
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return Num(1.0)
    if _is_const(a) and _is_const(b):
        return Num(float(np.power(a.value, b.value)))
    return Pow(a, b)


# ---------------------------------------------------------------------------
# Tokenizer and recursive-descent parser

_TOKEN_RE = re.compile(
    r"(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExpressionSyntaxError(f"unexpected character {source[pos]!r}", pos)
        if m.group("num"):
            tokens.append(("num", m.group("num"), pos))
        elif m.group("ident"):
            tokens.append(("ident", m.group("ident"), pos))
        else:
            tokens.append(("op", m.group("op"), pos))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens, names):
        self.tokens = tokens
        self.names = list(names)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol):
        kind, value, pos = self.next()
        if kind != "op" or value != symbol:
            raise ExpressionSyntaxError(f"expected {symbol!r}", pos)

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.next()
                rhs = self.parse_term()
                node = Add(node, rhs) if value == "+" else Sub(node, rhs)
            else:
                return node

    def parse_term(self):
        node = self.parse_unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.next()
                rhs = self.parse_unary()
                node = Mul(node, rhs) if value == "*" else Div(node, rhs)
            else:
                return node

    def parse_unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value in "+-":
            self.next()
            inner = self.parse_unary()
            return inner if value == "+" else neg(inner)
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.next()
            expo = self.parse_unary()
            return Pow(base, expo)
        return base

    def parse_atom(self):
        kind, value, pos = self.next()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            if value in Call._impl:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(value, arg)
            if value in self.names:
                return Var(value, self.names.index(value))
            if re.fullmatch(r"x\d+", value):
                raise UnknownVariableError(value, len(self.names), pos)
            raise ExpressionSyntaxError(f"unknown name {value!r}", pos)
        if kind == "op" and value == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ExpressionSyntaxError(f"unexpected token {value!r}" if value else "unexpected end of input", pos)


def parse(source: str, names) -> Node:
    """Parse `source` over the given variable names (index = position)."""
    parser = _Parser(_tokenize(source), names)
    node = parser.parse_expr()
    kind, value, pos = parser.peek()
    if kind != "end":
        raise ExpressionSyntaxError(f"trailing input starting with {value!r}", pos)
    return node
