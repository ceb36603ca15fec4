"""Parser and evaluator for the arithmetic used in exported CUSTOM functions.

Grammar::

    expr    = term { ("+" | "-") term }
    term    = unary { ("*" | "/") unary }
    unary   = "-" unary | primary
    primary = number | name | "exp" "(" expr ")" | "(" expr ")"
"""

import math
import re
from dataclasses import dataclass
from typing import Mapping

from cvforge.errors import ExpressionError

_TOKEN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_.]*)|(?P<op>[-+*/()]))"
)


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    position: int


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Exp:
    operand: "Node"


@dataclass(frozen=True)
class Chain:
    """first (op operand)*, all ops of one precedence level."""

    first: "Node"
    rest: tuple[tuple[str, "Node", int], ...]


Node = Const | Var | Neg | Exp | Chain


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionError(f"Unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = text or "end of input"
            raise ExpressionError(f"Expected {value!r}, found {found!r}", pos)

    def expr(self) -> Node:
        return self._chain(self.term, "+-")

    def term(self) -> Node:
        return self._chain(self.unary, "*/")

    def _chain(self, operand, ops: str) -> Node:
        first = operand()
        rest = []
        while self.peek[0] == "op" and self.peek[1] in ops:
            _, op, pos = self.take()
            rest.append((op, operand(), pos))
        return Chain(first, tuple(rest)) if rest else first

    def unary(self) -> Node:
        if self.peek[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Node:
        kind, text, pos = self.take()
        if kind == "number":
            return Const(float(text))
        if kind == "name":
            if text == "exp" and self.peek[:2] == ("op", "("):
                self.take()
                inner = self.expr()
                self.expect(")")
                return Exp(inner)
            return Var(text, pos)
        if (kind, text) == ("op", "("):
            inner = self.expr()
            self.expect(")")
            return inner
        raise ExpressionError(f"Unexpected {text or 'end of input'!r}", pos)


def parse_expression(text: str) -> Node:
    parser = _Parser(text)
    node = parser.expr()
    kind, token, pos = parser.peek
    if kind != "end":
        raise ExpressionError(f"Unexpected trailing {token!r}", pos)
    return node


def _eval(node: Node, env: Mapping[str, float]) -> float:
    match node:
        case Const(value=v):
            return v
        case Var(name=name, position=pos):
            if name not in env:
                raise ExpressionError(f"Unknown variable {name!r}", pos)
            return float(env[name])
        case Neg(operand=inner):
            return -_eval(inner, env)
        case Exp(operand=inner):
            try:
                return math.exp(_eval(inner, env))
            except OverflowError:
                return math.inf
        case Chain(first=first, rest=rest):
            acc = _eval(first, env)
            for op, operand, pos in rest:
                value = _eval(operand, env)
                if op == "+":
                    acc += value
                elif op == "-":
                    acc -= value
                elif op == "*":
                    acc *= value
                else:
                    if value == 0.0:
                        raise ExpressionError("Division by zero", pos)
                    acc /= value
            return acc
    raise ExpressionError(f"Unknown node {node!r}", 0)


def eval_expression(expr: str | Node, variables: Mapping[str, float]) -> float:
    node = parse_expression(expr) if isinstance(expr, str) else expr
    return _eval(node, variables)
