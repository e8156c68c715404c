"""Infix text format for expressions.

Variables are ``v1 .. vN``, numeric literals become parameters, functions are
called as ``f(x)``. ``^`` is right-associative and binds tighter than unary
minus, so ``-v1^2`` is ``-(v1^2)``. A minus sign directly in front of a
literal (and not followed by ``^``) is read as part of the literal, which
lets negative parameters round-trip as single nodes.
"""

from __future__ import annotations

import re

from .nodes import UNARY_OPS, Binary, ExprNode, Parameter, Unary, Variable

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)

_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_SYMBOL_BINARY = {v: k for k, v in _BINARY_SYMBOL.items()}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 4}
_NEG_PREC = 3
_ATOM_PREC = 5


class ParseError(ValueError):
    """Malformed expression text; ``position`` is a 1-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", start + 1)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, names: dict[str, int] | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.names = names or {}

    def peek(self, k: int = 0):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind != "op":
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def parse(self) -> ExprNode:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return node

    def expr(self) -> ExprNode:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = _SYMBOL_BINARY[self.take()[1]]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> ExprNode:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = _SYMBOL_BINARY[self.take()[1]]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> ExprNode:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            nxt, after = self.peek(), self.peek(1)
            if nxt[0] == "num" and not (after[0] == "op" and after[1] == "^"):
                self.take()
                return Parameter(-float(nxt[1]))
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> ExprNode:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> ExprNode:
        kind, val, pos = self.take()
        if kind == "num":
            return Parameter(float(val))
        if kind == "name":
            if val in self.names:
                return Variable(self.names[val])
            m = re.fullmatch(r"v([1-9]\d*)", val)
            if m:
                return Variable(int(m.group(1)))
            if val in UNARY_OPS:
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                return Unary(val, inner)
            raise ParseError(f"unknown name {val!r}", pos)
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str, names: dict[str, int] | None = None) -> ExprNode:
    """Parse infix text. ``names`` maps extra identifiers to variable indices."""
    return _Parser(text, names).parse()


def _prec(node: ExprNode) -> int:
    if isinstance(node, Parameter):
        return _NEG_PREC if str(node.value).startswith("-") else _ATOM_PREC
    if isinstance(node, Variable):
        return _ATOM_PREC
    if isinstance(node, Unary):
        return _NEG_PREC if node.op == "neg" else _ATOM_PREC
    return _PREC[node.op]


def _wrap(node: ExprNode, parens: bool, names) -> str:
    s = to_text(node, names)
    return f"({s})" if parens else s


def to_text(expr: ExprNode, names: dict[int, str] | None = None) -> str:
    """Deterministic infix rendering; ``parse(to_text(e)) == e``."""
    if isinstance(expr, Parameter):
        return repr(float(expr.value))
    if isinstance(expr, Variable):
        if names and expr.index in names:
            return names[expr.index]
        return f"v{expr.index}"
    if isinstance(expr, Unary):
        if expr.op == "neg":
            child = expr.child
            if isinstance(child, Parameter) and _prec(child) == _ATOM_PREC:
                return f"-({to_text(child, names)})"
            return "-" + _wrap(child, _prec(child) < _NEG_PREC, names)
        return f"{expr.op}({to_text(expr.child, names)})"
    p = _PREC[expr.op]
    lp, rp = _prec(expr.left), _prec(expr.right)
    if expr.op == "pow":
        return _wrap(expr.left, lp <= p, names) + "^" + _wrap(expr.right, rp < p, names)
    left = _wrap(expr.left, lp < p, names)
    right = _wrap(expr.right, rp <= p or rp == _NEG_PREC, names)
    return f"{left} {_BINARY_SYMBOL[expr.op]} {right}"
