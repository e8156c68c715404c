"""Expression tree node types and structural helpers.

Trees are immutable; every "edit" builds a new tree and shares untouched
subtrees with the input. Positions inside a tree are addressed by paths:
tuples of child indices starting from the root (``()`` is the root itself).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

BINARY_OPS = ("add", "sub", "mul", "div", "pow")
UNARY_OPS = ("neg", "exp", "log", "sin", "cos", "abs", "sqrt")
COMMUTATIVE = frozenset({"add", "mul"})

Path = tuple[int, ...]


@dataclass(frozen=True, slots=True)
class Parameter:
    value: float


@dataclass(frozen=True, slots=True)
class Variable:
    index: int  # 1-based column into the data matrix


@dataclass(frozen=True, slots=True)
class Unary:
    op: str
    child: ExprNode


@dataclass(frozen=True, slots=True)
class Binary:
    op: str
    left: ExprNode
    right: ExprNode


ExprNode = Union[Parameter, Variable, Unary, Binary]


def children(node: ExprNode) -> tuple[ExprNode, ...]:
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, Unary):
        return (node.child,)
    return ()


def is_operator(node: ExprNode) -> bool:
    return isinstance(node, (Unary, Binary))


def with_children(node: ExprNode, kids: tuple[ExprNode, ...]) -> ExprNode:
    if isinstance(node, Binary):
        return Binary(node.op, kids[0], kids[1])
    if isinstance(node, Unary):
        return Unary(node.op, kids[0])
    return node


def walk(node: ExprNode, path: Path = ()) -> Iterator[tuple[Path, ExprNode]]:
    """Yield ``(path, subtree)`` pairs in preorder."""
    stack = [(path, node)]
    while stack:
        p, n = stack.pop()
        yield p, n
        kids = children(n)
        for i in range(len(kids) - 1, -1, -1):
            stack.append((p + (i,), kids[i]))


def subtree_at(node: ExprNode, path: Path) -> ExprNode:
    for i in path:
        node = children(node)[i]
    return node


def replace_at(node: ExprNode, path: Path, new: ExprNode) -> ExprNode:
    if not path:
        return new
    kids = list(children(node))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(node, tuple(kids))


def node_count(node: ExprNode) -> int:
    return sum(1 for _ in walk(node))


def depth(node: ExprNode) -> int:
    """Number of levels; a lone leaf has depth 1."""
    kids = children(node)
    if not kids:
        return 1
    return 1 + max(depth(k) for k in kids)


def parameters(node: ExprNode) -> list[float]:
    """Parameter values in preorder (the order used for fitting)."""
    return [n.value for _, n in walk(node) if isinstance(n, Parameter)]


def n_parameters(node: ExprNode) -> int:
    return sum(1 for _, n in walk(node) if isinstance(n, Parameter))


def with_parameters(node: ExprNode, values) -> ExprNode:
    """Return a copy of ``node`` with parameter values replaced in preorder."""
    it = iter(values)

    def rebuild(n: ExprNode) -> ExprNode:
        if isinstance(n, Parameter):
            return Parameter(float(next(it)))
        if isinstance(n, Variable):
            return n
        return with_children(n, tuple(rebuild(k) for k in children(n)))

    out = rebuild(node)
    if next(it, None) is not None:
        raise ValueError("more values than parameter slots")
    return out


def max_variable_index(node: ExprNode) -> int:
    return max((n.index for _, n in walk(node) if isinstance(n, Variable)), default=0)
