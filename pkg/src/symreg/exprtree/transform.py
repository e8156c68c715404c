"""Structural hygiene, grammar checks and complexity measures."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .nodes import (
    COMMUTATIVE,
    Binary,
    ExprNode,
    Parameter,
    Unary,
    Variable,
    children,
    is_operator,
    node_count,
    replace_at,
    walk,
    with_children,
)

if TYPE_CHECKING:
    from ..config import Grammar

RECURSIVE_COMPLEXITY_CAP = 1e12


def remove_redundant_params(expr: ExprNode) -> ExprNode:
    """Collapse operator nodes whose operands are all parameters.

    ``p1 + p2`` becomes ``p1`` and ``f(p1)`` becomes ``p1``: the surviving
    value is the left (or only) operand's, unadjusted, since parameters are
    re-identified afterwards anyway.
    """
    if isinstance(expr, Unary):
        child = remove_redundant_params(expr.child)
        if isinstance(child, Parameter):
            return child
        return expr if child is expr.child else Unary(expr.op, child)
    if isinstance(expr, Binary):
        left = remove_redundant_params(expr.left)
        right = remove_redundant_params(expr.right)
        if isinstance(left, Parameter) and isinstance(right, Parameter):
            return left
        if left is expr.left and right is expr.right:
            return expr
        return Binary(expr.op, left, right)
    return expr


def trim_to_size(expr: ExprNode, max_nodes: int, rng: np.random.Generator) -> ExprNode:
    """Hoist random operator nodes until the tree has at most ``max_nodes``."""
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    while node_count(expr) > max_nodes:
        ops = [(p, n) for p, n in walk(expr) if is_operator(n)]
        path, node = ops[rng.integers(len(ops))]
        kids = children(node)
        expr = replace_at(expr, path, kids[rng.integers(len(kids))])
    return expr


def _kind_rank(node: ExprNode) -> int:
    if isinstance(node, Parameter):
        return 0
    if isinstance(node, Variable):
        return 1
    if isinstance(node, Unary):
        return 2
    return 3


def canonical_reorder(expr: ExprNode) -> ExprNode:
    """Order operands of ``+`` and ``*`` as parameter < variable < unary < binary.

    Ties keep their original order, which makes the operation idempotent.
    """
    kids = children(expr)
    if not kids:
        return expr
    new = tuple(canonical_reorder(k) for k in kids)
    if isinstance(expr, Binary) and expr.op in COMMUTATIVE and _kind_rank(new[0]) > _kind_rank(new[1]):
        new = (new[1], new[0])
    if all(a is b for a, b in zip(new, kids)):
        return expr
    return with_children(expr, new)


def _contains_variable(node: ExprNode) -> bool:
    return any(isinstance(n, Variable) for _, n in walk(node))


def constant_base_power(node: ExprNode) -> bool:
    """True for ``c^(...)`` where the base ``c`` has no variables (e.g. ``3^(v1+1)``)."""
    return isinstance(node, Binary) and node.op == "pow" and not _contains_variable(node.left)


def check_grammar(expr: ExprNode, grammar: Grammar) -> bool:
    """Check banned direct operator nestings and the parameter-exponent rule.

    With ``forbid_param_in_exponent`` a parameter may not be raised to a
    power: ``(v1 + 1)^3`` passes, ``3^(v1 + 1)`` does not.
    """
    banned = grammar.banned_nestings
    for _, node in walk(expr):
        if not is_operator(node):
            continue
        for child in children(node):
            if is_operator(child) and (node.op, child.op) in banned:
                return False
        if grammar.forbid_param_in_exponent and constant_base_power(node):
            return False
    return True


def complexity(expr: ExprNode) -> int:
    return node_count(expr)


def recursive_complexity(expr: ExprNode) -> float:
    """Bottom-up complexity that penalises nesting inside nonlinear operators.

    Leaves count 1, ``+``/``-`` add their operands' values, ``*``/``/``
    multiply them, unary functions square their operand's value, and powers
    use ``left**2 * (1 + right)``; each operator adds 1. Values are capped at
    1e12.
    """
    if isinstance(expr, (Parameter, Variable)):
        return 1.0
    if isinstance(expr, Unary):
        value = recursive_complexity(expr.child) ** 2 + 1.0
    else:
        a = recursive_complexity(expr.left)
        b = recursive_complexity(expr.right)
        if expr.op in ("add", "sub"):
            value = a + b + 1.0
        elif expr.op in ("mul", "div"):
            value = a * b + 1.0
        else:
            value = a * a * (1.0 + b) + 1.0
    return min(value, RECURSIVE_COMPLEXITY_CAP)
