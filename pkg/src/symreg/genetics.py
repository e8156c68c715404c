"""Random expression generation and mutation operators.

Every operator is a pure function of its inputs and the passed generator.
Grammar is respected while building (banned nestings are never drawn, a
constant base under ``pow`` gets a variable instead) and re-checked on the
finished tree: a mutation that still produces a violating tree is redrawn,
and after a few failed draws the input is returned unchanged.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .config import DEEP_ONLY_MUTATIONS, MUTATIONS, Options
from .exprtree.evaluate import BINARY_FUNCS, UNARY_FUNCS
from .exprtree.nodes import (
    COMMUTATIVE,
    Binary,
    ExprNode,
    Parameter,
    Unary,
    Variable,
    children,
    depth,
    is_operator,
    replace_at,
    walk,
)
from .exprtree.transform import check_grammar, trim_to_size

RANDOM_EXPR_ATTEMPTS = 100
MUTATION_ATTEMPTS = 10
OPERATOR_PROBABILITY = 0.5
COEFFICIENT_PROBABILITY = 0.5
POINT_FACTOR_RANGE = (0.5, 2.0)


class _GrowFailure(Exception):
    pass


def _draw_op(opts: Options, rng: np.random.Generator, parent_op: Optional[str], allow_unary: bool = True):
    banned = opts.grammar.banned_nestings
    ops = opts.operators
    cands = [(op, 2) for op in ops.binary_operators]
    if allow_unary:
        cands += [(op, 1) for op in ops.unary_operators]
    cands = [(op, k) for op, k in cands if (parent_op, op) not in banned and ops.weight(op) > 0]
    if not cands:
        return None, 0
    w = np.array([ops.weight(op) for op, _ in cands])
    return cands[rng.choice(len(cands), p=w / w.sum())]


def _leaf(opts: Options, rng: np.random.Generator, force_variable: bool = False) -> ExprNode:
    if force_variable or rng.random() < 0.5:
        return Variable(int(rng.integers(1, opts.n_vars + 1)))
    lo, hi = opts.mutation.parameter_init_range
    return Parameter(float(rng.uniform(lo, hi)))


def _grow(opts, rng, max_depth, min_depth, parent_op, is_base) -> ExprNode:
    if max_depth > 1 and (min_depth > 1 or rng.random() < OPERATOR_PROBABILITY):
        op, arity = _draw_op(opts, rng, parent_op)
        if op is not None:
            if arity == 1:
                return Unary(op, _grow(opts, rng, max_depth - 1, min_depth - 1, op, False))
            left = _grow(opts, rng, max_depth - 1, min_depth - 1, op, op == "pow")
            right = _grow(opts, rng, max_depth - 1, min_depth - 1, op, False)
            return Binary(op, left, right)
        if min_depth > 1:
            raise _GrowFailure
    return _leaf(opts, rng, force_variable=is_base and opts.grammar.forbid_param_in_exponent)


def random_expression(
    opts: Options,
    rng: np.random.Generator,
    depth_range: Optional[tuple[int, int]] = None,
    parent_op: Optional[str] = None,
) -> ExprNode:
    """Grow a random tree with depth inside ``depth_range``.

    ``parent_op`` is the operator the tree will be attached under, so banned
    nestings across the attachment point are avoided too.
    """
    lo, hi = depth_range or opts.mutation.random_expr_depth_range
    for _ in range(RANDOM_EXPR_ATTEMPTS):
        target = int(rng.integers(lo, hi + 1))
        try:
            tree = _grow(opts, rng, target, lo, parent_op, False)
        except _GrowFailure:
            continue
        if check_grammar(tree, opts.grammar):
            return tree
    return Variable(int(rng.integers(1, opts.n_vars + 1)))


def _snippet(opts: Options, rng: np.random.Generator, parent_op: Optional[str] = None) -> ExprNode:
    return random_expression(opts, rng, (1, opts.mutation.max_random_snippet_depth), parent_op)


def _conforming(build: Callable[[], ExprNode], expr: ExprNode, opts: Options) -> ExprNode:
    for _ in range(MUTATION_ATTEMPTS):
        out = build()
        if check_grammar(out, opts.grammar):
            return out
    return expr


def _pick(items: list, rng: np.random.Generator):
    return items[int(rng.integers(len(items)))]


def _parent_op(expr: ExprNode, path) -> Optional[str]:
    if not path:
        return None
    node = expr
    for i in path[:-1]:
        node = children(node)[i]
    return node.op


def insert_mutation(expr: ExprNode, opts: Options, rng: np.random.Generator) -> ExprNode:
    """Wrap a random node in a new operator (with a random snippet as second operand)."""

    def build():
        path, node = _pick(list(walk(expr)), rng)
        op, arity = _draw_op(opts, rng, _parent_op(expr, path))
        if op is None:
            return expr
        if arity == 1:
            new = Unary(op, node)
        else:
            snippet = _snippet(opts, rng, op)
            if op not in COMMUTATIVE and rng.random() < 0.5:
                new = Binary(op, snippet, node)
            else:
                new = Binary(op, node, snippet)
        return replace_at(expr, path, new)

    return _conforming(build, expr, opts)


def point_mutation(expr: ExprNode, opts: Options, rng: np.random.Generator) -> ExprNode:
    """Swap one node for another of the same kind; the tree shape is kept."""
    ops = opts.operators

    def other_op(current: str, pool: tuple[str, ...]) -> Optional[str]:
        alts = [op for op in pool if op != current and ops.weight(op) > 0]
        if not alts:
            return None
        w = np.array([ops.weight(op) for op in alts])
        return alts[rng.choice(len(alts), p=w / w.sum())]

    def build():
        path, node = _pick(list(walk(expr)), rng)
        if isinstance(node, Parameter):
            new = Parameter(node.value * float(rng.uniform(*POINT_FACTOR_RANGE)))
        elif isinstance(node, Variable):
            alts = [i for i in range(1, opts.n_vars + 1) if i != node.index]
            new = Variable(_pick(alts, rng)) if alts else node
        elif isinstance(node, Unary):
            op = other_op(node.op, ops.unary_operators)
            new = Unary(op, node.child) if op else node
        else:
            op = other_op(node.op, ops.binary_operators)
            new = Binary(op, node.left, node.right) if op else node
        return replace_at(expr, path, new)

    return _conforming(build, expr, opts)


def addterm_mutation(expr: ExprNode, opts: Options, rng: np.random.Generator) -> ExprNode:
    lo, hi = opts.mutation.parameter_init_range

    def build():
        term = _snippet(opts, rng, "add")
        if rng.random() < COEFFICIENT_PROBABILITY:
            term = Binary("mul", Parameter(float(rng.uniform(lo, hi))), term)
        return Binary("add", expr, term)

    return _conforming(build, expr, opts)


def hoist_mutation(expr: ExprNode, opts: Options, rng: np.random.Generator) -> ExprNode:
    """Remove a random operator, keeping one of its operands (``cos(x) -> x``)."""
    ops = [(p, n) for p, n in walk(expr) if is_operator(n)]
    if not ops:
        return expr

    def build():
        path, node = _pick(ops, rng)
        return replace_at(expr, path, _pick(list(children(node)), rng))

    return _conforming(build, expr, opts)


def innergrow_pairs(expr: ExprNode) -> list[tuple[tuple, tuple]]:
    """All (target, source) path pairs where the source is outside the target subtree."""
    paths = [p for p, _ in walk(expr)]
    return [(a, b) for a in paths for b in paths if b[: len(a)] != a]


def innergrow_mutation(expr: ExprNode, opts: Options, rng: np.random.Generator) -> ExprNode:
    """Replace a random subtree by a copy of another part of the same tree."""
    pairs = innergrow_pairs(expr)
    if not pairs:
        return expr
    nodes = dict(walk(expr))

    def build():
        a, b = _pick(pairs, rng)
        return replace_at(expr, a, nodes[b])

    return _conforming(build, expr, opts)


def subtree_mutation(expr: ExprNode, opts: Options, rng: np.random.Generator) -> ExprNode:
    ops = [p for p, n in walk(expr) if is_operator(n)]
    if not ops:
        return expr

    def build():
        path = _pick(ops, rng)
        return replace_at(expr, path, _snippet(opts, rng, _parent_op(expr, path)))

    return _conforming(build, expr, opts)


def _is_small(node: ExprNode, tol: float) -> bool:
    return isinstance(node, Parameter) and abs(node.value) < tol


def _drastic(node: ExprNode, tol: float) -> tuple[ExprNode, bool]:
    # second item: the node is a term scaled by a negligible parameter
    if isinstance(node, (Parameter, Variable)):
        return node, False
    if isinstance(node, Unary):
        child, zero = _drastic(node.child, tol)
        if zero and node.op == "neg":
            return node, True
        return Unary(node.op, Parameter(0.0) if zero else child), False
    left, lz = _drastic(node.left, tol)
    right, rz = _drastic(node.right, tol)
    if node.op == "mul" and (lz or rz or _is_small(left, tol) or _is_small(right, tol)):
        return node, True
    if node.op in ("add", "sub"):
        lgone = lz or _is_small(left, tol)
        rgone = rz or _is_small(right, tol)
        if lgone and rgone:
            return node, True
        if rgone:
            return left, False
        if lgone:
            return (right if node.op == "add" else Unary("neg", right)), False
    if lz:
        left = Parameter(0.0)
    if rz:
        right = Parameter(0.0)
    return Binary(node.op, left, right), False


def drastic_simplify(expr: ExprNode, tol: float) -> ExprNode:
    """Drop negligible parameters from sums and negligible terms from products.

    ``x + 1e-5 -> x`` and ``x + y*1e-5 -> x`` (with ``tol = 1e-4``). A product
    scaled by a negligible parameter that has no additive sibling left becomes
    ``0.0``.
    """
    out, zero = _drastic(expr, tol)
    return Parameter(0.0) if zero else out


def _fold(op: str, *args: float) -> Optional[float]:
    func = UNARY_FUNCS[op] if len(args) == 1 else BINARY_FUNCS[op]
    with np.errstate(all="ignore"):
        value = float(func(*(np.float64(a) for a in args)))
    return value if np.isfinite(value) else None


def _is_const(node: ExprNode, value: float) -> bool:
    return isinstance(node, Parameter) and node.value == value


def _simplify_node(node: ExprNode) -> ExprNode:
    if isinstance(node, (Parameter, Variable)):
        return node
    if isinstance(node, Unary):
        c = _simplify_node(node.child)
        if isinstance(c, Parameter):
            value = _fold(node.op, c.value)
            if value is not None:
                return Parameter(value)
        if node.op == "neg" and isinstance(c, Unary) and c.op == "neg":
            return c.child
        if node.op == "log" and isinstance(c, Unary) and c.op == "exp":
            return c.child
        return Unary(node.op, c)
    a = _simplify_node(node.left)
    b = _simplify_node(node.right)
    op = node.op
    if isinstance(a, Parameter) and isinstance(b, Parameter):
        value = _fold(op, a.value, b.value)
        if value is not None:
            return Parameter(value)
    if op == "add":
        if _is_const(a, 0.0):
            return b
        if _is_const(b, 0.0):
            return a
    elif op == "sub":
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return Unary("neg", b)
        if a == b:
            return Parameter(0.0)
    elif op == "mul":
        if _is_const(a, 1.0):
            return b
        if _is_const(b, 1.0):
            return a
        if _is_const(a, 0.0) or _is_const(b, 0.0):
            return Parameter(0.0)
    elif op == "div":
        if _is_const(b, 1.0):
            return a
        # only sound where the original is valid, i.e. a != 0; constants are
        # left to folding so 0/0 is never rewritten
        if a == b and not isinstance(a, Parameter):
            return Parameter(1.0)
    elif op == "pow":
        if _is_const(b, 1.0):
            return a
        if _is_const(b, 0.0):
            return Parameter(1.0)
    return Binary(op, a, b)


def simplify_algebraic(expr: ExprNode, max_passes: int = 50) -> ExprNode:
    """Rule-based simplification, applied until nothing changes.

    Constant folding (only to finite, in-domain results) plus identities:
    ``x+0``, ``x*1``, ``x*0``, ``x-x``, ``x/x``, ``x^1``, ``x^0``,
    ``log(exp(x))`` and ``--x``. The result agrees with the input wherever
    the input evaluates validly.
    """
    for _ in range(max_passes):
        new = _simplify_node(expr)
        if new == expr:
            return new
        expr = new
    return expr


def crossover(a: ExprNode, b: ExprNode, rng: np.random.Generator, max_nodes: Optional[int] = None) -> ExprNode:
    """Replace a random subtree of ``a`` by a random subtree of ``b``."""
    path, _ = _pick(list(walk(a)), rng)
    _, donor = _pick(list(walk(b)), rng)
    out = replace_at(a, path, donor)
    if max_nodes is not None:
        out = trim_to_size(out, max_nodes, rng)
    return out


def eligible_mutations(expr: ExprNode, opts: Options, has_partner: bool) -> dict[str, float]:
    deep = depth(expr) > 2
    weights = {}
    for name in MUTATIONS:
        w = opts.mutation.weight(name)
        if name in DEEP_ONLY_MUTATIONS and not deep:
            w = 0.0
        if name == "crossover" and not has_partner:
            w = 0.0
        weights[name] = w
    return weights


def choose_mutation(expr: ExprNode, opts: Options, rng: np.random.Generator, has_partner: bool = False) -> str:
    """Draw a mutation name by weight; falls back to ``point`` if nothing is eligible."""
    weights = eligible_mutations(expr, opts, has_partner)
    w = np.array(list(weights.values()))
    if w.sum() <= 0:
        return "point"
    return MUTATIONS[rng.choice(len(MUTATIONS), p=w / w.sum())]


def apply_mutation(
    name: str,
    expr: ExprNode,
    opts: Options,
    rng: np.random.Generator,
    partner: Optional[ExprNode] = None,
) -> ExprNode:
    if name == "insert":
        return insert_mutation(expr, opts, rng)
    if name == "point":
        return point_mutation(expr, opts, rng)
    if name == "addterm":
        return addterm_mutation(expr, opts, rng)
    if name == "hoist":
        return hoist_mutation(expr, opts, rng)
    if name == "innergrow":
        return innergrow_mutation(expr, opts, rng)
    if name == "subtree":
        return subtree_mutation(expr, opts, rng)
    if name == "drastic_simplify":
        return _conforming(lambda: drastic_simplify(expr, opts.mutation.drastic_simplify_tolerance), expr, opts)
    if name == "simplify":
        return _conforming(lambda: simplify_algebraic(expr), expr, opts)
    if name == "crossover":
        if partner is None:
            raise ValueError("crossover needs a partner expression")
        return _conforming(lambda: crossover(expr, partner, rng, opts.max_nodes), expr, opts)
    raise ValueError(f"unknown mutation {name!r}")


def mutate(
    expr: ExprNode,
    opts: Options,
    rng: np.random.Generator,
    partner: Optional[ExprNode] = None,
) -> ExprNode:
    """Apply one mutation drawn by weight (depth-gated entries masked for shallow trees)."""
    name = choose_mutation(expr, opts, rng, has_partner=partner is not None)
    return apply_mutation(name, expr, opts, rng, partner)
