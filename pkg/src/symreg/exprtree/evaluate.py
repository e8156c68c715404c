"""Protected, vectorized evaluation of expression trees.

A tree is compiled to nested closures over column vectors. Out-of-domain
operands (log of a non-positive number, near-zero denominators, negative
or zero-with-non-positive-exponent powers) and non-finite intermediates
turn into NaN, which every operator propagates. A result containing any
NaN is reported as invalid (``None``), never clamped.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .nodes import Binary, ExprNode, Parameter, Unary, Variable

DIV_THRESHOLD = 1e-100

Compiled = Callable[[Sequence[np.ndarray], "np.ndarray | None"], np.ndarray]


def _clean(a):
    finite = np.isfinite(a)
    if finite.all():
        return a
    return np.where(finite, a, np.nan)


def _div(a, b):
    b = np.where(np.abs(b) >= DIV_THRESHOLD, b, np.nan)
    return _clean(a / b)


def _pow(a, b):
    bad = (a < 0) | ((a == 0) & (b <= 0)) | np.isnan(a) | np.isnan(b)
    out = np.power(np.where(bad, 1.0, a), b)
    return _clean(np.where(bad, np.nan, out))


def _log(a):
    return np.log(np.where(a > 0, a, np.nan))


def _sqrt(a):
    return np.sqrt(np.where(a >= 0, a, np.nan))


BINARY_FUNCS = {
    "add": lambda a, b: _clean(a + b),
    "sub": lambda a, b: _clean(a - b),
    "mul": lambda a, b: _clean(a * b),
    "div": _div,
    "pow": _pow,
}

UNARY_FUNCS = {
    "neg": np.negative,
    "exp": lambda a: _clean(np.exp(a)),
    "log": _log,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "sqrt": _sqrt,
}


def compile_expr(expr: ExprNode, parametric: bool = False) -> Compiled:
    """Compile ``expr`` into ``f(columns, params)``.

    With ``parametric=True`` the i-th parameter (preorder) reads ``params[i]``
    instead of its embedded value, so a ``(k, m)`` parameter matrix together
    with ``(n, 1)`` columns evaluates ``m`` parameter vectors in one pass.
    """
    slot = 0

    def build(node: ExprNode):
        nonlocal slot
        if isinstance(node, Parameter):
            if parametric:
                j = slot
                slot += 1
                return lambda cols, p: p[j]
            v = float(node.value)
            return lambda cols, p: v
        if isinstance(node, Variable):
            i = node.index - 1
            return lambda cols, p: cols[i]
        if isinstance(node, Unary):
            f = UNARY_FUNCS[node.op]
            c = build(node.child)
            return lambda cols, p: f(c(cols, p))
        if isinstance(node, Binary):
            f = BINARY_FUNCS[node.op]
            lhs = build(node.left)
            rhs = build(node.right)
            return lambda cols, p: f(lhs(cols, p), rhs(cols, p))
        raise TypeError(f"not an expression node: {node!r}")

    return build(expr)


def columns(X: np.ndarray, batch: bool = False) -> list[np.ndarray]:
    X = np.asarray(X, dtype=float)
    if batch:
        return [X[:, i : i + 1] for i in range(X.shape[1])]
    return [X[:, i] for i in range(X.shape[1])]


def run_compiled(fn: Compiled, cols: Sequence[np.ndarray], n_rows: int, params=None, width: int | None = None):
    """Call a compiled tree and apply the validity contract.

    Returns an ``(n_rows,)`` array (or ``(n_rows, width)`` in batch mode),
    or ``None`` if any element is invalid.
    """
    with np.errstate(all="ignore"):
        out = fn(cols, params)
    shape = (n_rows,) if width is None else (n_rows, width)
    out = np.broadcast_to(np.asarray(out, dtype=float), shape)
    if not np.isfinite(out).all():
        return None
    return out


def evaluate(expr: ExprNode, X: np.ndarray, rows=None) -> np.ndarray | None:
    """Predictions of ``expr`` on the rows of ``X`` or ``None`` if invalid."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if rows is not None:
        X = X[rows]
    out = run_compiled(compile_expr(expr), columns(X), X.shape[0])
    return None if out is None else np.array(out)


def evaluate_batch(expr: ExprNode, cols: Sequence[np.ndarray], n_rows: int, params: np.ndarray) -> np.ndarray:
    """Evaluate many parameter vectors at once; invalid entries are NaN.

    ``cols`` must come from ``columns(X, batch=True)`` and ``params`` is
    ``(k, m)``. Unlike :func:`evaluate`, invalid entries are left as NaN so
    the caller can decide per column.
    """
    fn = compile_expr(expr, parametric=True)
    with np.errstate(all="ignore"):
        out = fn(cols, params)
    out = np.broadcast_to(np.asarray(out, dtype=float), (n_rows, params.shape[1]))
    return np.where(np.isfinite(out), out, np.nan)
