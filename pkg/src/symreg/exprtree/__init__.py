from .evaluate import DIV_THRESHOLD, compile_expr, evaluate, evaluate_batch
from .nodes import (
    BINARY_OPS,
    COMMUTATIVE,
    UNARY_OPS,
    Binary,
    ExprNode,
    Parameter,
    Unary,
    Variable,
    children,
    depth,
    is_operator,
    max_variable_index,
    n_parameters,
    node_count,
    parameters,
    replace_at,
    subtree_at,
    walk,
    with_parameters,
)
from .text import ParseError, parse, to_text
from .transform import (
    canonical_reorder,
    check_grammar,
    complexity,
    constant_base_power,
    recursive_complexity,
    remove_redundant_params,
    trim_to_size,
)

__all__ = [
    "BINARY_OPS",
    "COMMUTATIVE",
    "DIV_THRESHOLD",
    "UNARY_OPS",
    "Binary",
    "ExprNode",
    "Parameter",
    "ParseError",
    "Unary",
    "Variable",
    "canonical_reorder",
    "check_grammar",
    "children",
    "compile_expr",
    "constant_base_power",
    "complexity",
    "depth",
    "evaluate",
    "evaluate_batch",
    "is_operator",
    "max_variable_index",
    "n_parameters",
    "node_count",
    "parameters",
    "parse",
    "recursive_complexity",
    "remove_redundant_params",
    "replace_at",
    "subtree_at",
    "to_text",
    "trim_to_size",
    "walk",
    "with_parameters",
]
