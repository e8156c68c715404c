"""Dataclass configuration for every part of the engine.

Field names are unique across all sections so that a flat ``key = value``
file (see :mod:`symreg.io`) can address any of them directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .exprtree.evaluate import columns, compile_expr
from .exprtree.nodes import BINARY_OPS, UNARY_OPS, max_variable_index
from .exprtree.text import parse

MUTATIONS = (
    "insert",
    "point",
    "addterm",
    "hoist",
    "innergrow",
    "subtree",
    "drastic_simplify",
    "simplify",
    "crossover",
)
DEEP_ONLY_MUTATIONS = frozenset(MUTATIONS[3:])

MEASURE_NAMES = ("ms_processed_e", "mse", "mae", "max_ae", "minus_r2", "mare", "q75_are", "max_are")
STRUCTURE_NAMES = ("compl", "recursive_compl", "n_params", "age")
OBJECTIVE_NAMES = MEASURE_NAMES + STRUCTURE_NAMES


@dataclass(frozen=True)
class OperatorSet:
    binary_operators: tuple[str, ...] = ("add", "sub", "mul", "div", "pow")
    unary_operators: tuple[str, ...] = ("exp", "log", "sin", "cos")
    operator_weights: dict[str, float] = field(default_factory=dict)

    def weight(self, op: str) -> float:
        return float(self.operator_weights.get(op, 1.0))

    def validate(self) -> None:
        for key, ops, known in (
            ("binary_operators", self.binary_operators, BINARY_OPS),
            ("unary_operators", self.unary_operators, UNARY_OPS),
        ):
            if len(set(ops)) != len(ops):
                raise ValueError(f"{key}: duplicate operators in {list(ops)}")
            unknown = [op for op in ops if op not in known]
            if unknown:
                raise ValueError(f"{key}: unknown operators {unknown}; accepted: {list(known)}")
        if not self.binary_operators and not self.unary_operators:
            raise ValueError("binary_operators/unary_operators: at least one operator is required")
        for op, w in self.operator_weights.items():
            if op not in self.binary_operators + self.unary_operators:
                raise ValueError(f"operator_weights: {op!r} is not an enabled operator")
            if w < 0:
                raise ValueError(f"operator_weights: weight of {op!r} must be >= 0")
        total = sum(self.weight(op) for op in self.binary_operators + self.unary_operators)
        if total <= 0:
            raise ValueError("operator_weights: weights must sum to a positive value")


@dataclass(frozen=True)
class Grammar:
    banned_nestings: frozenset[tuple[str, str]] = frozenset()
    forbid_param_in_exponent: bool = False


@dataclass(frozen=True)
class MutationConfig:
    mutation_weights: dict[str, float] = field(
        default_factory=lambda: {
            "insert": 1.0,
            "point": 1.5,
            "addterm": 0.5,
            "hoist": 0.7,
            "innergrow": 0.2,
            "subtree": 0.5,
            "drastic_simplify": 0.2,
            "simplify": 0.2,
            "crossover": 0.5,
        }
    )
    drastic_simplify_tolerance: float = 1e-4
    max_random_snippet_depth: int = 3
    random_expr_depth_range: tuple[int, int] = (1, 4)
    parameter_init_range: tuple[float, float] = (-2.0, 2.0)

    def weight(self, name: str) -> float:
        return float(self.mutation_weights.get(name, 0.0))


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 50
    initial_damping: float = 1e-3
    damping_up: float = 3.0
    damping_down: float = 2.0
    early_stop_patience: int = 5
    param_bounds: Optional[tuple[float, float]] = None
    restarts: int = 0
    fd_step: float = 1e-8
    ftol: float = 1e-10


class ExprTransform:
    """Elementwise transform written in the expression text format.

    ``u`` names the transformed quantity; ``v1..vN`` read the row's variables.
    Instances are callable as ``f(u, X)`` and work on ``(n,)`` or ``(n, m)``
    inputs.
    """

    def __init__(self, text: str):
        self.text = text
        # index 0 resolves to column -1, where ``u`` is appended
        self.expr = parse(text, names={"u": 0})
        self._fn = compile_expr(self.expr)

    def __call__(self, u: np.ndarray, X: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        X = np.asarray(X, dtype=float)
        cols = columns(X, batch=u.ndim == 2)
        with np.errstate(all="ignore"):
            out = self._fn(cols + [u], None)
        return np.broadcast_to(np.asarray(out, dtype=float), u.shape).copy()

    def __repr__(self) -> str:
        return f"ExprTransform({self.text!r})"

    def __eq__(self, other: Any) -> bool:
        return isinstance(other, ExprTransform) and other.text == self.text

    def __hash__(self) -> int:
        return hash(self.text)

    @property
    def n_vars(self) -> int:
        return max_variable_index(self.expr)


Transform = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ResidualConfig:
    """How predictions become the minimised ``ms_processed_e``.

    ``pre_residual_processing(pred, X)`` maps raw predictions to the modelled
    quantity. ``residual_weighting`` is ``None`` (data weights or ones),
    ``"relative"`` (``1/|y|``, times data weights), or ``w(y, X)``.
    ``custom_processing(r, X)`` transforms residuals before weighting.
    Strings for the two transforms are parsed as :class:`ExprTransform`.
    """

    pre_residual_processing: Optional[Transform] = None
    residual_weighting: Any = None
    custom_processing: Optional[Transform] = None

    def __post_init__(self):
        for name in ("pre_residual_processing", "custom_processing"):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, ExprTransform(value) if value.strip() else None)
        w = self.residual_weighting
        if isinstance(w, str) and w not in ("relative", "none", ""):
            raise ValueError(f"residual_weighting: {w!r} not in ['none', 'relative']")
        if isinstance(w, str) and w in ("none", ""):
            object.__setattr__(self, "residual_weighting", None)


@dataclass(frozen=True)
class SelectionConfig:
    pareto_objectives: tuple[str, ...] = ("ms_processed_e", "compl")
    tournament_objectives: tuple[str, ...] = ("ms_processed_e", "compl")
    pareto_ratio: float = 0.5
    tournament_size: int = 4

    def validate(self) -> None:
        for key in ("pareto_objectives", "tournament_objectives"):
            names = getattr(self, key)
            if not names:
                raise ValueError(f"{key}: at least one objective is required")
            bad = [n for n in names if n not in OBJECTIVE_NAMES]
            if bad:
                raise ValueError(f"{key}: unknown objectives {bad}; accepted: {list(OBJECTIVE_NAMES)}")
        if not 0.0 <= self.pareto_ratio <= 1.0:
            raise ValueError(f"pareto_ratio: {self.pareto_ratio} outside the range [0,1]")
        if self.tournament_size < 2:
            raise ValueError(f"tournament_size: {self.tournament_size} must be an integer >= 2")


@dataclass(frozen=True)
class Options:
    operators: OperatorSet = field(default_factory=OperatorSet)
    grammar: Grammar = field(default_factory=Grammar)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    fit: FitOptions = field(default_factory=FitOptions)
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    n_vars: int = 1
    max_nodes: int = 30
    n_islands: int = 4
    island_capacity: int = 50
    offspring_per_island: Optional[int] = None
    migration_interval: int = 10
    generations: int = 100
    time_limit: Optional[float] = None
    target_measure: str = "mare"
    target_threshold: Optional[float] = None
    seed: int = 0
    threads: int = 1
    report_interval: int = 10

    @property
    def n_offspring(self) -> int:
        return self.island_capacity if self.offspring_per_island is None else self.offspring_per_island

    def validate(self) -> None:
        """Raise ``ValueError`` naming the offending key and accepted domain."""
        self.operators.validate()
        self.selection.validate()
        ops = set(self.operators.binary_operators) | set(self.operators.unary_operators)
        for outer, inner in self.grammar.banned_nestings:
            if outer not in ops or inner not in ops:
                raise ValueError(f"banned_nestings: ({outer},{inner}) references an operator that is not enabled")
        m = self.mutation
        bad = [k for k in m.mutation_weights if k not in MUTATIONS]
        if bad:
            raise ValueError(f"mutation_weights: unknown mutations {bad}; accepted: {list(MUTATIONS)}")
        if any(w < 0 for w in m.mutation_weights.values()):
            raise ValueError("mutation_weights: weights must be >= 0")
        lo, hi = m.random_expr_depth_range
        if not 1 <= lo <= hi:
            raise ValueError(f"random_expr_depth_range: need 1 <= min <= max, got ({lo},{hi})")
        if m.max_random_snippet_depth < 1:
            raise ValueError("max_random_snippet_depth: must be an integer >= 1")
        if not m.drastic_simplify_tolerance > 0:
            raise ValueError("drastic_simplify_tolerance: must be > 0")
        plo, phi = m.parameter_init_range
        if not plo < phi:
            raise ValueError(f"parameter_init_range: need low < high, got ({plo},{phi})")
        f = self.fit
        if f.max_iterations < 0:
            raise ValueError("max_iterations: must be an integer >= 0")
        if not f.initial_damping > 0:
            raise ValueError("initial_damping: must be > 0")
        if not (f.damping_up > 1 and f.damping_down > 1):
            raise ValueError("damping_up/damping_down: must be > 1")
        if f.early_stop_patience < 1:
            raise ValueError("early_stop_patience: must be an integer >= 1")
        if f.restarts < 0:
            raise ValueError("restarts: must be an integer >= 0")
        if not f.fd_step > 0:
            raise ValueError("fd_step: must be > 0")
        if f.param_bounds is not None and not f.param_bounds[0] < f.param_bounds[1]:
            raise ValueError("param_bounds: need low < high")
        for key in ("n_vars", "max_nodes", "n_islands", "island_capacity", "migration_interval", "threads", "report_interval"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key}: must be an integer >= 1")
        if self.offspring_per_island is not None and self.offspring_per_island < 1:
            raise ValueError("offspring_per_island: must be an integer >= 1")
        if self.generations < 0:
            raise ValueError("generations: must be an integer >= 0")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError("time_limit: must be > 0 seconds")
        if self.target_measure not in OBJECTIVE_NAMES:
            raise ValueError(f"target_measure: {self.target_measure!r} not in {list(OBJECTIVE_NAMES)}")


def describe_transform(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, ExprTransform):
        return value.text
    return getattr(value, "__name__", repr(value))


__all__ = [
    "DEEP_ONLY_MUTATIONS",
    "ExprTransform",
    "FitOptions",
    "Grammar",
    "MEASURE_NAMES",
    "MUTATIONS",
    "MutationConfig",
    "OBJECTIVE_NAMES",
    "OperatorSet",
    "Options",
    "ResidualConfig",
    "STRUCTURE_NAMES",
    "SelectionConfig",
    "describe_transform",
]
