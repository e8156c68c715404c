"""Parameter identification and residual measures.

Parameters are fitted with a Levenberg-Marquardt loop on the *processed*
residual ``w * h(y - g(f(X)))`` (``g`` pre-residual processing, ``h`` custom
processing, ``w`` weights), so the optimiser always minimises
``ms_processed_e``. With a validation split, the loop watches the
validation objective and stops once it has risen for ``early_stop_patience``
consecutive accepted steps, returning the best-validation parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import MEASURE_NAMES, FitOptions, ResidualConfig
from .exprtree.evaluate import columns, compile_expr
from .exprtree.nodes import ExprNode, parameters, with_parameters

RELATIVE_Y_FLOOR = 1e-300
STEP_TOL = 1e-12
MAX_DAMPING = 1e16


@dataclass
class Dataset:
    """Variables ``X`` (rows x columns), target ``y``, optional row weights.

    ``fit_mask`` is the split assignment: ``True`` rows are used for
    parameter identification, ``False`` rows form the validation set.
    """

    X: np.ndarray
    y: np.ndarray
    weights: Optional[np.ndarray] = None
    fit_mask: Optional[np.ndarray] = None
    variable_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.X.shape[0]
        if n == 0:
            raise ValueError("dataset is empty")
        if self.y.shape[0] != n:
            raise ValueError(f"X has {n} rows but y has {self.y.shape[0]}")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("X and y must be finite")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if self.weights.shape[0] != n:
                raise ValueError("weights must have one entry per row")
            if not (np.isfinite(self.weights).all() and (self.weights > 0).all()):
                raise ValueError("weights must be finite and strictly positive")
        if self.fit_mask is None:
            self.fit_mask = np.ones(n, dtype=bool)
        self.fit_mask = np.asarray(self.fit_mask, dtype=bool)
        if self.fit_mask.shape[0] != n or not self.fit_mask.any():
            raise ValueError("fit_mask must have one entry per row and select at least one row")
        if not self.variable_names:
            self.variable_names = tuple(f"v{i + 1}" for i in range(self.X.shape[1]))

    @classmethod
    def from_arrays(cls, X, y, weights=None, fit_fraction: float = 1.0, seed: int = 0, variable_names=()):
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        return cls(X, y, weights, split_mask(n, fit_fraction, seed), tuple(variable_names))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_vars(self) -> int:
        return self.X.shape[1]

    @property
    def fit_rows(self) -> np.ndarray:
        return np.flatnonzero(self.fit_mask)

    @property
    def validation_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.fit_mask)

    @property
    def fit_fraction(self) -> float:
        return float(self.fit_mask.mean())


def split_mask(n: int, fit_fraction: float, seed: int) -> np.ndarray:
    """Mark exactly ``ceil(fit_fraction * n)`` rows, drawn once from ``seed``."""
    if not 0.0 < fit_fraction <= 1.0:
        raise ValueError(f"fit_fraction: {fit_fraction} outside (0,1]")
    n_fit = math.ceil(round(fit_fraction * n, 9))
    if fit_fraction < 1.0 and n_fit >= n:
        raise ValueError(f"fit_fraction {fit_fraction} leaves no validation rows for {n} rows")
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng(seed).permutation(n)[:n_fit]] = True
    return mask


@dataclass(frozen=True)
class Measures:
    ms_processed_e: float
    mse: float
    mae: float
    max_ae: float
    minus_r2: float
    mare: float
    q75_are: float
    max_are: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in MEASURE_NAMES}


@dataclass
class FitReport:
    iterations: int = 0
    objective: float = math.nan
    validation_objective: Optional[float] = None
    final_validation_objective: Optional[float] = None
    final_params: list = field(default_factory=list)
    stop_reason: str = "no_parameters"
    start: int = 0


def _apply(transform, u: np.ndarray, X: np.ndarray) -> np.ndarray:
    from .config import ExprTransform

    if u.ndim == 1 or isinstance(transform, ExprTransform):
        return np.asarray(transform(u, X), dtype=float)
    return np.column_stack([transform(u[:, j], X) for j in range(u.shape[1])])


def row_weights(data: Dataset, cfg: ResidualConfig, rows=None) -> Optional[np.ndarray]:
    rows = np.arange(data.n_rows) if rows is None else rows
    w = cfg.residual_weighting
    base = None if data.weights is None else data.weights[rows]
    if w is None:
        return base
    if isinstance(w, str):  # "relative"
        with np.errstate(divide="ignore"):
            rel = 1.0 / np.abs(data.y[rows])
        return rel if base is None else rel * base
    if callable(w):
        return np.asarray(w(data.y[rows], data.X[rows]), dtype=float)
    return np.asarray(w, dtype=float)[rows]


class _Problem:
    """Processed residuals of one expression on a fixed row subset."""

    def __init__(self, fn, data: Dataset, cfg: ResidualConfig, rows):
        self.fn = fn
        self.cfg = cfg
        self.X = data.X[rows]
        self.y = data.y[rows]
        self.w = row_weights(data, cfg, rows)
        self.n = len(rows)
        self.cols = columns(self.X)
        self.bcols = columns(self.X, batch=True)

    def _process(self, pred: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if cfg.pre_residual_processing is not None:
            pred = _apply(cfg.pre_residual_processing, pred, self.X)
        y = self.y if pred.ndim == 1 else self.y[:, None]
        r = y - pred
        if cfg.custom_processing is not None:
            r = _apply(cfg.custom_processing, r, self.X)
        if self.w is not None:
            r = r * (self.w if r.ndim == 1 else self.w[:, None])
        return r

    def residual(self, p: np.ndarray) -> Optional[np.ndarray]:
        with np.errstate(all="ignore"):
            pred = np.broadcast_to(np.asarray(self.fn(self.cols, p), dtype=float), (self.n,))
            if not np.isfinite(pred).all():
                return None
            r = self._process(pred)
        return r if np.isfinite(r).all() else None

    def residual_batch(self, P: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            pred = np.broadcast_to(np.asarray(self.fn(self.bcols, P), dtype=float), (self.n, P.shape[1]))
            pred = np.where(np.isfinite(pred), pred, np.nan)
            r = self._process(pred)
        return np.where(np.isfinite(r), r, np.nan)

    def objective(self, p: np.ndarray) -> float:
        r = self.residual(p)
        with np.errstate(over="ignore"):
            return math.inf if r is None else float(np.mean(r * r))

    def jacobian(self, p: np.ndarray, r: np.ndarray, fd_step: float) -> np.ndarray:
        """Forward differences with step ``fd_step * max(|p_j|, 1)``; invalid columns are zero."""
        h = fd_step * np.maximum(np.abs(p), 1.0)
        P = p[:, None] + np.diag(h)
        R = self.residual_batch(P)
        J = (R - r[:, None]) / h
        return np.where(np.isfinite(J), J, 0.0)


def residual(expr: ExprNode, data: Dataset, cfg: ResidualConfig, rows=None) -> Optional[np.ndarray]:
    """``y - g(f(X))`` on ``rows`` (all rows by default); ``None`` if invalid."""
    rows = np.arange(data.n_rows) if rows is None else np.asarray(rows)
    X = data.X[rows]
    with np.errstate(all="ignore"):
        pred = np.broadcast_to(np.asarray(compile_expr(expr)(columns(X), None), dtype=float), (len(rows),))
        if not np.isfinite(pred).all():
            return None
        if cfg.pre_residual_processing is not None:
            pred = _apply(cfg.pre_residual_processing, pred, X)
        r = data.y[rows] - pred
    return r if np.isfinite(r).all() else None


def ms_processed_e(residuals: np.ndarray, data: Dataset, cfg: ResidualConfig, rows=None) -> float:
    """Mean of ``(w_i * h(r_i))**2``; equals the mse without weighting/processing."""
    rows = np.arange(data.n_rows) if rows is None else np.asarray(rows)
    r = np.asarray(residuals, dtype=float)
    with np.errstate(all="ignore"):
        if cfg.custom_processing is not None:
            r = _apply(cfg.custom_processing, r, data.X[rows])
        w = row_weights(data, cfg, rows)
        if w is not None:
            r = w * r
        return float(np.mean(r * r))


def fd_jacobian(expr: ExprNode, data: Dataset, cfg: ResidualConfig, params, rows=None, fd_step: float = 1e-8):
    """Forward-difference Jacobian of the processed residual w.r.t. the parameters."""
    rows = np.arange(data.n_rows) if rows is None else np.asarray(rows)
    problem = _Problem(compile_expr(expr, parametric=True), data, cfg, rows)
    p = np.asarray(params, dtype=float)
    r = problem.residual(p)
    if r is None:
        return None
    return problem.jacobian(p, r, fd_step)


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, b, rcond=None)[0]


# overflowing objectives are non-finite and handled as rejected steps
@np.errstate(all="ignore")
def _levenberg_marquardt(fit: _Problem, val: Optional[_Problem], p0: np.ndarray, opts: FitOptions):
    r = fit.residual(p0)
    if r is None:
        return None
    p = p0.copy()
    obj = float(np.mean(r * r))
    lam = opts.initial_damping
    report = FitReport(objective=obj, stop_reason="max_iterations")
    best_p = p.copy()
    if val is not None:
        prev_val = best_val = val.objective(p)
        rises = 0
    bounds = opts.param_bounds
    while report.iterations < opts.max_iterations:
        if obj == 0.0:
            report.stop_reason = "exact"
            break
        report.iterations += 1
        J = fit.jacobian(p, r, opts.fd_step)
        JtJ = J.T @ J
        d = np.diag(JtJ).copy()
        d[d <= 0] = 1.0
        with np.errstate(all="ignore"):
            delta = _solve(JtJ + lam * np.diag(d), -(J.T @ r))
        if not np.isfinite(delta).all():
            lam *= opts.damping_up
            continue
        trial = p + delta
        if bounds is not None:
            trial = np.clip(trial, bounds[0], bounds[1])
        r_new = fit.residual(trial)
        with np.errstate(over="ignore"):
            obj_new = math.inf if r_new is None else float(np.mean(r_new * r_new))
        if not obj_new < obj:
            lam *= opts.damping_up
            if lam > MAX_DAMPING:
                report.stop_reason = "damping"
                break
            continue
        step = float(np.linalg.norm(trial - p))
        decrease = (obj - obj_new) / obj
        p, r, obj = trial, r_new, obj_new
        lam = lam / opts.damping_down
        if val is None:
            best_p = p
        else:
            v = val.objective(p)
            if v < best_val:
                best_val, best_p = v, p
            rises = rises + 1 if v > prev_val else 0
            prev_val = v
            if rises >= opts.early_stop_patience:
                report.stop_reason = "early_stopping"
                break
        if step <= STEP_TOL * max(1.0, float(np.linalg.norm(p))):
            report.stop_reason = "step"
            break
        if decrease <= opts.ftol:
            report.stop_reason = "ftol"
            break
    report.final_params = list(p)
    if val is not None:
        report.validation_objective = best_val
        report.final_validation_objective = prev_val
        report.objective = fit.objective(best_p)
    else:
        report.objective = obj
    return best_p, report


def fit_params_lm(
    expr: ExprNode,
    data: Dataset,
    cfg: ResidualConfig,
    opts: FitOptions,
    rng: Optional[np.random.Generator] = None,
    init_range: tuple[float, float] = (-2.0, 2.0),
) -> Optional[tuple[ExprNode, FitReport]]:
    """Fit the embedded parameters of ``expr``; ``None`` if it cannot be evaluated.

    The tree's own values are the first start; each of ``opts.restarts``
    further starts redraws values uniformly from ``init_range``. The start
    whose result has the lowest fit-subset objective wins.
    """
    p0 = np.array(parameters(expr), dtype=float)
    fit_rows = data.fit_rows
    fn = compile_expr(expr, parametric=True)
    fit = _Problem(fn, data, cfg, fit_rows)
    if p0.size == 0:
        obj = fit.objective(p0)
        if not math.isfinite(obj):
            return None
        return expr, FitReport(objective=obj)
    val_rows = data.validation_rows
    val = _Problem(fn, data, cfg, val_rows) if val_rows.size else None
    rng = rng if rng is not None else np.random.default_rng(0)
    best = None
    for start in range(opts.restarts + 1):
        p_start = p0 if start == 0 else rng.uniform(init_range[0], init_range[1], size=p0.size)
        result = _levenberg_marquardt(fit, val, p_start, opts)
        if result is None:
            continue
        p, report = result
        report.start = start
        if best is None or report.objective < best[1].objective:
            best = (p, report)
    if best is None:
        return None
    p, report = best
    return with_parameters(expr, p), report


@np.errstate(all="ignore")
def compute_measures(expr: ExprNode, data: Dataset, cfg: ResidualConfig) -> Optional[Measures]:
    """All residual-related measures over every row; ``None`` if invalid."""
    r = residual(expr, data, cfg)
    if r is None:
        return None
    y = data.y
    a = np.abs(r)
    ss_res = float(np.sum(r * r))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0:
        minus_r2 = -(1.0 - ss_res / ss_tot)
    else:
        minus_r2 = -1.0 if ss_res == 0 else 0.0
    keep = np.abs(y) >= RELATIVE_Y_FLOOR
    if keep.any():
        rel = a[keep] / np.abs(y[keep])
        mare, q75, max_are = float(rel.mean()), float(np.percentile(rel, 75)), float(rel.max())
    else:
        mare = q75 = max_are = 0.0
    m = Measures(
        ms_processed_e=ms_processed_e(r, data, cfg),
        mse=float(np.mean(r * r)),
        mae=float(a.mean()),
        max_ae=float(a.max()),
        minus_r2=minus_r2,
        mare=mare,
        q75_are=q75,
        max_are=max_are,
    )
    if not all(math.isfinite(v) for v in m.as_dict().values()):
        return None
    return m
