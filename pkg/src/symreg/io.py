"""Data ingestion, flat run configuration, and report export.

A run configuration is a text file of ``key = value`` lines (``#`` starts a
comment). Every field of every config dataclass is a key; see
:func:`config_reference` for the full list with defaults.
"""

from __future__ import annotations

import csv
import difflib
import math
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from .config import (
    MEASURE_NAMES,
    STRUCTURE_NAMES,
    FitOptions,
    Grammar,
    MutationConfig,
    OperatorSet,
    Options,
    ResidualConfig,
    SelectionConfig,
    describe_transform,
)
from .exprtree.text import ParseError, parse
from .fitting import Dataset, split_mask

HOF_COLUMNS = ("expression",) + MEASURE_NAMES + STRUCTURE_NAMES + ("valid",)
HOF_TABLE = "hall_of_fame.csv"
HOF_REPORT = "hall_of_fame.txt"
PROGRESS_LOG = "progress.log"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data_path: str = ""
    target_column: str = ""
    variable_columns: tuple[str, ...] = ()
    weight_column: Optional[str] = None
    delimiter: Optional[str] = None
    fit_fraction: float = 0.8
    starting_expressions: tuple[str, ...] = ()
    output_dir: str = "results"
    options: Options = field(default_factory=Options)


_SECTIONS = {
    "operators": OperatorSet,
    "grammar": Grammar,
    "mutation": MutationConfig,
    "fit": FitOptions,
    "residual": ResidualConfig,
    "selection": SelectionConfig,
}

_DOMAINS = {
    "pareto_ratio": "real in [0,1]",
    "fit_fraction": "real in (0,1]",
    "tournament_size": "integer >= 2",
    "residual_weighting": "none | relative",
    "pre_residual_processing": "expression in u (prediction) and v1..vN, or empty",
    "custom_processing": "expression in u (residual) and v1..vN, or empty",
    "binary_operators": "subset of add, sub, mul, div, pow",
    "unary_operators": "subset of neg, exp, log, sin, cos, abs, sqrt",
    "banned_nestings": "list of outer:inner operator pairs",
    "operator_weights": "list of operator:weight",
    "mutation_weights": "list of mutation:weight",
    "pareto_objectives": "list of " + ", ".join(MEASURE_NAMES + STRUCTURE_NAMES),
    "tournament_objectives": "list of " + ", ".join(MEASURE_NAMES + STRUCTURE_NAMES),
    "target_measure": "one of " + ", ".join(MEASURE_NAMES + STRUCTURE_NAMES),
    "delimiter": "',' or 'tab' (auto-detected when unset)",
}


def _hints(cls) -> dict[str, Any]:
    import symreg.config as config_module

    return typing.get_type_hints(cls, vars(config_module) | globals())


def _build_registry() -> dict[str, tuple[Optional[str], Any]]:
    """Map every flat key to ``(section or None, type hint)``."""
    reg: dict[str, tuple[Optional[str], Any]] = {}
    for f in fields(RunConfig):
        if f.name != "options":
            reg[f.name] = ("run", _hints(RunConfig)[f.name])
    opt_hints = _hints(Options)
    for f in fields(Options):
        if f.name in _SECTIONS:
            hints = _hints(_SECTIONS[f.name])
            for sf in fields(_SECTIONS[f.name]):
                assert sf.name not in reg, sf.name
                reg[sf.name] = (f.name, hints[sf.name])
        elif f.name != "n_vars":
            assert f.name not in reg, f.name
            reg[f.name] = (None, opt_hints[f.name])
    return reg


KEYS = _build_registry()


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _convert(key: str, hint: Any, text: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if text.strip().lower() in ("", "none", "null"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _convert(key, inner, text)
    try:
        if hint is bool:
            value = text.strip().lower()
            if value in ("true", "yes", "1", "on"):
                return True
            if value in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if hint is int:
            return int(text.strip())
        if hint is float:
            return float(text.strip())
        if hint is str:
            return text.strip()
        if origin is tuple:
            items = _split(text)
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_convert(key, args[0], t) for t in items)
            if len(items) != len(args):
                raise ValueError
            return tuple(_convert(key, a, t) for a, t in zip(args, items))
        if origin is dict:
            out = {}
            for item in _split(text):
                name, _, value = item.partition(":")
                out[name.strip()] = float(value)
            return out
        if origin is frozenset:
            pairs = []
            for item in _split(text):
                outer, sep, inner = item.partition(":")
                if not sep:
                    raise ValueError
                pairs.append((outer.strip(), inner.strip()))
            return frozenset(pairs)
    except ValueError:
        raise ConfigError(key, f"cannot read {text.strip()!r} as {_domain(key)}") from None
    return text.strip()


def _domain(key: str) -> str:
    if key in _DOMAINS:
        return _DOMAINS[key]
    hint = KEYS[key][1]
    args = typing.get_args(hint)
    optional = typing.get_origin(hint) is typing.Union and type(None) in args
    if optional:
        hint = [a for a in args if a is not type(None)][0]
    base = {int: "integer", float: "real", bool: "true | false", str: "text"}.get(hint)
    if base is None:
        origin, args = typing.get_origin(hint), typing.get_args(hint)
        if origin is tuple and args and args[-1] is Ellipsis:
            base = "comma-separated list"
        elif origin is tuple:
            base = "comma-separated " + ", ".join({int: "integer", float: "real"}.get(a, "text") for a in args)
        else:
            base = "text"
    return base + (" or none" if optional else "")


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dict):
        return ", ".join(f"{k}:{v}" for k, v in value.items())
    if isinstance(value, frozenset):
        return ", ".join(f"{a}:{b}" for a, b in sorted(value))
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if callable(value):
        return describe_transform(value)
    return str(value)


def get_value(cfg: RunConfig, key: str) -> Any:
    section, _ = KEYS[key]
    if section == "run":
        return getattr(cfg, key)
    if section is None:
        return getattr(cfg.options, key)
    return getattr(getattr(cfg.options, section), key)


def unknown_key_error(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, KEYS, n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(key, f"unknown key{hint}")


def apply_values(cfg: RunConfig, values: dict[str, Any]) -> RunConfig:
    """Return ``cfg`` with flat ``key -> value`` updates (strings are converted)."""
    run_updates: dict[str, Any] = {}
    top_updates: dict[str, Any] = {}
    section_updates: dict[str, dict[str, Any]] = {}
    for key, value in values.items():
        if key not in KEYS:
            raise unknown_key_error(key)
        section, hint = KEYS[key]
        if isinstance(value, str):
            value = _convert(key, hint, value)
        if section == "run":
            run_updates[key] = value
        elif section is None:
            top_updates[key] = value
        else:
            section_updates.setdefault(section, {})[key] = value
    opts = cfg.options
    for section, upd in section_updates.items():
        obj = getattr(opts, section)
        for key, value in upd.items():
            try:
                obj = replace(obj, **{key: value})
            except ValueError as exc:
                msg = str(exc)
                raise ConfigError(key, msg[len(key) + 2 :] if msg.startswith(key + ": ") else msg) from None
        top_updates[section] = obj
    return replace(cfg, options=replace(opts, **top_updates), **run_updates)


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        if key not in KEYS:
            raise unknown_key_error(key)
        if key == "starting_expressions" and key in values:
            values[key] = values[key] + ", " + value.strip()
        elif key in values:
            raise ConfigError(key, f"set twice (line {lineno})")
        else:
            values[key] = value.strip()
    return values


def load_config(path, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Defaults, then the file, then ``overrides``; the result is validated."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    cfg = apply_values(RunConfig(), parse_config_text(text))
    if overrides:
        cfg = apply_values(cfg, overrides)
    return validate_config(cfg)


def validate_config(cfg: RunConfig) -> RunConfig:
    if not cfg.data_path:
        raise ConfigError("data_path", "required (path to a delimiter-separated file)")
    if not cfg.target_column:
        raise ConfigError("target_column", "required (name of the target column)")
    if not 0.0 < cfg.fit_fraction <= 1.0:
        raise ConfigError("fit_fraction", f"{cfg.fit_fraction} outside the range (0,1]")
    if cfg.delimiter not in (None, ",", "tab", "\t", ";"):
        raise ConfigError("delimiter", f"{cfg.delimiter!r} not in {_DOMAINS['delimiter']}")
    for text in cfg.starting_expressions:
        try:
            parse(text)
        except ParseError as exc:
            raise ConfigError("starting_expressions", f"{text!r}: {exc}") from None
    try:
        cfg.options.validate()
    except ValueError as exc:
        key, _, msg = str(exc).partition(": ")
        raise ConfigError(key, msg) from None
    return cfg


def config_reference(cfg: Optional[RunConfig] = None) -> str:
    """Every key with its (resolved) value and accepted domain."""
    cfg = cfg or RunConfig()
    lines = []
    for key in KEYS:
        lines.append(f"{key} = {_format(get_value(cfg, key))}    # {_domain(key)}")
    return "\n".join(lines)


def _delimiter(cfg: RunConfig, header: str) -> str:
    if cfg.delimiter in ("tab", "\t"):
        return "\t"
    if cfg.delimiter:
        return cfg.delimiter
    return "\t" if "\t" in header and "," not in header else ","


def load_dataset(path, cfg: RunConfig) -> Dataset:
    """Read the configured columns; variables become ``v1..vN`` in config order."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc.strerror}") from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataError(f"{path}: missing header row")
    reader = csv.reader(lines, delimiter=_delimiter(cfg, lines[0]))
    header = [h.strip() for h in next(reader)]
    for name in [cfg.target_column, cfg.weight_column, *cfg.variable_columns]:
        if name and name not in header:
            raise DataError(f"{path}: column {name!r} not found; columns are {header}")
    variables = list(cfg.variable_columns) or [
        h for h in header if h not in (cfg.target_column, cfg.weight_column)
    ]
    if not variables:
        raise DataError(f"{path}: no variable columns")
    wanted = variables + [cfg.target_column] + ([cfg.weight_column] if cfg.weight_column else [])
    idx = [header.index(c) for c in wanted]
    rows, errors = [], []
    for n, rec in enumerate(reader, 1):
        if not any(cell.strip() for cell in rec):
            continue
        values = []
        for c, i in zip(wanted, idx):
            cell = rec[i].strip() if i < len(rec) else ""
            try:
                v = float(cell)
            except ValueError:
                errors.append(f"row {n}, column {c!r}: {cell!r} is not numeric" if cell else f"row {n}, column {c!r}: missing value")
                continue
            if not math.isfinite(v):
                errors.append(f"row {n}, column {c!r}: {cell!r} is not finite")
            elif c == cfg.weight_column and v <= 0:
                errors.append(f"row {n}, column {c!r}: weight {cell!r} must be positive")
            values.append(v)
        rows.append(values)
    if errors:
        more = f" (and {len(errors) - 10} more)" if len(errors) > 10 else ""
        raise DataError(f"{path}: " + "; ".join(errors[:10]) + more)
    if not rows:
        raise DataError(f"{path}: no data rows")
    A = np.array(rows, dtype=float)
    k = len(variables)
    weights = A[:, k + 1] if cfg.weight_column else None
    try:
        mask = split_mask(len(A), cfg.fit_fraction, cfg.options.seed)
        return Dataset(A[:, :k], A[:, k], weights, mask, tuple(variables))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _attribute_row(ind) -> list[str]:
    attrs = ind.attributes()
    out = [ind.text]
    for name in HOF_COLUMNS[1:]:
        v = attrs[name]
        out.append(str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v))
    return out


def export_hall_of_fame(hof: Iterable, output_dir, variable_names: Iterable[str] = ()) -> tuple[Path, Path]:
    """Write the table (``hall_of_fame.csv``) and the text listing; return both paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    members = sorted(hof, key=lambda i: (i.compl, i.measures.ms_processed_e, i.text))
    table = out / HOF_TABLE
    with table.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HOF_COLUMNS)
        for ind in members:
            writer.writerow(_attribute_row(ind))
    report = out / HOF_REPORT
    lines = []
    names = list(variable_names)
    if names:
        lines.append("variables: " + ", ".join(f"v{i + 1} = {n}" for i, n in enumerate(names)))
        lines.append("")
    lines.append(f"{'compl':>5}  {'ms_processed_e':>14}  {'mare':>10}  {'minus_r2':>10}  expression")
    for ind in members:
        m = ind.measures
        lines.append(f"{ind.compl:>5}  {m.ms_processed_e:>14.6g}  {m.mare:>10.4g}  {m.minus_r2:>10.6g}  {ind.text}")
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return table, report


def load_hall_of_fame(path) -> list[str]:
    """Expression texts from an exported table, in file order."""
    path = Path(path)
    if path.is_dir():
        path = path / HOF_TABLE
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "expression" not in reader.fieldnames:
                raise DataError(f"{path}: not a hall-of-fame table (no 'expression' column)")
            return [row["expression"] for row in reader]
    except OSError as exc:
        raise DataError(f"cannot read hall-of-fame table {path}: {exc.strerror}") from None
