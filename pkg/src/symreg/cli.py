"""Command-line entry point: ``symreg {run,resume,evalexpr,validate}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime failure.
Any configuration key can be overridden with ``--<key> VALUE``; flags beat
the config file, which beats the defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .evolution import Individual, instantiate_individual, run, stream
from .exprtree import complexity, n_parameters, recursive_complexity
from .exprtree.text import ParseError, parse
from .fitting import compute_measures
from .io import (
    HOF_COLUMNS,
    KEYS,
    PROGRESS_LOG,
    ConfigError,
    DataError,
    RunConfig,
    apply_values,
    config_reference,
    export_hall_of_fame,
    load_config,
    load_dataset,
    load_hall_of_fame,
    unknown_key_error,
    validate_config,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("symreg")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="flat key = value run configuration")
    p.add_argument("--quiet", "-q", action="store_true", help="no progress log on stderr")
    group = p.add_argument_group("configuration overrides")
    for key in KEYS:
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        group.add_argument(*flags, dest=key, metavar="VALUE", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symreg", description="Symbolic regression with island-model GP.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="evolve expressions and write the hall of fame")
    _add_common(p)
    p = sub.add_parser("resume", help="run again, seeded with a previous hall of fame")
    _add_common(p)
    p.add_argument("--from", dest="resume_from", required=True, help="hall_of_fame.csv (or its directory)")
    p = sub.add_parser("evalexpr", help="measure one expression on the data")
    _add_common(p)
    p.add_argument("--expr", "-e", required=True, help="expression text, e.g. '2.0 * v1 + 1.0'")
    p.add_argument("--fit", action="store_true", help="identify parameters before measuring")
    p = sub.add_parser("validate", help="check config and data, print resolved settings")
    _add_common(p)
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    overrides = {k: getattr(args, k) for k in KEYS if getattr(args, k) is not None}
    if args.config:
        return load_config(args.config, overrides)
    return validate_config(apply_values(RunConfig(), overrides))


def _setup_logging(quiet: bool, output_dir: Optional[Path] = None) -> None:
    log.setLevel(logging.INFO)
    log.handlers.clear()
    log.propagate = False
    fmt = logging.Formatter("%(asctime)s %(message)s")
    if not quiet:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(fmt)
        log.addHandler(h)
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(output_dir / PROGRESS_LOG, mode="w", encoding="utf-8")
        fh.setFormatter(fmt)
        log.addHandler(fh)


def _evolve(cfg: RunConfig, quiet: bool) -> int:
    data = load_dataset(cfg.data_path, cfg)
    opts = replace(cfg.options, n_vars=data.n_vars)
    out = Path(cfg.output_dir)
    _setup_logging(quiet, out)
    (out / "config_resolved.txt").write_text(config_reference(cfg) + "\n", encoding="utf-8")
    hof = run(opts, data, cfg.starting_expressions)
    table, report = export_hall_of_fame(hof, out, data.variable_names)
    for h in list(log.handlers):
        h.close()
    log.handlers.clear()
    print(f"{len(hof)} expressions after {hof.generations} generations -> {table}")
    if not quiet:
        print(report.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    return _evolve(_resolve(args), args.quiet)


def cmd_resume(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    previous = tuple(load_hall_of_fame(args.resume_from))
    cfg = validate_config(replace(cfg, starting_expressions=cfg.starting_expressions + previous))
    return _evolve(cfg, args.quiet)


def cmd_evalexpr(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    try:
        expr = parse(args.expr)
    except ParseError as exc:
        raise ConfigError("expr", str(exc)) from None
    data = load_dataset(cfg.data_path, cfg)
    opts = replace(cfg.options, n_vars=data.n_vars)
    rng = stream(opts.seed, 99)
    if args.fit:
        ind = instantiate_individual(expr, data, opts, 0, rng)
        if ind is None:
            print("invalid: the expression cannot be evaluated (or violates the grammar) on this data")
            return EXIT_OK
    else:
        m = compute_measures(expr, data, opts.residual)
        if m is None:
            print("invalid: the expression cannot be evaluated on this data")
            return EXIT_OK
        ind = Individual(expr, m, complexity(expr), recursive_complexity(expr), n_parameters(expr))
    attrs = ind.attributes()
    print(f"expression = {ind.text}")
    for name in HOF_COLUMNS[1:]:
        print(f"{name} = {attrs[name]}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = load_dataset(cfg.data_path, cfg)
    print(config_reference(cfg))
    names = ", ".join(f"v{i + 1}={n}" for i, n in enumerate(data.variable_names))
    print(f"# data: {data.n_rows} rows ({len(data.fit_rows)} fit, {len(data.validation_rows)} validation); {names}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "resume": cmd_resume, "evalexpr": cmd_evalexpr, "validate": cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args, extra = build_parser().parse_known_args(argv)
    try:
        if extra:
            flag = next((a for a in extra if a.startswith("--")), extra[0])
            raise unknown_key_error(flag.lstrip("-").split("=")[0].replace("-", "_"))
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - any engine failure maps to one exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
