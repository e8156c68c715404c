import subprocess
import sys

import numpy as np
import pytest

from symreg.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_RUNTIME, main
from symreg.io import HOF_COLUMNS, HOF_TABLE, PROGRESS_LOG


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    rng = np.random.default_rng(0)
    X = rng.uniform(0.5, 3, size=(60, 2))
    y = 2.0 * X[:, 0] + X[:, 1]
    lines = ["a,b,y"] + [f"{a},{b},{t}" for (a, b), t in zip(X.tolist(), y.tolist())]
    (tmp_path / "data.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "run.cfg").write_text(
        "data_path = data.csv\n"
        "target_column = y\n"
        "n_islands = 2\n"
        "island_capacity = 8\n"
        "generations = 4\n"
        "output_dir = out\n"
    )
    monkeypatch.chdir(tmp_path)
    return tmp_path


def resolved(capsys, *argv):
    assert main(["validate", "-c", "run.cfg", *argv]) == EXIT_OK
    values = {}
    for line in capsys.readouterr().out.splitlines():
        if " = " in line and not line.startswith("#"):
            key, _, rest = line.partition(" = ")
            values[key] = rest.split("    # ")[0]
    return values


def test_run_writes_reports(workdir, capsys):
    assert main(["run", "-c", "run.cfg", "--quiet"]) == EXIT_OK
    table = workdir / "out" / HOF_TABLE
    assert table.exists()
    assert table.read_text().splitlines()[0] == ",".join(HOF_COLUMNS)
    assert (workdir / "out" / PROGRESS_LOG).exists()
    assert "expressions after 4 generations" in capsys.readouterr().out


def test_progress_goes_to_stderr(workdir, capsys):
    assert main(["run", "-c", "run.cfg", "--report_interval", "2"]) == EXIT_OK
    err = capsys.readouterr().err
    assert "gen 2 |" in err and "gen 4 |" in err
    assert "gen 2 |" in (workdir / "out" / PROGRESS_LOG).read_text()


def test_missing_data_file_exits_2_with_path(workdir, capsys):
    assert main(["run", "-c", "run.cfg", "--data_path", "missing.csv"]) == EXIT_DATA
    assert "missing.csv" in capsys.readouterr().err


def test_bad_config_exits_1(workdir, capsys):
    assert main(["run", "-c", "run.cfg", "--pareto_ratio", "1.5"]) == EXIT_CONFIG
    assert "pareto_ratio" in capsys.readouterr().err


def test_unknown_flag_exits_1_with_suggestion(workdir, capsys):
    assert main(["validate", "-c", "run.cfg", "--max_nodez", "3"]) == EXIT_CONFIG
    assert "max_nodes" in capsys.readouterr().err


def test_missing_config_file_exits_1(workdir, capsys):
    assert main(["validate", "-c", "nope.cfg"]) == EXIT_CONFIG


def test_runtime_failure_exits_3(workdir, capsys, monkeypatch):
    import symreg.cli

    def boom(*args, **kwargs):
        raise RuntimeError("engine failure")

    monkeypatch.setattr(symreg.cli, "run", boom)
    assert main(["run", "-c", "run.cfg", "-q"]) == EXIT_RUNTIME
    assert "engine failure" in capsys.readouterr().err


def test_same_seed_gives_identical_tables(workdir):
    for out in ("r1", "r2"):
        assert main(["run", "-c", "run.cfg", "-q", "--seed", "7", "--threads", "1", "--output_dir", out]) == EXIT_OK
    assert (workdir / "r1" / HOF_TABLE).read_bytes() == (workdir / "r2" / HOF_TABLE).read_bytes()


def test_resume_seeds_from_previous_table(workdir, capsys):
    assert main(["run", "-c", "run.cfg", "-q"]) == EXIT_OK
    table = workdir / "out" / HOF_TABLE
    assert main(["resume", "-c", "run.cfg", "-q", "--from", str(table), "--generations", "0", "--output_dir", "again"]) == EXIT_OK
    first = table.read_text().splitlines()[1:]
    best_before = min(float(r.split(",")[HOF_COLUMNS.index("ms_processed_e")]) for r in first)
    resumed = (workdir / "again" / HOF_TABLE).read_text().splitlines()[1:]
    best_after = min(float(r.split(",")[HOF_COLUMNS.index("ms_processed_e")]) for r in resumed)
    assert best_after <= best_before * (1 + 1e-9)


def test_resume_missing_table_exits_2(workdir, capsys):
    assert main(["resume", "-c", "run.cfg", "-q", "--from", "nowhere.csv"]) == EXIT_DATA


def test_evalexpr_prints_all_measures(workdir, capsys):
    assert main(["evalexpr", "-c", "run.cfg", "--expr", "1.0 * v1 + v2", "--fit"]) == EXIT_OK
    out = dict(line.split(" = ", 1) for line in capsys.readouterr().out.splitlines())
    assert set(out) == set(HOF_COLUMNS)
    assert float(out["mse"]) < 1e-20


def test_evalexpr_without_fit_keeps_parameters(workdir, capsys):
    assert main(["evalexpr", "-c", "run.cfg", "-e", "1.0 * v1 + v2"]) == EXIT_OK
    out = dict(line.split(" = ", 1) for line in capsys.readouterr().out.splitlines())
    assert out["expression"] == "1.0 * v1 + v2"
    assert float(out["mse"]) > 0.1


def test_evalexpr_bad_expression_exits_1(workdir, capsys):
    assert main(["evalexpr", "-c", "run.cfg", "-e", "v1 +"]) == EXIT_CONFIG
    assert "offset 5" in capsys.readouterr().err


def test_evalexpr_invalid_on_data(workdir, capsys):
    assert main(["evalexpr", "-c", "run.cfg", "-e", "log(v1 - 100.0)"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("invalid")


def test_validate_prints_resolved_config(workdir, capsys):
    assert main(["validate", "-c", "run.cfg"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "n_islands = 2" in out and "max_nodes = 30" in out
    assert "# data: 60 rows (48 fit, 12 validation)" in out


def test_config_optional_when_flags_given(workdir, capsys):
    assert main(["validate", "--data_path", "data.csv", "--target_column", "y"]) == EXIT_OK


@pytest.mark.parametrize(
    "key, default, in_file, on_flag",
    [
        ("seed", "0", "5", "9"),
        ("max_nodes", "30", "20", "12"),
        ("pareto_ratio", "0.5", "0.25", "0.75"),
        ("unary_operators", "exp, log, sin, cos", "sin, cos", "exp"),
        ("pre_residual_processing", "none", "exp(u)", "u^2.0"),
        ("fit_fraction", "0.8", "0.9", "0.5"),
        ("target_threshold", "none", "0.01", "1e-06"),
        ("early_stop_patience", "5", "3", "7"),
        ("residual_weighting", "none", "relative", "none"),
        ("forbid_param_in_exponent", "false", "true", "false"),
    ],
)
def test_three_layer_precedence(workdir, capsys, key, default, in_file, on_flag):
    assert resolved(capsys)[key] == default
    with open("run.cfg", "a") as fh:
        fh.write(f"{key} = {in_file}\n")
    assert resolved(capsys)[key] == in_file
    assert resolved(capsys, f"--{key}", on_flag)[key] == on_flag
    assert resolved(capsys, f"--{key.replace('_', '-')}", on_flag)[key] == on_flag


@pytest.mark.parametrize("command", ["run", "resume", "evalexpr", "validate"])
def test_help_exits_zero_without_data(tmp_path, command):
    proc = subprocess.run(
        [sys.executable, "-m", "symreg", command, "--help"],
        cwd=tmp_path,
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "usage:" in proc.stdout
    assert list(tmp_path.iterdir()) == []
