import numpy as np
import pytest
import scipy.sparse as sps

from cli import main
from commands import EXIT_BREAKDOWN, EXIT_CONFIG_ERROR, EXIT_NOT_CONVERGED, EXIT_OK
from commands.compare import DEFAULT_UPDATES, compare_specs, specs_for_updates, table_rows
from commands.run import RunSpec, execute_run
from database import TraceStore
from linalg.market import write_matrix_market
from linalg.sparse import SparseMatrix, laplacian_2d_eigenvalue
from utils.config import load_config
from utils.exceptions import ConfigError


@pytest.fixture
def config():
    return load_config()


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """Run the command line inside tmp_path so the log file lands there."""
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_spec_validation():
    RunSpec(problem="bratu", m=4).validate()
    with pytest.raises(ConfigError):
        RunSpec(problem="bratu", m=None).validate()
    with pytest.raises(ConfigError):
        RunSpec(problem="bratu", m=4, update="bfgs").validate()
    with pytest.raises(ConfigError):
        RunSpec(problem="bratu", m=4, forcing="fixed:3").validate()
    with pytest.raises(ConfigError):
        RunSpec(problem="bratu", m=4, scaling_margin=0.9).validate()


def test_spec_from_mapping_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunSpec.from_mapping({"problem": "bratu", "grid": 4})


def test_spec_labels():
    assert RunSpec(update="lsr1:4").label() == "lsr1:4"
    assert RunSpec(update="lbfgs", kmax=3).label() == "lbfgs:3"
    assert RunSpec(update="none", kmax=3).label() == "none"
    assert RunSpec(problem="phi2", m=9, update="lsr1:2").default_name() == "phi2-m9-ic0-lsr1_2"


def test_execute_small_bratu(config, tmp_path):
    result = execute_run(RunSpec(problem="bratu", m=2), config, str(tmp_path))
    assert result.exit_code == EXIT_OK
    assert result.converged
    assert result.nlit >= 1
    rows = TraceStore(directory=str(tmp_path)).read_rows(result.trace_path)
    assert len(rows) == result.nlit
    assert sum(row["pcg_iters"] for row in rows) == result.totlin


def test_execute_eigenproblem(config, tmp_path):
    result = execute_run(RunSpec(problem="eig", m=10, update="lbfgs:10"), config, str(tmp_path))
    assert result.exit_code == EXIT_OK
    assert result.eigenvalue == pytest.approx(laplacian_2d_eigenvalue(10), rel=1e-8)
    assert result.warmup_lin >= 1
    assert "lambda=" in result.summary()


def test_execute_reports_non_convergence(config, tmp_path):
    result = execute_run(RunSpec(problem="bratu", m=4, nl_max_iters=1), config, str(tmp_path))
    assert result.exit_code == EXIT_NOT_CONVERGED
    assert not result.converged
    assert result.nlit == 1


def test_execute_reports_breakdown(config, tmp_path):
    path = str(tmp_path / "indefinite.mtx")
    write_matrix_market(path, SparseMatrix.from_any(sps.diags([1.0, -1.0]), symmetric=True))
    spec = RunSpec(problem="mm", matrix=path, nonlinearity="linear", precond="identity")
    spec.validate()
    result = execute_run(spec, config, str(tmp_path))
    assert result.exit_code == EXIT_BREAKDOWN
    assert "breakdown_pAp" in result.message
    assert len(TraceStore(directory=str(tmp_path)).read_rows(result.trace_path)) == 1


def test_execute_maps_bad_matrix_to_config_error(config, tmp_path):
    path = tmp_path / "general.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 1.0\n")
    with pytest.raises(ConfigError):
        execute_run(RunSpec(problem="mm", matrix=str(path)), config, str(tmp_path))


def test_specs_for_updates():
    specs = specs_for_updates(RunSpec(problem="bratu", m=4, name="b"), DEFAULT_UPDATES)
    assert len(specs) == 9
    assert [spec.label() for spec in specs] == list(DEFAULT_UPDATES)
    assert specs[5].name == "b-lsr1_1"
    with pytest.raises(ConfigError):
        specs_for_updates(RunSpec(problem="bratu", m=4), ["sr1"])


def test_compare_needs_two_specs(config, tmp_path):
    with pytest.raises(ConfigError):
        compare_specs([RunSpec(problem="bratu", m=4)], config, str(tmp_path))


def test_compare_needs_one_problem(config, tmp_path):
    with pytest.raises(ConfigError):
        compare_specs([RunSpec(problem="bratu", m=4), RunSpec(problem="bratu", m=5)], config, str(tmp_path))


def test_compare_is_deterministic(config, tmp_path):
    spec = RunSpec(problem="phi2", m=5, update="lbfgs:2")
    specs = [spec, spec]
    results = compare_specs(specs, config, str(tmp_path))
    rows = table_rows(specs, results)
    assert (rows[0]["nlit"], rows[0]["totlin"]) == (rows[1]["nlit"], rows[1]["totlin"])
    assert rows[0]["kmax"] == 2


def test_cli_run_smoke(workdir):
    assert main(["run", "bratu", "--m", "2", "--update", "none", "--output", str(workdir / "out")]) == EXIT_OK
    assert (workdir / "out" / "bratu-m2-ic0-none.csv").is_file()
    assert (workdir / "qnprec.log").is_file()


def test_cli_run_rejects_invalid_settings(workdir):
    assert main(["run", "bratu", "--m", "0", "--output", str(workdir)]) == EXIT_CONFIG_ERROR
    assert main(["run", "bratu", "--m", "2", "--update", "bfgs:2", "--output", str(workdir)]) == EXIT_CONFIG_ERROR


def test_cli_run_reads_user_config(workdir):
    user = workdir / "run.json"
    user.write_text('{"problem": "phi2", "m": 3, "update": "lsr1:2", "spd_policy": true, "name": "mine"}')
    assert main(["run", "phi2", "--config", str(user), "--output", str(workdir)]) == EXIT_OK
    assert (workdir / "mine.csv").is_file()


def test_cli_compare(workdir):
    code = main(["compare", "bratu", "--m", "3", "--updates", "none", "lbfgs:2", "--output", str(workdir),
                 "--table", "cmp"])
    assert code == EXIT_OK
    rows = TraceStore(directory=str(workdir)).read_rows(str(workdir / "cmp.csv"))
    assert [row["label"] for row in rows] == ["none", "lbfgs:2"]
    assert (workdir / "cmp.txt").is_file()


def test_cli_lab_interlacing(workdir):
    code = main(["lab", "interlacing", "--n", "10", "--count", "3", "--output", str(workdir)])
    assert code == EXIT_OK
    reports = TraceStore(directory=str(workdir)).read_report(str(workdir / "interlacing-n10.jsonl"))
    assert len(reports) == 3
    assert all(report["holds"] for report in reports)


def test_cli_lab_ic_spectrum(workdir):
    code = main(["lab", "ic-spectrum", "--m", "6", "--drop-tols", "ic0", "1e-2", "--mode", "dense",
                 "--output", str(workdir), "--name", "ic"])
    assert code == EXIT_OK
    reports = TraceStore(directory=str(workdir)).read_report(str(workdir / "ic.jsonl"))
    assert [report["drop_tol"] for report in reports] == [None, 0.01]
    assert all(np.isfinite(report["lambda_max"]) for report in reports)


def test_cli_lab_dense_limit(workdir):
    code = main(["lab", "ic-spectrum", "--m", "50", "--drop-tols", "ic0", "--mode", "dense",
                 "--output", str(workdir)])
    assert code == EXIT_CONFIG_ERROR
