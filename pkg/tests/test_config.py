import json

import numpy as np
import pytest

from database import EIGEN_COLUMNS, NEWTON_COLUMNS, TraceStore
from preconditioners.window import UpdateKind
from services.newton import NewtonConfig, inexact_newton
from services.problems import bratu, initial_guess
from utils.config import (
    DEFAULT_CONFIG_PATH,
    OUTPUT_DIR_ENV,
    default_output_dir,
    load_config,
    merge_run_overrides,
    read_json_file,
)
from utils.exceptions import ConfigError
from utils.validation import (
    parse_update_token,
    validate_nonlinearity,
    validate_positive,
    validate_precond_choice,
    validate_problem,
    validate_tolerance,
    validate_update_token,
)


def test_default_config_has_every_section():
    config = load_config()
    for section in ("pcg", "newton", "eigen", "precond", "lab", "run", "logging"):
        assert section in config
    assert config["run"]["problem"] == "bratu"
    assert DEFAULT_CONFIG_PATH.endswith("config.json")


def test_read_json_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_json_file(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        read_json_file(str(broken))
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        read_json_file(str(listing))


def test_merge_run_overrides_skips_none_and_copies():
    config = {"run": {"m": 31, "update": "none"}, "pcg": {"rel_tol": 1e-6}}
    merged = merge_run_overrides(config, {"m": 4, "update": None})
    assert merged["run"] == {"m": 4, "update": "none"}
    assert config["run"]["m"] == 31


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "traces"))
    assert default_output_dir() == str(tmp_path / "traces")
    monkeypatch.delenv(OUTPUT_DIR_ENV)
    assert default_output_dir() == "runs"


@pytest.mark.parametrize(
    "token, expected",
    [("none", (UpdateKind.NO_UPDATE, None)), ("lsr1:4", (UpdateKind.LSR1_COMPACT, 4)),
     ("LBFGS:2", (UpdateKind.LBFGS_COMPACT, 2)), ("lbfgs-twoloop", (UpdateKind.LBFGS_TWO_LOOP, None))],
)
def test_parse_update_token(token, expected):
    assert parse_update_token(token) == expected


@pytest.mark.parametrize("token", ["", "sr1", "lsr1:0", "lsr1:x"])
def test_validate_update_token_rejects(token):
    is_valid, message = validate_update_token(token)
    assert not is_valid
    assert message


def test_validate_precond_choice():
    assert validate_precond_choice("ict:1e-3") == (True, None)
    assert not validate_precond_choice("ilu")[0]


def test_validate_problem(tmp_path):
    assert validate_problem("bratu", 4, None) == (True, None)
    assert not validate_problem("bratu", None, None)[0]
    assert not validate_problem("heat", 4, None)[0]
    assert not validate_problem("mm", None, None)[0]
    assert not validate_problem("mm", None, str(tmp_path / "missing.mtx"))[0]
    assert validate_problem("eig", 10, None) == (True, None)


def test_validate_numbers():
    assert validate_positive("kmax", None) == (True, None)
    assert validate_positive("kmax", 3, integer=True) == (True, None)
    assert not validate_positive("kmax", 2.5, integer=True)[0]
    assert not validate_positive("kmax", 0, integer=True)[0]
    assert not validate_positive("ratio", True)[0]
    assert validate_tolerance("tol", 1e-6) == (True, None)
    assert not validate_tolerance("tol", 1.0)[0]
    assert validate_nonlinearity(None) == (True, None)
    assert validate_nonlinearity("PHI2") == (True, None)
    assert not validate_nonlinearity("quartic")[0]


def test_newton_trace_round_trip(tmp_path):
    _, trace = inexact_newton(bratu(4), initial_guess(16), NewtonConfig(update_kind="lbfgs"))
    store = TraceStore(directory=str(tmp_path))
    path = store.write_newton_trace("bratu", trace)
    assert path == str(tmp_path / "bratu.csv")
    rows = store.read_rows(path)
    assert list(rows[0]) == NEWTON_COLUMNS
    assert len(rows) == trace.nlit
    for row, record in zip(rows, trace.records):
        assert row["k"] == record.k
        assert row["normF"] == record.residual_norm
        assert row["pcg_iters"] == record.pcg_iters
        assert row["flag"] == record.pcg_flag.value
        assert row["update_reason"] == record.decision.reason.value


def test_eigen_columns_extend_newton_columns():
    assert EIGEN_COLUMNS[:len(NEWTON_COLUMNS)] == NEWTON_COLUMNS
    assert EIGEN_COLUMNS[-1] == "theta"


def test_table_files(tmp_path):
    store = TraceStore(directory=str(tmp_path / "out"))
    rows = [{"label": "none", "nlit": 5, "totlin": 120, "wall_time": np.float64(0.25)},
            {"label": "lsr1:4", "nlit": 5, "totlin": 80, "wall_time": 0.5}]
    csv_path, text_path = store.write_table("compare", ["label", "nlit", "totlin", "wall_time"], rows)
    assert store.read_rows(csv_path) == [
        {"label": "none", "nlit": 5, "totlin": 120, "wall_time": 0.25},
        {"label": "lsr1:4", "nlit": 5, "totlin": 80, "wall_time": 0.5},
    ]
    lines = (tmp_path / "out" / "compare.txt").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].split() == ["label", "nlit", "totlin", "wall_time"]
    assert set(lines[1].replace(" ", "")) == {"-"}
    assert text_path.endswith("compare.txt")


def test_report_round_trip(tmp_path):
    store = TraceStore(directory=str(tmp_path))
    path = store.write_report("lab", [{"holds": True, "z": np.float64(1.5)}, {"reason": UpdateKind.LSR1_COMPACT}])
    assert store.read_report(path) == [{"holds": True, "z": 1.5}, {"reason": "lsr1"}]
    assert json.loads((tmp_path / "lab.jsonl").read_text().splitlines()[0])["z"] == 1.5
