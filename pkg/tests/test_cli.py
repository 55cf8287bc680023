import csv
import json

import numpy as np
import pytest

from gsjflow.cli import EXIT_IO, EXIT_OK, EXIT_OVERFLOW, EXIT_USAGE, EXIT_VERIFY, main
from gsjflow.flow import inverse_model_serial
from gsjflow.model_io import load_model, save_model

from .conftest import make_model


@pytest.fixture
def model_path(tmp_path):
    model = make_model(seed=120, channels=4, blocks=3, seq_len=16,
                       weight_scale=[0.05, 0.3, 0.1])
    path = tmp_path / "model.json"
    save_model(model, path)
    return path


def test_gen_model_roundtrips(tmp_path, capsys):
    out = tmp_path / "m.json"
    code = main(["gen-model", "--out", str(out), "--channels", "3",
                 "--blocks", "2", "--seq-len", "8", "--scale", "0.1,0.2",
                 "--seed", "5"])
    assert code == EXIT_OK
    model = load_model(out)
    assert model.config.channels == 3 and len(model.blocks) == 2


def test_gen_model_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["gen-model", "--out", str(out), "--channels", "3",
                     "--blocks", "2", "--seq-len", "8", "--seed", "9"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_metrics_writes_report(model_path, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main(["metrics", str(model_path), "--batch", "4", "--seq-len", "8",
                 "--out", str(out)])
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["blocks"]) == 3
    assert doc["dominance_ratio"] == 3.0


def test_sample_writes_outputs_and_traces(model_path, tmp_path):
    out = tmp_path / "x.npy"
    trace_dir = tmp_path / "traces"
    code = main(["sample", str(model_path), "--strategy", "[1-4-4-6]",
                 "--count", "2", "--seq-len", "16", "--out", str(out),
                 "--trace-dir", str(trace_dir), "--metric-batch", "4"])
    assert code == EXIT_OK
    x = np.load(out)
    assert x.shape == (2, 16, 4)
    files = sorted(trace_dir.glob("*.csv"))
    assert len(files) == 3
    header = files[0].read_text().splitlines()[0]
    assert header == "block,module,iter,distance,residual,wall_ns,su_evals"


def test_sample_serial_strategy(model_path, tmp_path):
    out = tmp_path / "x.npy"
    code = main(["sample", str(model_path), "--strategy", "serial",
                 "--count", "1", "--seq-len", "8", "--out", str(out)])
    assert code == EXIT_OK
    model = load_model(model_path)
    z = np.random.default_rng(0).standard_normal((1, 8, 4))
    assert np.abs(np.load(out) - inverse_model_serial(model, z)).max() <= 1e-12


def test_bench_csv_contract(model_path, tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench", str(model_path), "--strategies", "[1-4-4-6]",
                 "[1-16-1-6]", "--repeats", "2", "--count", "1",
                 "--seq-len", "16", "--out", str(out), "--metric-batch", "4"])
    assert code == EXIT_OK
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["strategy"] == "serial"
    assert float(rows[0]["speedup"]) == 1.0
    assert int(rows[0]["su_evals"]) == 3 * 15
    for row in rows[1:]:
        assert float(row["max_abs_dev"]) <= 1e-2
        assert 0 < int(row["su_evals"]) < int(rows[0]["su_evals"])
        assert float(row["speedup"]) == pytest.approx(
            int(rows[0]["wall_ns"]) / int(row["wall_ns"]))


def test_bench_zero_weight_model_exact(tmp_path):
    model = make_model(seed=121, channels=4, blocks=2, seq_len=8,
                       weight_scale=0.0)
    path = tmp_path / "zero.json"
    save_model(model, path)
    out = tmp_path / "bench.csv"
    code = main(["bench", str(path), "--strategies", "[0-2-2-3]",
                 "--repeats", "1", "--count", "1", "--out", str(out),
                 "--metric-batch", "2"])
    assert code == EXIT_OK
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert int(rows[0]["su_evals"]) == 2 * 7
    assert float(rows[1]["max_abs_dev"]) == 0.0


def test_bench_stack_all_serial_matches(model_path, tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench", str(model_path), "--strategies", "[0/1/2-16-1-1]",
                 "--repeats", "1", "--count", "1", "--seq-len", "16",
                 "--out", str(out), "--metric-batch", "4"])
    assert code == EXIT_OK
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[1]["max_abs_dev"]) <= 1e-9


def test_verify_ok_exit_zero(model_path, capsys):
    assert main(["verify", str(model_path), "--suite", "tensor"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "checks passed" in out


def test_verify_failure_exit_three(tmp_path):
    # enormous couplings overflow the roundtrip checks
    model = make_model(seed=122, channels=4, blocks=1, seq_len=8,
                       weight_scale=900.0)
    path = tmp_path / "hot.json"
    save_model(model, path)
    assert main(["verify", str(path), "--suite", "flow"]) == EXIT_VERIFY


def test_exit_codes_usage_and_io(tmp_path, capsys):
    assert main(["sample", "nope.json", "--strategy", "[bogus"]) in (
        EXIT_USAGE, EXIT_IO)
    # strategy parse error on an existing model
    model = make_model(seed=123, channels=3, blocks=1, seq_len=8)
    path = tmp_path / "m.json"
    save_model(model, path)
    assert main(["sample", str(path), "--strategy", "[bogus"]) == EXIT_USAGE
    # missing model file
    assert main(["sample", str(tmp_path / "missing.json"), "--strategy",
                 "[0-1-1-1]"]) == EXIT_IO
    # malformed model file
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["metrics", str(bad)]) == EXIT_IO
    # bad usage
    assert main(["frobnicate"]) == EXIT_USAGE


def test_exit_code_overflow(tmp_path):
    model = make_model(seed=124, channels=4, blocks=1, seq_len=8,
                       weight_scale=900.0)
    path = tmp_path / "hot.json"
    save_model(model, path)
    code = main(["sample", str(path), "--strategy", "[0-1-3-3]",
                 "--count", "1", "--metric-batch", "2"])
    assert code == EXIT_OVERFLOW


def test_threads_flag_accepted(model_path):
    assert main(["verify", str(model_path), "--suite", "tensor",
                 "--threads", "1"]) == EXIT_OK
