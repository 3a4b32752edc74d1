import json

import numpy as np
import pytest

from einet import cli
from einet.bench import fit_scaling_exponent, run_bench, write_report
from einet.builders import make_family, make_structure
from einet.model import build_model
from einet.modelio import (
    ChecksumError,
    MagicError,
    ShapeError,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    write_pgm,
    write_pgm_grid,
)


def _model(seed=0, d_vars=6, k=3, replicas=2, family=None, data=None):
    rg = make_structure("rat", d_vars=d_vars, depth=2, replicas=replicas, seed=seed)
    return build_model(rg, family or make_family("gaussian"), k=k,
                       seed=seed + 1, data=data)


# ---------------------------------------------------------------- persistence

def test_model_round_trip_bitwise(tmp_path):
    model = _model(seed=1)
    path = tmp_path / "m.einm"
    save_model(path, model)
    again = load_model(path)
    x = np.random.default_rng(0).normal(size=(7, 6))
    a = model.log_likelihood(x)
    b = again.log_likelihood(x)
    assert np.array_equal(a, b)


def test_model_round_trip_categorical(tmp_path):
    fam = make_family("categorical", num_states=4)
    model = _model(seed=2, family=fam)
    path = tmp_path / "m.einm"
    save_model(path, model)
    again = load_model(path)
    x = np.random.default_rng(1).integers(0, 4, size=(5, 6)).astype(float)
    assert np.array_equal(model.log_likelihood(x), again.log_likelihood(x))
    assert again.family.num_states == 4


def test_truncated_file_raises_checksum_error(tmp_path):
    model = _model(seed=3)
    path = tmp_path / "m.einm"
    save_model(path, model)
    raw = path.read_bytes()
    path.write_bytes(raw[:-20])
    with pytest.raises(ChecksumError):
        load_model(path)


def test_corrupted_blob_raises_checksum_error(tmp_path):
    model = _model(seed=4)
    path = tmp_path / "m.einm"
    save_model(path, model)
    raw = bytearray(path.read_bytes())
    raw[-40] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_model(path)


def test_wrong_magic_raises(tmp_path):
    path = tmp_path / "m.einm"
    path.write_bytes(b"NOPE1" + b"\x00" * 64)
    with pytest.raises(MagicError):
        load_model(path)


def test_shape_mismatch_names_tensor(tmp_path):
    model = _model(seed=5)
    path = tmp_path / "m.einm"
    save_model(path, model)
    raw = bytearray(path.read_bytes())
    # rewrite the declared phi shape in the JSON header
    header_len = int.from_bytes(raw[5:9], "little")
    header = json.loads(raw[9:9 + header_len].decode())
    for t in header["tensors"]:
        if t["name"] == "phi":
            t["shape"][0] += 1
    new_header = json.dumps(header).encode()
    blob = bytes(raw[9 + header_len:])
    path.write_bytes(raw[:5] + len(new_header).to_bytes(4, "little")
                     + new_header + blob)
    with pytest.raises(ShapeError, match="phi"):
        load_model(path)


def test_dataset_csv_and_binary_agree(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.normal(size=(10, 4)).astype(np.float32).astype(np.float64)
    csv_path = tmp_path / "d.csv"
    bin_path = tmp_path / "d.eind"
    np.savetxt(csv_path, data, delimiter=",")
    save_dataset(bin_path, data, dtype="f32")
    a = load_dataset(csv_path)
    b = load_dataset(bin_path)
    assert np.allclose(a, b, atol=1e-7)


def test_dataset_u8_normalized_by_default(tmp_path):
    data = np.array([[0, 51, 255], [102, 153, 204]], dtype=np.float64)
    path = tmp_path / "d.eind"
    save_dataset(path, data, dtype="u8")
    out = load_dataset(path)
    assert np.allclose(out, data / 255.0)
    raw = load_dataset(path, normalize=False)
    assert np.array_equal(raw, data)


def test_pgm_output(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5")
    assert raw.endswith(bytes(range(12)))
    grid_path = tmp_path / "grid.pgm"
    write_pgm_grid(grid_path, np.stack([img, img]), cols=2)
    assert grid_path.read_bytes().startswith(b"P5")


def test_many_models_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    for i in range(5):
        model = _model(seed=100 + i, d_vars=4, k=2)
        path = tmp_path / f"m{i}.einm"
        save_model(path, model)
        again = load_model(path)
        x = rng.normal(size=(3, 4))
        assert np.array_equal(model.log_likelihood(x), again.log_likelihood(x))


# ------------------------------------------------------------------ benchmark

def test_bench_report_rows(tmp_path):
    rows = run_bench(k_list=[2, 3], batch=8, d_vars=8, seed=0,
                     oracle_samples=2)
    assert len(rows) == 4  # two configs, two engines
    path = tmp_path / "bench.csv"
    write_report(path, rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("engine,")
    assert len(lines) == 5


def test_scaling_exponent_fit():
    k = np.array([4, 8, 16, 32])
    times = 0.01 * k.astype(float) ** 3
    assert abs(fit_scaling_exponent(k, times) - 3.0) < 1e-6


# ------------------------------------------------------------------------ CLI

@pytest.fixture
def trained_model(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(0.5, 0.1, size=(60, 16))
    data_path = tmp_path / "train.csv"
    np.savetxt(data_path, data, delimiter=",")
    model_path = tmp_path / "m.einm"
    rc = cli.main([
        "train", "--structure", "pd", "--height", "4", "--width", "4",
        "--delta", "2", "--k", "2", "--data", str(data_path),
        "--mode", "full", "--epochs", "2", "--seed", "3",
        "--output", str(model_path),
    ])
    assert rc == 0
    return data_path, model_path


def test_cli_train_eval_metrics(tmp_path, capsys):
    rng = np.random.default_rng(1)
    data = rng.normal(size=(40, 8))
    data_path = tmp_path / "d.csv"
    np.savetxt(data_path, data, delimiter=",")
    model_path = tmp_path / "m.einm"
    metrics_path = tmp_path / "metrics.csv"
    plan_path = tmp_path / "plan.json"
    rc = cli.main([
        "train", "--structure", "rat", "--depth", "2", "--replica", "2",
        "--k", "3", "--data", str(data_path), "--mode", "stochastic",
        "--lambda", "0.5", "--batch", "20", "--epochs", "3", "--seed", "1",
        "--output", str(model_path), "--metrics", str(metrics_path),
        "--dump-plan", str(plan_path),
    ])
    assert rc == 0
    lines = metrics_path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_ll,valid_ll,wall_seconds"
    assert len(lines) == 4
    final_ll = float(lines[-1].split(",")[1])
    plan = json.loads(plan_path.read_text())
    assert plan["layers"][0]["type"] == "leaf"
    capsys.readouterr()
    rc = cli.main(["eval", "--model", str(model_path), "--data", str(data_path)])
    assert rc == 0
    out = capsys.readouterr().out
    printed = float(out.split("mean log-likelihood ")[1].split(" ")[0])
    # eval on the training data reproduces the last recorded train ll
    assert abs(printed - final_ll) < 1e-6


def test_cli_missing_data_is_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--structure", "rat"])
    assert e.value.code == 2


def test_cli_unreadable_file_is_runtime_error(tmp_path, capsys):
    rc = cli.main(["train", "--data", str(tmp_path / "missing.csv")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_config_precedence(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.normal(size=(30, 8))
    data_path = tmp_path / "d.csv"
    np.savetxt(data_path, data, delimiter=",")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"epochs": 2, "k": 5, "replica": 2}))
    metrics_path = tmp_path / "metrics.csv"
    rc = cli.main([
        "train", "--data", str(data_path), "--config", str(cfg_path),
        "--epochs", "1", "--output", str(tmp_path / "m.einm"),
        "--metrics", str(metrics_path),
    ])
    assert rc == 0
    # the flag beats the config file
    assert len(metrics_path.read_text().strip().splitlines()) == 2
    model = load_model(tmp_path / "m.einm")
    assert model.circuit.k == 5  # config beats the default


def test_cli_config_rejects_unknown_keys(tmp_path, capsys):
    data_path = tmp_path / "d.csv"
    np.savetxt(data_path, np.zeros((4, 8)), delimiter=",")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"learning_rate": 0.1}))
    rc = cli.main(["train", "--data", str(data_path), "--config", str(cfg_path)])
    assert rc == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_cli_sample_deterministic(trained_model, tmp_path):
    _, model_path = trained_model
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        rc = cli.main(["sample", "--model", str(model_path), "--n", "16",
                       "--seed", "1", "--output", str(out)])
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_cli_sample_pgm(trained_model, tmp_path):
    _, model_path = trained_model
    out = tmp_path / "s.pgm"
    rc = cli.main(["sample", "--model", str(model_path), "--n", "4",
                   "--seed", "2", "--format", "pgm", "--output", str(out)])
    assert rc == 0
    assert out.read_bytes().startswith(b"P5")


def test_cli_inpaint_copies_observed_half(trained_model, tmp_path):
    data_path, model_path = trained_model
    out = tmp_path / "inp.csv"
    rc = cli.main(["inpaint", "--model", str(model_path),
                   "--data", str(data_path), "--cover", "left-half",
                   "--output", str(out)])
    assert rc == 0
    inp = np.loadtxt(out, delimiter=",")
    data = np.loadtxt(data_path, delimiter=",")
    observed = (np.arange(16) % 4) >= 2  # right half of each 4-pixel row
    assert np.array_equal(inp[:, observed], data[:, observed])
    assert not np.array_equal(inp[:, ~observed], data[:, ~observed])


def test_cli_inpaint_shape_mismatch(trained_model, tmp_path, capsys):
    _, model_path = trained_model
    bad = tmp_path / "bad.csv"
    np.savetxt(bad, np.zeros((3, 9)), delimiter=",")
    rc = cli.main(["inpaint", "--model", str(model_path), "--data", str(bad),
                   "--cover", "left-half", "--output", str(tmp_path / "o.csv")])
    assert rc == 1


def test_cli_oracle_check(capsys):
    rc = cli.main(["oracle-check", "--fixtures", "5", "--seed", "1"])
    assert rc == 0
    assert "5 fixtures" in capsys.readouterr().out


def test_cli_bench(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = cli.main(["bench", "--k-list", "2", "--batch", "4", "--n-vars", "8",
                   "--output", str(out), "--no-oracle"])
    assert rc == 0
    assert out.exists()
