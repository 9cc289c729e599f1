import json

import numpy as np
import pytest

from volmetrics import storage
from volmetrics.cli import main
from volmetrics.fields import field_from_array


@pytest.fixture()
def wave_config(tmp_path):
    cfg = {"dataset_id": "wav", "method": "waves", "count": 3, "n": 5,
           "resolution": 12, "seed": 11}
    p = tmp_path / "waves.json"
    p.write_text(json.dumps(cfg))
    return p


def test_generate_deterministic(tmp_path, wave_config):
    assert main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "manifest.json").read_bytes()
    b = (tmp_path / "b" / "manifest.json").read_bytes()
    assert a == b


def test_generate_seed_override_changes_data(tmp_path, wave_config):
    main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "a")])
    main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "c"), "--seed", "99"])
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    c = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert a["seed"] != c["seed"]


def test_manifest_replay(tmp_path, wave_config):
    main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "a")])
    assert main([
        "generate", "--config", str(tmp_path / "a" / "manifest.json"),
        "--out", str(tmp_path / "replay"),
    ]) == 0
    for name in ["seq_0000.vsim", "seq_0001.vsim", "seq_0002.vsim"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "replay" / name).read_bytes()


def test_evaluate_csv_rows(tmp_path, wave_config, capsys):
    main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "a")])
    out_csv = tmp_path / "mse.csv"
    code = main(["evaluate", "--metric", "mse", "--dataset", str(tmp_path / "a"),
                 "--out", str(out_csv)])
    assert code == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "metric,dataset,sequence,srcc,flagged"
    assert len(lines) == 1 + 3 + 1  # three sequences + mean row


def test_histogram_command(tmp_path, wave_config):
    main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "a")])
    out_csv = tmp_path / "hist.csv"
    assert main(["histogram", "--dataset", str(tmp_path / "a"), "--out", str(out_csv)]) == 0
    assert out_csv.exists()


def test_calibrate_command(tmp_path):
    cfg = {"dataset_id": "wavc", "method": "waves", "count": 2, "n": 5,
           "resolution": 12, "seed": 3}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "calib.json"
    code = main(["calibrate", "--config", str(p), "--out", str(out), "--samples", "3"])
    assert code == 0
    assert "travel" in json.loads(out.read_text())


def test_train_and_model_evaluate(tmp_path):
    cfg = {"dataset_id": "wavt", "method": "waves", "count": 4, "n": 4,
           "resolution": 8, "seed": 21}
    cfg_p = tmp_path / "gen.json"
    cfg_p.write_text(json.dumps(cfg))
    main(["generate", "--config", str(cfg_p), "--out", str(tmp_path / "data")])
    train_cfg = {
        "train_datasets": [str(tmp_path / "data")],
        "val_datasets": [str(tmp_path / "data")],
        "model": {"scale_count": 2, "block_channels": [4, 6], "dtype": "float32"},
        "training": {"epochs": 1, "slice_size": 0, "seed": 2},
    }
    tp = tmp_path / "train.json"
    tp.write_text(json.dumps(train_cfg))
    assert main(["train", "--config", str(tp), "--out", str(tmp_path / "run")]) == 0
    ckpt = tmp_path / "run" / "checkpoint.vsck"
    assert ckpt.exists()
    assert (tmp_path / "run" / "train_log.csv").exists()
    code = main(["evaluate", "--metric", "model", "--dataset", str(tmp_path / "data"),
                 "--checkpoint", str(ckpt), "--out", str(tmp_path / "m.csv")])
    assert code == 0


def test_train_reproducible(tmp_path):
    cfg = {"dataset_id": "wavr", "method": "waves", "count": 3, "n": 4,
           "resolution": 8, "seed": 5}
    cfg_p = tmp_path / "gen.json"
    cfg_p.write_text(json.dumps(cfg))
    main(["generate", "--config", str(cfg_p), "--out", str(tmp_path / "data")])
    train_cfg = {
        "train_datasets": [str(tmp_path / "data")],
        "val_datasets": [],
        "model": {"scale_count": 2, "block_channels": [4, 6], "dtype": "float32"},
        "training": {"epochs": 1, "slice_size": 0, "seed": 9},
    }
    tp = tmp_path / "t.json"
    tp.write_text(json.dumps(train_cfg))
    main(["--threads", "1", "train", "--config", str(tp), "--out", str(tmp_path / "r1")])
    main(["--threads", "1", "train", "--config", str(tp), "--out", str(tmp_path / "r2")])
    assert (tmp_path / "r1" / "checkpoint.vsck").read_bytes() == (tmp_path / "r2" / "checkpoint.vsck").read_bytes()
    assert (tmp_path / "r1" / "train_log.csv").read_bytes() == (tmp_path / "r2" / "train_log.csv").read_bytes()


def test_casestudy_command(tmp_path):
    rng = np.random.default_rng(1)
    frames = [field_from_array(rng.random((1, 8, 8, 8), dtype=np.float32)) for _ in range(5)]
    stack = tmp_path / "frames.vsim"
    storage.write_sequence_stack(stack, frames)
    out = tmp_path / "cs.csv"
    code = main(["casestudy", "--frames", str(stack), "--metric", "mse", "--out", str(out)])
    assert code == 0
    summary = json.loads((tmp_path / "cs.csv.json").read_text())
    assert -1.0 <= summary["srcc_a"] <= 1.0


def test_invariance_command(tmp_path, wave_config):
    main(["generate", "--config", str(wave_config), "--out", str(tmp_path / "a")])
    out = tmp_path / "rot.csv"
    code = main(["invariance", "--mode", "rotation", "--metric", "mse",
                 "--dataset", str(tmp_path / "a"), "--pairs", "2", "--step", "90",
                 "--out", str(out)])
    assert code == 0
    header = out.read_text().splitlines()[0]
    assert header == "pair,angle,distance,deviation"


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "conv3d" in out and "FAIL" not in out


def test_data_error_exit_code(tmp_path, capsys):
    code = main(["evaluate", "--metric", "model", "--dataset", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "VolmetricsError"


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--metric", "nonsense", "--dataset", "x"])
    assert exc.value.code == 2
