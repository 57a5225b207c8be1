import json

import numpy as np
import yaml
import pytest

from tformer_lab.cli import load_config, main
from tformer_lab.layers import ConfigError
from tformer_lab.synthgen import load_dataset, save_dataset

TINY = {
    "task": "event_order", "n": 4, "t_f": 1, "d": 8, "num_event_types": 2,
    "noise_sigma": 0.1, "train_size": 8, "val_size": 4, "test_size": 4,
    "model": "meanpool", "batch_size": 4, "epochs": 2, "iters_per_epoch": 2,
    "warmup_epochs": 1, "seed": 0,
}


def write_cfg(tmp_path, name="cfg.yaml", **over):
    cfg = {**TINY, **over}
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def gen_dataset(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "gen.yaml")
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    capsys.readouterr()
    return tmp_path / "data" / "dataset.tflb"


def test_load_config_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = load_config(path)
    assert cfg["task"] == "planted_event"
    assert cfg["epochs"] == 5
    assert cfg["init_lr"] == 1e-3


def test_load_config_rejections(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")
    path = tmp_path / "bad.yaml"
    path.write_text("frobnicate: 3\n")
    with pytest.raises(ConfigError, match="unknown config keys: frobnicate"):
        load_config(path)
    path.write_text("epochs: five\n")
    with pytest.raises(ConfigError, match="must be an integer"):
        load_config(path)
    path.write_text("epochs: true\n")
    with pytest.raises(ConfigError, match="must be an integer"):
        load_config(path)
    path.write_text("use_timestamps: 1\n")
    with pytest.raises(ConfigError, match="must be a boolean"):
        load_config(path)
    path.write_text("model: gru\n")
    with pytest.raises(ConfigError, match="model must be one of"):
        load_config(path)
    path.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="flat key-value"):
        load_config(path)


def test_gen_writes_dataset_and_checksum(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    line_a = capsys.readouterr().out.strip()
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    line_b = capsys.readouterr().out.strip()
    assert line_a.startswith("dataset ")
    sha_a = line_a.rsplit("sha256=", 1)[1]
    sha_b = line_b.rsplit("sha256=", 1)[1]
    assert sha_a == sha_b and len(sha_a) == 64
    ds = load_dataset(tmp_path / "a" / "dataset.tflb")
    assert ds.spec.n == 4
    assert (tmp_path / "a" / "config_resolved.yaml").exists()


def test_train_eval_round_trip(tmp_path, capsys):
    data = gen_dataset(tmp_path, capsys)
    cfg = write_cfg(tmp_path, "train.yaml", dataset_path=str(data))
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    out = capsys.readouterr().out
    assert "best_val=" in out
    assert (run / "metrics.csv").exists()
    assert (run / "checkpoint_best.tflb").exists()
    assert (run / "checkpoint_latest.tflb").exists()
    resolved = yaml.safe_load((run / "config_resolved.yaml").read_text())
    assert resolved["model"] == "meanpool"

    eval_cfg = write_cfg(tmp_path, "eval.yaml", dataset_path=str(data),
                         checkpoint_path=str(run / "checkpoint_best.tflb"))
    assert main(["eval", "--config", str(eval_cfg), "--out",
                 str(tmp_path / "ev")]) == 0
    line = capsys.readouterr().out.strip()
    accs = json.loads(line)
    assert 0.0 <= accs["overall"] <= 1.0
    assert json.loads((tmp_path / "ev" / "eval.json").read_text()) == accs


def test_eval_out_is_optional(tmp_path, capsys):
    data = gen_dataset(tmp_path, capsys)
    cfg = write_cfg(tmp_path, "train.yaml", dataset_path=str(data))
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    capsys.readouterr()
    eval_cfg = write_cfg(tmp_path, "eval.yaml", dataset_path=str(data),
                         checkpoint_path=str(run / "checkpoint_best.tflb"))
    assert main(["eval", "--config", str(eval_cfg)]) == 0
    json.loads(capsys.readouterr().out)


def test_seed_override_lands_in_echo(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["gen", "--config", str(cfg), "--seed", "7",
                 "--out", str(tmp_path / "a")]) == 0
    capsys.readouterr()
    resolved = yaml.safe_load((tmp_path / "a" / "config_resolved.yaml").read_text())
    assert resolved["seed"] == 7


def test_missing_dataset_path_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, alpha=1)
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "alpha" in err


def test_nan_dataset_exits_3(tmp_path, capsys):
    data = gen_dataset(tmp_path, capsys)
    ds = load_dataset(data)
    ds.splits["train"].frames[:] = np.nan
    poisoned = tmp_path / "poisoned.tflb"
    save_dataset(ds, poisoned)
    cfg = write_cfg(tmp_path, "bad.yaml", dataset_path=str(poisoned))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 3
    assert "runtime abort" in capsys.readouterr().err


def test_ablate_strategy_axis(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TFORMER_LAB_THREADS", "1")
    cfg = write_cfg(tmp_path, model="tformer")
    out_a = tmp_path / "abl_a"
    assert main(["ablate", "--config", str(cfg), "--axis", "strategy",
                 "--out", str(out_a)]) == 0
    capsys.readouterr()
    table = (out_a / "results.csv").read_text().splitlines()
    assert table[0] == "setting,acc_overall,acc_event_order,params_trained"
    settings = [line.split(",")[0] for line in table[1:]]
    assert settings == ["kmeans", "kmedoids", "random", "uniform"]
    assert "seconds" not in table[0]
    log = (out_a / "ablate.log").read_text()
    assert all(f"{s} seconds=" in log for s in settings)

    out_b = tmp_path / "abl_b"
    assert main(["ablate", "--config", str(cfg), "--axis", "strategy",
                 "--out", str(out_b)]) == 0
    capsys.readouterr()
    assert (out_a / "results.csv").read_bytes() == (out_b / "results.csv").read_bytes()


def test_ablate_unknown_axis_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["ablate", "--config", str(cfg), "--axis", "moon",
                 "--out", str(tmp_path / "r")]) == 2
    assert "unknown ablation axis" in capsys.readouterr().err


def test_attnmap_outputs(tmp_path, capsys):
    data = gen_dataset(tmp_path, capsys)
    train_cfg = write_cfg(tmp_path, "train.yaml", model="tformer",
                          dataset_path=str(data), keep_epoch_checkpoints=True)
    run = tmp_path / "run"
    assert main(["train", "--config", str(train_cfg), "--out", str(run)]) == 0
    capsys.readouterr()

    attn_cfg = write_cfg(tmp_path, "attn.yaml", model="tformer",
                         dataset_path=str(data), run_dir=str(run),
                         attn_samples="0,1", attn_epochs="1")
    maps = tmp_path / "maps"
    assert main(["attnmap", "--config", str(attn_cfg), "--out", str(maps)]) == 0
    assert "wrote" in capsys.readouterr().out
    # rows: k*t_f = 1 temporal query plus 3 question tokens; columns: n = 4
    for sid in (0, 1):
        base = maps / f"attn_sample{sid}_epoch1"
        pgm = base.with_suffix(".pgm").read_bytes()
        assert pgm.startswith(b"P5\n4 4\n255\n")
        assert len(pgm) == len(b"P5\n4 4\n255\n") + 16
        rows = base.with_suffix(".csv").read_text().splitlines()
        assert len(rows) == 4 and all(len(r.split(",")) == 4 for r in rows)
        meta = json.loads(base.with_suffix(".json").read_text())
        assert meta == {"sample": sid, "epoch": 1, "min": meta["min"],
                        "max": meta["max"], "rows": 4, "cols": 4}
        for r in rows:
            assert abs(sum(float(v) for v in r.split(",")) - 1.0) < 1e-9

    missing = write_cfg(tmp_path, "attn2.yaml", model="tformer",
                        dataset_path=str(data), run_dir=str(run),
                        attn_samples="0", attn_epochs="9")
    assert main(["attnmap", "--config", str(missing), "--out",
                 str(tmp_path / "m2")]) == 2
    assert "keep_epoch_checkpoints" in capsys.readouterr().err


def test_attnmap_rejects_blind_model(tmp_path, capsys):
    data = gen_dataset(tmp_path, capsys)
    cfg = write_cfg(tmp_path, "attn.yaml", model="blind", dataset_path=str(data),
                    run_dir=str(tmp_path))
    assert main(["attnmap", "--config", str(cfg), "--out",
                 str(tmp_path / "m")]) == 2
    assert "querying model" in capsys.readouterr().err
