import os

import numpy as np
import pytest

from lrgccf.cli import main
from lrgccf.config import ConfigError, dump_config, parse_config_text, resolve
from lrgccf.seeding import derive_seed


def _synthetic_input(path, users=40, items=30, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for u in range(users):
        block = u % 3
        for i in range(items):
            if rng.random() < (0.6 if i % 3 == block else 0.08):
                lines.append(f"user{u}\titem{i}\t{rng.integers(1, 6)}\t{rng.integers(10**9)}")
    path.write_text("\n".join(lines) + "\n")
    return path


TRAIN_FLAGS = ["--k", "2", "--dim", "8", "--lr", "5", "--epochs", "6", "--batch-size", "128",
               "--eval-every", "2", "--patience", "2"]


@pytest.fixture
def prepared(tmp_path):
    raw = _synthetic_input(tmp_path / "ratings.tsv")
    out = tmp_path / "data"
    assert main(["prepare", "--input", str(raw), "--kcore", "5", "--seed", "7", "--out", str(out)]) == 0
    return out


def test_prepare_outputs(prepared):
    for name in ("meta", "train.txt", "val.txt", "test.txt", "user_map.txt", "item_map.txt", "config.txt"):
        assert (prepared / name).exists()
    meta = dict(line.split("=", 1) for line in (prepared / "meta").read_text().splitlines())
    assert meta["seed"] == "7" and meta["threshold"] == "5"


def test_prepare_deterministic(tmp_path, prepared):
    again = tmp_path / "again"
    cfg = prepared / "config.txt"
    assert main(["prepare", "--config", str(cfg), "--out", str(again)]) == 0
    for name in ("meta", "train.txt", "val.txt", "test.txt", "user_map.txt", "item_map.txt"):
        assert (prepared / name).read_bytes() == (again / name).read_bytes()


def test_prepare_missing_input(tmp_path, capsys):
    assert main(["prepare", "--input", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")]) == 2
    assert "not found" in capsys.readouterr().err


def test_prepare_kcore_wipes_everything(tmp_path):
    raw = _synthetic_input(tmp_path / "r.tsv", users=5, items=5)
    assert main(["prepare", "--input", str(raw), "--kcore", "50", "--out", str(tmp_path / "o")]) == 2


def test_train_evaluate_diagnose(tmp_path, prepared):
    ckpt = tmp_path / "model.ckpt"
    assert main(["train", "--data", str(prepared), "--out", str(ckpt), "--seed", "3"] + TRAIN_FLAGS) == 0
    header = ckpt.read_bytes().split(b"\n", 1)[0].decode()
    assert header.startswith("LRGCCF v1 ") and header.endswith(" 8 2 paper on")
    hist = (tmp_path / "model.ckpt.history.csv").read_text().splitlines()
    assert hist[0] == "epoch,loss,val_hr20,val_ndcg20"
    assert len(hist) >= 2

    ev = tmp_path / "eval.csv"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(prepared), "--out", str(ev)]) == 0
    rows = ev.read_text().splitlines()
    assert rows[0] == "N,hr,ndcg" and [r.split(",")[0] for r in rows[1:]] == ["10", "20", "30", "40", "50"]
    ev_val = tmp_path / "eval_val.csv"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(prepared), "--split", "val",
                 "--topn", "5,10", "--out", str(ev_val)]) == 0
    assert len(ev_val.read_text().splitlines()) == 3

    diag = tmp_path / "diag.csv"
    assert main(["diagnose", "--checkpoint", str(ckpt), "--data", str(prepared), "--k", "4",
                 "--pairs", "500", "--out", str(diag)]) == 0
    lines = diag.read_text().splitlines()
    assert lines[0] == "layer,group,sim_mean,sim_var"
    assert len(lines) == 11
    assert [tuple(l.split(",")[:2]) for l in lines[1:3]] == [("0", "user"), ("0", "item")]


def test_ablation_flags(tmp_path, prepared):
    ckpt = tmp_path / "lgccf.ckpt"
    flags = [f for f in TRAIN_FLAGS]
    flags[1] = "3"
    assert main(["train", "--data", str(prepared), "--out", str(ckpt), "--residual", "off", "--mode", "sqrt"] + flags) == 0
    assert ckpt.read_bytes().split(b"\n", 1)[0].decode().endswith(" 3 sqrt off")
    bpr = tmp_path / "bpr.ckpt"
    flags[1] = "0"
    assert main(["train", "--data", str(prepared), "--out", str(bpr)] + flags) == 0
    assert bpr.read_bytes().split(b"\n", 1)[0].decode().endswith(" 0 paper on")


def test_checkpoint_dataset_mismatch(tmp_path, prepared):
    ckpt = tmp_path / "m.ckpt"
    main(["train", "--data", str(prepared), "--out", str(ckpt)] + TRAIN_FLAGS)
    raw = _synthetic_input(tmp_path / "other.tsv", users=25, items=20, seed=5)
    other = tmp_path / "other"
    assert main(["prepare", "--input", str(raw), "--kcore", "3", "--out", str(other)]) == 0
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(other)]) == 2
    assert main(["evaluate", "--checkpoint", str(tmp_path / "missing"), "--data", str(prepared)]) == 2
    (tmp_path / "corrupt").write_bytes(b"garbage")
    assert main(["diagnose", "--checkpoint", str(tmp_path / "corrupt"), "--data", str(prepared)]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, prepared):
    code = main(["train", "--data", str(prepared), "--out", str(tmp_path / "x"), "--lr", "1e308",
                 "--lambda", "1", "--epochs", "2", "--dim", "4"])
    assert code == 3


def test_sweep_k(tmp_path, prepared):
    out = tmp_path / "sweep.csv"
    args = ["sweep-k", "--data", str(prepared), "--ks", "0,1", "--out", str(out)] + TRAIN_FLAGS[2:]
    assert main(args) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "k,hr20,ndcg20" and [l.split(",")[0] for l in lines[1:]] == ["0", "1"]
    again = tmp_path / "again.csv"
    assert main(["sweep-k", "--config", str(out) + ".config", "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()
    single = tmp_path / "single.csv"
    assert main(args[:3] + ["--ks", "2", "--out", str(single)] + TRAIN_FLAGS[2:]) == 0
    assert len(single.read_text().splitlines()) == 2


def test_graph_stats(tmp_path, prepared, capsys):
    assert main(["graph-stats", "--data", str(prepared)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("# M=") and out[1] == "group,degree,count"


def test_threads_env(tmp_path, prepared, monkeypatch):
    monkeypatch.setenv("LRGCCF_THREADS", "1")
    assert main(["graph-stats", "--data", str(prepared), "--out", str(tmp_path / "s.csv")]) == 0
    monkeypatch.setenv("LRGCCF_THREADS", "many")
    assert main(["graph-stats", "--data", str(prepared)]) == 2


def test_config_precedence(tmp_path, prepared):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nk = 1\ndim = 6\nlambda = 0.5\nbatch-size = 64\nresidual = off\n")
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--config", str(cfg), "--data", str(prepared), "--out", str(ckpt), "--dim", "5",
                 "--epochs", "1"]) == 0
    header = ckpt.read_bytes().split(b"\n", 1)[0].decode().split()
    assert header[4:] == ["5", "1", "paper", "off"]
    resolved = parse_config_text((tmp_path / "m.ckpt.config").read_text())
    assert resolved["reg"] == 0.5 and resolved["batch_size"] == 64 and resolved["dim"] == 5


def test_config_errors(tmp_path, prepared):
    with pytest.raises(ConfigError):
        parse_config_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config_text("k 3\n")
    bad = tmp_path / "bad.cfg"
    bad.write_text("k = three\n")
    assert main(["train", "--config", str(bad), "--data", str(prepared), "--out", str(tmp_path / "m")]) == 2


def test_config_roundtrip():
    cfg = resolve({}, {"k": 4, "residual": "off", "topn": "5,10", "reg": 0.1})
    back = resolve(parse_config_text(dump_config(cfg, "train")))
    assert back == cfg


def test_named_seeds_differ():
    seeds = {derive_seed(7, s) for s in ("data", "init", "sampling", "diagnostics")}
    assert len(seeds) == 4
    assert derive_seed(7, "init") == derive_seed(7, "init")
    with pytest.raises(ValueError):
        derive_seed(7, "other")


def test_pipeline_byte_identical(tmp_path):
    raw = _synthetic_input(tmp_path / "ratings.tsv", seed=2)
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["prepare", "--input", str(raw), "--kcore", "5", "--seed", "1", "--out", str(d / "data")]) == 0
        assert main(["train", "--data", str(d / "data"), "--out", str(d / "m.ckpt"), "--seed", "1"] + TRAIN_FLAGS) == 0
        assert main(["evaluate", "--checkpoint", str(d / "m.ckpt"), "--data", str(d / "data"),
                     "--out", str(d / "eval.csv")]) == 0
        outputs.append([(d / f).read_bytes() for f in ("m.ckpt", "m.ckpt.history.csv", "eval.csv")])
    assert outputs[0] == outputs[1]
