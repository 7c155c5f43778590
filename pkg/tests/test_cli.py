import json

import numpy as np
import pytest

from geowalk import cli
from geowalk.pipeline import PredictionSummary, write_predictions

TINY_TRAIN = ["--num-sequences", "400", "--batch-size", "32", "--max-steps", "20",
              "--hidden1", "6", "--hidden2", "4", "--per-test", "8"]
TINY_BENCH = {"n_houses": 150, "num_sequences": 500, "batch_size": 32, "max_steps": 25,
              "hidden1": 6, "hidden2": 4, "per_test": 10}


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    d = tmp_path_factory.mktemp("city")
    (d / "cfg.json").write_text(json.dumps({"n_houses": 120, "seed": 4}))
    assert cli.main(["synth", "--config", str(d / "cfg.json"), "--out", str(d)]) == 0
    return d


def test_synth_outputs(city):
    assert {p.name for p in city.iterdir()} >= {"houses.csv", "features.bin", "truth.json"}
    assert len((city / "houses.csv").read_text().splitlines()) == 121


def test_synth_seed_flag_beats_config(city, tmp_path):
    assert cli.main(["synth", "--config", str(city / "cfg.json"), "--seed", "5", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "truth.json").read_text())["config"]["seed"] == 5
    assert (tmp_path / "houses.csv").read_text() != (city / "houses.csv").read_text()


def test_graph_and_walk(city, tmp_path, capsys):
    code, out, _ = run(capsys, "graph", "--houses", city / "houses.csv", "--out", tmp_path / "graph.json")
    assert code == 0 and out["node_count"] == 120
    meta = json.loads((tmp_path / "graph.json").read_text())
    assert meta["sigma"] == 0.5 and meta["epsilon"] == 5.0 and (tmp_path / "graph.npz").exists()
    code, out, _ = run(capsys, "walk", "--graph", tmp_path / "graph.json", "--count", 50, "--length", 4,
                       "--seed", 3, "--out", tmp_path / "walks.txt")
    lines = (tmp_path / "walks.txt").read_text().splitlines()
    assert code == 0 and len(lines) == 50 and all(len(l.split(",")) == 4 for l in lines)
    assert lines[0].split(",")[0].startswith("h")


def test_train_predict_eval(city, tmp_path, capsys):
    (tmp_path / "train.json").write_text(json.dumps({"max_steps": 7, "lr": 0.01}))
    code, out, _ = run(capsys, "--threads", 2, "train", "--houses", city / "houses.csv",
                       "--features", city / "features.bin", "--config", tmp_path / "train.json",
                       *TINY_TRAIN, "--out", tmp_path / "model.ckpt")
    assert code == 0
    man = json.loads((tmp_path / "model.ckpt" / "manifest.json").read_text())
    # flag > config file > default
    assert man["train_config"]["max_steps"] == 20
    assert man["train_config"]["lr"] == 0.01
    assert man["train_config"]["rho"] == 0.9
    assert out["steps"] == 20 and len(man["test_ids"]) == 24

    code, out, _ = run(capsys, "predict", "--model", tmp_path / "model.ckpt", "--out", tmp_path / "pred.csv")
    assert code == 0 and out["houses"] == 24
    assert (tmp_path / "pred.sequences.csv").exists()

    code, out, _ = run(capsys, "eval", "--predictions", tmp_path / "pred.csv", "--diagnostic-best",
                       "--out", tmp_path / "metrics.json")
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert code == 0 and len(rep["per_group"]) == 3
    assert rep["diagnostic_best"]["mae"] <= rep["mae"]


def test_eval_identity(tmp_path, capsys):
    rows = [PredictionSummary.from_predictions(f"h{i}", 100.0 + i, [100.0 + i] * 3) for i in range(6)]
    write_predictions(tmp_path / "p.csv", rows)
    code, out, _ = run(capsys, "eval", "--predictions", tmp_path / "p.csv", "--out", tmp_path / "m.json")
    assert code == 0 and out == {"mae": 0.0, "mape_percent": 0.0}


def test_lasso(city, tmp_path, capsys):
    code, out, _ = run(capsys, "lasso", "--houses", city / "houses.csv", "--features", city / "features.bin",
                       "--out", tmp_path / "l.json")
    assert code == 0 and out["mape_percent"] > 0
    code, out, _ = run(capsys, "lasso", "--houses", city / "houses.csv", "--features", city / "features.bin",
                       "--lambda", 1e9, "--out", tmp_path / "l.json")
    assert out["n_nonzero"] == 0


def test_bench_deterministic_across_threads(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps(TINY_BENCH))
    for name, threads in (("a", 1), ("b", 3)):
        code, _, _ = run(capsys, "--threads", threads, "bench", "--seed", 2, "--config", tmp_path / "cfg.json",
                         "--out", tmp_path / name)
        assert code == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for f in ("metrics.json", "predictions.csv", "lasso_metrics.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert (a / "model.ckpt" / "params.f64").read_bytes() == (b / "model.ckpt" / "params.f64").read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["seed"] == 2 and man["config"]["n_houses"] == 150
    # replaying the manifest reproduces the run
    code, _, _ = run(capsys, "bench", "--from-manifest", a / "manifest.json", "--out", tmp_path / "c")
    assert code == 0 and (tmp_path / "c" / "metrics.json").read_bytes() == (a / "metrics.json").read_bytes()


@pytest.mark.parametrize("argv,code,kind", [
    (["graph", "--houses", "{d}/missing.csv", "--out", "{d}/g.json"], 4, "StoreError"),
    (["graph", "--houses", "{d}/bad.csv", "--out", "{d}/g.json"], 2, "InvalidInput"),
    (["bench", "--config", "{d}/unknown.json", "--out", "{d}/b"], 2, "InvalidInput"),
    (["train", "--houses", "{d}/bad.csv", "--features", "{d}/bad.csv", "--out", "{d}/m"], 2, "InvalidInput"),
])
def test_errors(tmp_path, capsys, argv, code, kind):
    (tmp_path / "bad.csv").write_text("id,lat,lon,price\nh0,95,0,-1\n")
    (tmp_path / "unknown.json").write_text(json.dumps({"colour": "red"}))
    got, out, err = run(capsys, *[a.format(d=tmp_path) for a in argv])
    assert got == code and out is None
    assert err["exit_code"] == code and err["error"] == kind and err["message"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(city, tmp_path, capsys):
    got, _, err = run(capsys, "train", "--houses", city / "houses.csv", "--features", city / "features.bin",
                      *TINY_TRAIN, "--lr", "1e300", "--out", tmp_path / "m")
    assert got == 3 and err["error"] == "NumericalFailure"
