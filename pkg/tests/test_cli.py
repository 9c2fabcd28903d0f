import csv
import json

import numpy as np
import pandas as pd
import pytest

from kneeattn.cli import main
from kneeattn.preprocess import load_corpus

SMALL = ["--n-cy", "4", "--h-size", "2", "--filters", "2", "--kernel", "2", "--n-pool", "1", "--n-nonpool", "0",
         "--epochs", "6", "--patience", "3", "--seeds", "0,1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), (json.loads(err.strip().splitlines()[-1]) if code else None)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--cells", "12", "--traced", "10", "--seed", "7", "--out", str(root / "data")]) == 0
    assert main(["label", "--corpus", str(root / "data/corpus.csv"), "--out", str(root / "data")]) == 0
    return root


def _paths(ws):
    return ["--corpus", ws / "data/corpus.csv", "--labels", ws / "data/labels.csv"]


def test_synth_is_deterministic(workspace, tmp_path, capsys):
    code, summary, _ = run(capsys, "synth", "--cells", "12", "--traced", "10", "--seed", "7", "--out", tmp_path)
    assert code == 0 and summary["cells"] == 12
    assert (tmp_path / "corpus.csv").read_bytes() == (workspace / "data/corpus.csv").read_bytes()
    truth = list(csv.DictReader((tmp_path / "truth.csv").open()))
    assert len(truth) == 12 and {"c_ko", "rest_min"} <= set(truth[0])


def test_train_then_evaluate(workspace, capsys):
    out = workspace / "train"
    code, summary, _ = run(capsys, "train", *_paths(workspace), *SMALL, "--out", out)
    assert code == 0 and np.isfinite(summary["test_rmse_mean"])
    report = json.loads((out / "report.json").read_text())
    assert len(report["runs"]) == 2
    used = json.loads((out / "run_config.json").read_text())
    assert used["n_cy"] == 4 and used["seeds"] == [0, 1] and used["command"] == "train"
    code, summary, _ = run(capsys, "evaluate", "--checkpoint", out / "checkpoints/seed0.json", *_paths(workspace),
                           "--split-seed", "0", "--out", workspace / "eval")
    assert code == 0 and np.isfinite(summary["rmse"])
    ev = json.loads((workspace / "eval/evaluation.json").read_text())
    assert ev["rmse"] == pytest.approx(report["runs"][0]["test_rmse"], rel=1e-12)


def test_stored_config_reexecutes_identically(workspace, capsys):
    first = workspace / "train"
    if not (first / "run_config.json").exists():
        assert main(["train", *map(str, _paths(workspace)), *SMALL, "--out", str(first)]) == 0
    again = workspace / "again"
    code, _, _ = run(capsys, "train", "--config", first / "run_config.json", "--out", again)
    assert code == 0
    for name in ("seed0.json", "seed1.json"):
        assert (again / "checkpoints" / name).read_bytes() == (first / "checkpoints" / name).read_bytes()


def test_flags_override_config(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_cy": 5, "h_size": 2, "epochs": 2, "patience": 1, "seeds": [0], "filters": 2,
                               "kernel": 2, "n_nonpool": 0}))
    code, _, _ = run(capsys, "train", *_paths(workspace), "--config", cfg, "--n-cy", "4", "--out", tmp_path / "o")
    assert code == 0
    used = json.loads((tmp_path / "o/run_config.json").read_text())
    assert used["n_cy"] == 4 and used["epochs"] == 2


def test_grid_from_file(workspace, tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"lr": 1e-2}, {"lr": 3e-2}]))
    code, summary, _ = run(capsys, "train", *_paths(workspace), *SMALL, "--grid", grid, "--out", tmp_path / "g")
    assert code == 0 and summary["grid_best"]["point"]["lr"] in (1e-2, 3e-2)
    assert len(list(csv.DictReader((tmp_path / "g/grid.csv").open()))) == 4


def test_attention_export_and_not_available(workspace, tmp_path, capsys):
    out = workspace / "train"
    if not (out / "checkpoints/seed0.json").exists():
        assert main(["train", *map(str, _paths(workspace)), *SMALL, "--out", str(out)]) == 0
    code, summary, _ = run(capsys, "attention", "--checkpoint", out / "checkpoints/seed0.json",
                           "--corpus", workspace / "data/corpus.csv", "--out", tmp_path / "a")
    assert code == 0 and summary["cells"] == 12
    assert (tmp_path / "a/attention/attention.json").exists()

    code, _, _ = run(capsys, "train", *_paths(workspace), *SMALL, "--arch", "rnn_1dcnn", "--seeds", "0",
                     "--out", tmp_path / "plain")
    assert code == 0
    code, _, err = run(capsys, "attention", "--checkpoint", tmp_path / "plain/checkpoints/seed0.json",
                       "--corpus", workspace / "data/corpus.csv", "--type", "ta", "--out", tmp_path / "b")
    assert code != 0 and err["error"] == "not available"
    assert json.loads((tmp_path / "b/error.json").read_text())["error"] == "not available"


def test_reduce_emits_comparison(workspace, tmp_path, capsys):
    code, summary, _ = run(capsys, "reduce", *_paths(workspace), *SMALL, "--n-cy", "8", "--heads", "2",
                           "--allowed", "4,6,8", "--seeds", "0", "--out", tmp_path)
    assert code == 0
    rec = summary["recommended"]
    assert rec in (4, 6, 8) and "8" in summary["test_rmse"] and str(rec) in summary["test_rmse"]
    rows = list(csv.reader((tmp_path / "reduction.csv").open()))
    assert rows[0][2:] == ["8 cycles", "6 cycles", "4 cycles"]
    assert json.loads((tmp_path / "reduction_plan.json").read_text())["recommended"] == rec


def test_benchmark(workspace, tmp_path, capsys):
    code, _, _ = run(capsys, "benchmark", *_paths(workspace), "--sizes", "3", "--out", tmp_path)
    assert code == 0
    rows = list(csv.reader((tmp_path / "benchmark.csv").open()))
    assert rows[0] == ["dataset", "method", "3 cycles"] and rows[1][0] == "All batches"


def test_convert_round_trip(workspace, tmp_path, capsys):
    df = pd.read_csv(workspace / "data/corpus.csv")
    first = df[df.cell_id == df.cell_id.iloc[0]]
    dump = first.rename(columns={"cell_id": "cell", "t_min": "t", "Qend": "QD"}).drop(columns=["batch"])
    dump.to_csv(tmp_path / "dump.csv", index=False)
    code, summary, _ = run(capsys, "convert", tmp_path / "dump.csv", tmp_path / "cells.csv", "--out", tmp_path)
    assert code == 0 and summary["rows"] == len(dump)
    direct = tmp_path / "direct.csv"
    first.to_csv(direct, index=False)
    a, b = load_corpus(tmp_path / "cells.csv")[0], load_corpus(direct)[0]
    assert a.cell_id == b.cell_id and a.n_cycles == b.n_cycles
    for ca, cb in zip(a.cycles, b.cycles):
        np.testing.assert_array_equal(ca.V, cb.V)

    dump.drop(columns=["Qd"]).to_csv(tmp_path / "bad.csv", index=False)
    code, _, err = run(capsys, "convert", tmp_path / "bad.csv", tmp_path / "x.csv", "--out", tmp_path)
    assert code == 1 and "Qd" in err["message"]


@pytest.mark.parametrize("argv,code,kind", [
    (["train", "--bogus"], 2, "usage"),
    (["train", "--corpus", "/nonexistent/c.csv", "--labels", "/nonexistent/l.csv"], 1, "io"),
    (["label"], 2, "usage"),
])
def test_errors_are_machine_readable(tmp_path, capsys, argv, code, kind):
    got, _, err = run(capsys, *argv, "--out", tmp_path)
    assert got == code and err["error"] == kind and err["message"]


def test_config_errors(workspace, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not_a_key": 1}))
    code, _, err = run(capsys, "train", "--config", cfg, "--out", tmp_path)
    assert code == 1 and err["error"] == "config" and "not_a_key" in err["message"]
    code, _, err = run(capsys, "reduce", *_paths(workspace), "--arch", "rnn_ta_1dcnn", "--out", tmp_path)
    assert code == 1 and err["error"] == "config"
