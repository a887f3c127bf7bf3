import csv
import json
from collections import defaultdict

import numpy as np
import pytest

from tsat import cli
from tsat.data import import_archive, load_csv, window_count
from tsat.errors import ContractError

TRAIN_FLAGS = ["--backcast", "16", "--horizon", "4", "--stride", "8", "--n-imfs", "2", "--d-model", "4",
               "--d-k", "2", "--d-v", "2", "--n-heads", "1", "--max-epochs", "2", "--batch-size", "16",
               "--initial-lr", "0.01", "--seed", "3"]


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synth.csv"
    assert cli.main(["synth", "--n-series", "3", "--length", "400", "--groups", "1", "--seed", "1",
                     "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, synth_csv):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data", str(synth_csv), "--output-dir", str(out)] + TRAIN_FLAGS) == 0
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# exit codes

def test_exit_zero_on_success(synth_csv, tmp_path):
    assert cli.main(["decompose", "--input", str(synth_csv), "--out", str(tmp_path / "d.csv")]) == 0


def test_exit_two_on_empty_csv(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("")
    assert cli.main(["decompose", "--input", str(tmp_path / "empty.csv"), "--out", str(tmp_path / "d.csv")]) == 2
    assert "error" in capsys.readouterr().err


def test_exit_two_on_bad_cell(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\nx,3\n")
    assert cli.main(["decompose", "--input", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "d.csv")]) == 2


def test_exit_two_on_bad_config(tmp_path, synth_csv):
    (tmp_path / "c.json").write_text('{"not_a_field": 1}')
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--data", str(synth_csv)]) == 2
    (tmp_path / "broken.json").write_text('{"seed": ')
    assert cli.main(["train", "--config", str(tmp_path / "broken.json"), "--data", str(synth_csv)]) == 2


def test_exit_two_on_missing_data(tmp_path):
    assert cli.main(["train", "--output-dir", str(tmp_path)]) == 2


def test_exit_two_on_bad_flag():
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--backcast", "many"])
    assert info.value.code == 2


def test_exit_one_on_internal_error(monkeypatch, synth_csv, tmp_path):
    def broken(*args, **kwargs):
        raise ContractError("invariant violated")

    monkeypatch.setattr(cli, "decompose", broken)
    assert cli.main(["decompose", "--input", str(synth_csv), "--out", str(tmp_path / "d.csv")]) == 1


# decompose

def test_decompose_components_reconstruct(synth_csv, tmp_path):
    out = tmp_path / "d.csv"
    cli.main(["decompose", "--input", str(synth_csv), "--k-max", "3", "--out", str(out)])
    sums = defaultdict(float)
    for row in read_rows(out):
        sums[(row["series"], int(row["t"]))] += float(row["value"])
    frame = load_csv(synth_csv)
    for i, name in enumerate(frame.series_names):
        rebuilt = np.array([sums[(name, t)] for t in range(frame.length)])
        assert np.max(np.abs(rebuilt - frame.values[i])) <= 1e-10


# build-graph

def test_build_graph_manifest_counts(synth_csv, tmp_path):
    assert cli.main(["build-graph", "--input", str(synth_csv), "--output-dir", str(tmp_path),
                     "--backcast", "16", "--horizon", "4", "--stride", "8", "--n-imfs", "2"]) == 0
    rows = read_rows(tmp_path / "manifest.csv")
    expected = {"train": window_count(288, 16, 4, 8), "val": window_count(32, 16, 4, 8),
                "test": window_count(80, 16, 4, 8)}
    for split, n in expected.items():
        assert sum(r["split"] == split for r in rows) == n
    graphs = import_archive(tmp_path / "graphs.jsonl")
    assert len(graphs) == len(rows)
    assert [g.nodes.window_start for g in graphs] == [int(r["x_start"]) for r in rows]


def test_build_graph_threshold_one_gives_identity(synth_csv, tmp_path):
    cli.main(["build-graph", "--input", str(synth_csv), "--output-dir", str(tmp_path), "--backcast", "16",
              "--horizon", "4", "--stride", "16", "--n-imfs", "2", "--threshold", "1.0"])
    for g in import_archive(tmp_path / "graphs.jsonl"):
        assert np.array_equal(g.adjacency, np.eye(3))


def test_resolved_config_reruns_identically(synth_csv, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "first"))
    cli.main(["build-graph", "--data", str(synth_csv), "--backcast", "16", "--horizon", "4", "--stride", "20"])
    resolved = tmp_path / "first" / "resolved_config.json"
    doc = json.loads(resolved.read_text())
    assert doc["output_dir"] == str(tmp_path / "first") and doc["stride"] == 20 and doc["threshold"] == 0.5
    doc["output_dir"] = str(tmp_path / "second")
    (tmp_path / "again.json").write_text(json.dumps(doc))
    cli.main(["build-graph", "--config", str(tmp_path / "again.json")])
    for name in ("graphs.jsonl", "manifest.csv"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_flags_override_config_file(synth_csv, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"stride": 50, "horizon": 4, "backcast": 16}))
    cli.main(["build-graph", "--config", str(tmp_path / "c.json"), "--data", str(synth_csv), "--stride", "40",
              "--output-dir", str(tmp_path / "o")])
    doc = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
    assert doc["stride"] == 40 and doc["horizon"] == 4


# train / evaluate / embed / ablate

def test_train_outputs(trained):
    for name in ("checkpoint.json", "loss_curve.csv", "metrics.csv", "resolved_config.json"):
        assert (trained / name).exists()
    variants = {r["variant"] for r in read_rows(trained / "metrics.csv")}
    assert variants == {"TSAT", "persistence"}


def test_train_twice_byte_identical(trained, synth_csv, tmp_path):
    assert cli.main(["train", "--data", str(synth_csv), "--output-dir", str(tmp_path)] + TRAIN_FLAGS) == 0
    for name in ("checkpoint.json", "loss_curve.csv", "metrics.csv"):
        assert (trained / name).read_bytes() == (tmp_path / name).read_bytes(), name
    a = json.loads((trained / "resolved_config.json").read_text())
    b = json.loads((tmp_path / "resolved_config.json").read_text())
    a.pop("output_dir"), b.pop("output_dir")
    assert a == b


def test_evaluate_matches_training_metrics(trained, synth_csv, tmp_path):
    assert cli.main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(synth_csv),
                     "--out", str(tmp_path)]) == 0
    train_rows = [r for r in read_rows(trained / "metrics.csv") if r["variant"] == "TSAT"]
    eval_rows = read_rows(tmp_path / "metrics.csv")
    assert [r["rmse"] for r in eval_rows] == [r["rmse"] for r in train_rows]
    forecasts = read_rows(tmp_path / "forecasts.csv")
    assert len(forecasts) == window_count(80, 16, 4, 8) * 3 * 4


def test_evaluate_rejects_wrong_series_count(trained, tmp_path):
    cli.main(["synth", "--n-series", "4", "--length", "400", "--out", str(tmp_path / "four.csv")])
    assert cli.main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"), "--data",
                     str(tmp_path / "four.csv"), "--out", str(tmp_path / "e")]) == 2


def test_embed_row_counts(trained, synth_csv, tmp_path):
    assert cli.main(["embed", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(synth_csv),
                     "--out", str(tmp_path), "--split", "train"]) == 0
    n_windows = window_count(288, 16, 4, 8)
    nodes = read_rows(tmp_path / "node_embeddings.csv")
    pooled = read_rows(tmp_path / "pooled_embeddings.csv")
    assert len(nodes) == n_windows * 3 and len(pooled) == n_windows
    assert len(nodes[0]) == 2 + 4


def test_ablate_labels(synth_csv, tmp_path, capsys):
    assert cli.main(["ablate", "--data", str(synth_csv), "--output-dir", str(tmp_path)] + TRAIN_FLAGS) == 0
    text = (tmp_path / "ablation.txt").read_text()
    rows = [line.rsplit(None, 1)[0].strip() for line in text.splitlines()[1:]]
    assert rows == ["TSAT w/o graph", "TSAT w/o edge", "TSAT w/o adj", "TSAT"]
    assert text == capsys.readouterr().out
