import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsat.data import (GraphDataset, TimeSeriesFrame, build_window_graphs, denormalize, export_archive,
                       export_graph, import_archive, import_graph, load_csv, make_windows,
                       normalization_stats, prepare_splits, split_sequential, synth_coupled_sinusoids,
                       window_count, write_csv, write_manifest, znormalize)
from tsat.errors import DataError, GraphParseError, IntegrityError, ParameterError
from tsat.graph import build_graph


# CSV ingestion

def test_load_numeric_csv(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("a,b\n" + "".join(f"{i},{2 * i}\n" for i in range(5)))
    frame = load_csv(path)
    assert frame.values.shape == (2, 5) and frame.series_names == ("a", "b") and frame.timestamps is None
    np.testing.assert_array_equal(frame.values[1], [0, 2, 4, 6, 8])


def test_load_csv_with_timestamps(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("date,x,y,z\n2020-01-01T00:00,1,2,3\n2020-01-01T01:00,4,5,6\n")
    frame = load_csv(path)
    assert frame.n_series == 3 and frame.timestamps == ("2020-01-01T00:00", "2020-01-01T01:00")


def test_load_csv_bad_cell_location(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,4\n5,abc\n")
    with pytest.raises(DataError) as info:
        load_csv(path)
    assert info.value.location == (3, 2)
    assert "row 3" in str(info.value) and "column 2" in str(info.value)


def test_load_csv_ragged_and_empty(tmp_path):
    (tmp_path / "r.csv").write_text("a,b\n1,2\n3\n")
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(DataError):
        load_csv(tmp_path / "r.csv")
    with pytest.raises(DataError):
        load_csv(tmp_path / "e.csv")
    with pytest.raises(DataError):
        load_csv(tmp_path / "missing.csv")


def test_csv_round_trip(tmp_path):
    frame = synth_coupled_sinusoids(3, 300, seed=2)
    write_csv(frame, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv")
    assert np.array_equal(back.values, frame.values) and back.series_names == frame.series_names


# splits

def test_split_1000():
    s = split_sequential(1000)
    assert (s.train, s.val, s.test) == (range(0, 720), range(720, 800), range(800, 1000))


def test_split_100():
    s = split_sequential(100)
    assert (s.train, s.val, s.test) == (range(0, 72), range(72, 80), range(80, 100))


def test_split_too_short():
    with pytest.raises(DataError):
        split_sequential(10, 16, 4)


@given(st.integers(20, 100_000))
def test_split_disjoint_and_exhaustive(T):
    s = split_sequential(T)
    assert s.train.start == 0 and s.train.stop == s.val.start and s.val.stop == s.test.start and s.test.stop == T


# normalization

def test_znormalize_hand_statistics():
    frame = TimeSeriesFrame(np.array([[0.0, 2.0, 0.0, 2.0, 7.0]]), ("a",))
    out, stats = znormalize(frame, range(0, 4))
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
    np.testing.assert_array_equal(out.values[0], [-1, 1, -1, 1, 6])


def test_znormalize_constant_series_warns():
    frame = TimeSeriesFrame(np.array([[3.0] * 6, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]), ("flat", "ramp"))
    with pytest.warns(RuntimeWarning, match="flat"):
        out, _ = znormalize(frame, range(0, 4))
    assert not out.values[0].any()


def test_normalization_uses_train_range_only():
    rng = np.random.default_rng(0)
    values = rng.standard_normal((2, 100))
    a = normalization_stats(values, range(0, 60))
    values[:, 60:] += 1e3  # tamper with everything outside the train range
    b = normalization_stats(values, range(0, 60))
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)


def test_denormalize_inverts():
    frame = synth_coupled_sinusoids(3, 300, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out, stats = znormalize(frame, range(0, 200))
    np.testing.assert_allclose(denormalize(out.values, stats), frame.values, atol=1e-12)


# windows

def test_window_counts():
    assert len(make_windows(np.zeros((2, 10)), 4, 2)) == 5
    assert len(make_windows(np.zeros((2, 6)), 4, 2)) == 1
    assert len(make_windows(np.zeros((2, 10)), 4, 2, stride=10)) == 1


def test_window_errors():
    with pytest.raises(DataError):
        make_windows(np.zeros((2, 5)), 4, 2)
    with pytest.raises(ParameterError):
        make_windows(np.zeros((2, 10)), 4, 2, stride=0)


@settings(max_examples=200)
@given(st.integers(1, 60), st.integers(1, 10), st.integers(1, 10), st.integers(1, 7))
def test_window_count_formula(span, lx, ly, stride):
    brute = sum(1 for s in range(0, span, stride) if s + lx + ly <= span)
    assert window_count(span, lx, ly, stride) == brute
    if brute:
        w = make_windows(np.arange(2 * span, dtype=float).reshape(2, span), lx, ly, stride, offset=100)
        assert len(w) == brute
        np.testing.assert_array_equal(w.X[:, 0, 0], w.x_starts - 100)
        np.testing.assert_array_equal(w.Y[:, 0, 0], w.x_starts - 100 + lx)


def test_windows_never_leak_across_splits():
    frame = synth_coupled_sinusoids(2, 600, seed=0)
    datasets, _, splits = prepare_splits(frame, 24, 6, stride=5, K=2)
    ranges = splits.as_dict()
    for name, ds in datasets.items():
        lo, hi = ranges[name].start, ranges[name].stop
        assert np.all(ds.x_starts >= lo) and np.all(ds.x_starts + 24 + 6 <= hi)


# synthetic data

def test_synth_identical_without_noise():
    frame = synth_coupled_sinusoids(4, 300, groups=1, noise_std=0.0, phase_spread=0.0)
    assert np.all(frame.values == frame.values[0])


def test_synth_reproducible():
    a, b = synth_coupled_sinusoids(6, 512, seed=9), synth_coupled_sinusoids(6, 512, seed=9)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, synth_coupled_sinusoids(6, 512, seed=10).values)


def test_synth_groups_separate_in_adjacency():
    frame = synth_coupled_sinusoids(6, 512, groups=2, noise_std=0.1, seed=0, slopes=[1.0, -1.0])
    g = build_graph(frame.values, K=4, c=0.5)
    R = np.stack([d.residual for d in g.decompositions])
    n = np.linalg.norm(R, axis=1)
    brute = (np.abs(R @ R.T / np.outer(n, n)) > 0.5).astype(float)
    np.fill_diagonal(brute, 1.0)
    np.testing.assert_array_equal(g.adjacency, brute)
    assert np.all(g.adjacency[:3, :3] == 1) and np.all(g.adjacency[3:, 3:] == 1)


def test_synth_parameter_errors():
    with pytest.raises(ParameterError):
        synth_coupled_sinusoids(1, 512)
    with pytest.raises(ParameterError):
        synth_coupled_sinusoids(4, 512, groups=[[0, 1], [1, 2, 3]])


# graph files

@pytest.fixture(scope="module")
def graphs():
    frame = synth_coupled_sinusoids(3, 300, seed=3)
    w = make_windows(frame.values, 32, 4, stride=40)
    return build_window_graphs(w, K=4, names=frame.series_names)


def test_graph_round_trip(tmp_path, graphs):
    export_graph(graphs[0], tmp_path / "g.json")
    assert import_graph(tmp_path / "g.json") == graphs[0]


def test_archive_round_trip(tmp_path, graphs):
    export_archive(graphs, tmp_path / "g.jsonl")
    assert import_archive(tmp_path / "g.jsonl") == graphs


def test_zero_imf_slots_survive(tmp_path):
    ramp = np.stack([np.linspace(0, 1, 32), np.linspace(1, 3, 32)])
    g = build_graph(ramp, K=4)
    assert g.decompositions[0].imfs.shape == (4, 32) and not g.decompositions[0].imfs.any()
    export_graph(g, tmp_path / "z.json")
    assert import_graph(tmp_path / "z.json") == g


def test_truncated_graph_file(tmp_path, graphs):
    export_graph(graphs[0], tmp_path / "g.json")
    text = (tmp_path / "g.json").read_text()
    (tmp_path / "g.json").write_text(text[: len(text) // 2])
    with pytest.raises(IntegrityError):
        import_graph(tmp_path / "g.json")


def test_truncated_archive(tmp_path, graphs):
    export_archive(graphs, tmp_path / "g.jsonl")
    text = (tmp_path / "g.jsonl").read_text()
    (tmp_path / "g.jsonl").write_text(text[:-10])
    with pytest.raises(IntegrityError):
        import_archive(tmp_path / "g.jsonl")


def test_malformed_graph_file_is_located(tmp_path):
    (tmp_path / "m.json").write_text('{"format": "tsat-graph",\n "X": [1, 2,, 3]}\n')
    with pytest.raises(GraphParseError) as info:
        import_graph(tmp_path / "m.json")
    assert info.value.line == 2


def test_shape_header_mismatch(tmp_path, graphs):
    from tsat.data import graph_to_dict

    doc = graph_to_dict(graphs[0])
    doc["shape"]["K"] = 3
    (tmp_path / "h.json").write_text(json.dumps(doc) + "\n")
    with pytest.raises(IntegrityError):
        import_graph(tmp_path / "h.json")


def test_manifest(tmp_path):
    frame = synth_coupled_sinusoids(2, 600, seed=0)
    datasets, _, _ = prepare_splits(frame, 24, 6, stride=50, K=2)
    assert all(isinstance(d, GraphDataset) for d in datasets.values())

    class W:
        def __init__(self, ds):
            self.x_starts, self.backcast = ds.x_starts, 24

    write_manifest([(k, W(v)) for k, v in datasets.items()], tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "window_id,x_start,y_start,split"
    assert len(lines) - 1 == sum(len(d) for d in datasets.values())
    assert lines[1] == "0,0,24,train"
