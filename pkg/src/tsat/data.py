"""Data ingestion, splitting, normalization, windowing and graph files."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .emd import DEFAULT_MAX_ITER, DEFAULT_SD_THRESHOLD, ImfDecomposition
from .errors import DataError, GraphParseError, IntegrityError, ParameterError
from .graph import DynamicGraph, NodeMatrix, build_graph, graph_from_parts
from .model import GraphBatch

logger = logging.getLogger(__name__)

TRAIN_FRACTION = (8, 10)
VAL_FRACTION_OF_TRAIN = (1, 10)


@dataclass(frozen=True)
class TimeSeriesFrame:
    values: np.ndarray  # (N, T)
    series_names: tuple
    timestamps: tuple | None = None

    @property
    def n_series(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]


def _parse_float(cell):
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(path) -> TimeSeriesFrame:
    """Read a header-plus-rows CSV, one column per series.

    A first column whose first data cell is not numeric is taken as
    timestamps. Any other non-numeric cell raises :class:`DataError` located
    at (data row, column), both 1-based.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    has_time = _parse_float(body[0][0]) is None
    first = 1 if has_time else 0
    names = tuple(h.strip() for h in header[first:])
    if not names:
        raise DataError(f"{path}: no series columns")
    values = np.empty((len(names), len(body)))
    stamps = []
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: data row {r} has {len(row)} cells, header has {len(header)}",
                            location=(r, None))
        if has_time:
            stamps.append(row[0].strip())
        for c in range(first, len(row)):
            v = _parse_float(row[c])
            if v is None:
                raise DataError(f"{path}: non-numeric cell {row[c]!r} at data row {r}, column {c + 1}",
                                location=(r, c + 1))
            values[c - first, r - 1] = v
    return TimeSeriesFrame(values, names, tuple(stamps) if has_time else None)


def write_csv(frame: TimeSeriesFrame, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["timestamp"] if frame.timestamps else []) + list(frame.series_names))
        for t in range(frame.length):
            lead = [frame.timestamps[t]] if frame.timestamps else []
            w.writerow(lead + [repr(float(v)) for v in frame.values[:, t]])


@dataclass(frozen=True)
class Splits:
    train: range
    val: range
    test: range

    def as_dict(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def split_sequential(frame_or_length, backcast=0, horizon=0) -> Splits:
    """80/20 sequential split; the last 10% of the training span is validation."""
    T = frame_or_length.length if isinstance(frame_or_length, TimeSeriesFrame) else int(frame_or_length)
    if T < backcast + horizon + 10:
        raise DataError(f"series of length {T} too short for L_x + L_y = {backcast + horizon}")
    span = T * TRAIN_FRACTION[0] // TRAIN_FRACTION[1]
    n_val = span * VAL_FRACTION_OF_TRAIN[0] // VAL_FRACTION_OF_TRAIN[1]
    return Splits(range(0, span - n_val), range(span - n_val, span), range(span, T))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def degenerate(self):
        return self.std < 1e-12

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def normalization_stats(values, train_range) -> NormStats:
    train = np.asarray(values)[:, train_range.start:train_range.stop]
    if train.shape[1] == 0:
        raise DataError("empty training range")
    return NormStats(train.mean(axis=1), train.std(axis=1))


def apply_normalization(values, stats: NormStats):
    values = np.asarray(values, dtype=np.float64)
    safe = np.where(stats.degenerate, 1.0, stats.std)
    out = (values - stats.mean[:, None]) / safe[:, None]
    out[stats.degenerate] = 0.0
    return out


def denormalize(values, stats: NormStats):
    """Inverse z-score. ``values`` has series on axis -2 (e.g. (N, T) or (W, N, L_y))."""
    values = np.asarray(values, dtype=np.float64)
    return values * stats.std[:, None] + stats.mean[:, None]


def znormalize(frame: TimeSeriesFrame, train_range):
    """Per-series z-score with statistics from ``train_range`` only.

    Constant series map to zeros with a warning.
    """
    stats = normalization_stats(frame.values, train_range)
    for name in np.asarray(frame.series_names)[stats.degenerate]:
        warnings.warn(f"series {name!r} is constant on the training range; mapped to zeros",
                      RuntimeWarning, stacklevel=2)
    return TimeSeriesFrame(apply_normalization(frame.values, stats), frame.series_names,
                           frame.timestamps), stats


@dataclass(frozen=True)
class WindowDataset:
    X: np.ndarray  # (W, N, L_x)
    Y: np.ndarray  # (W, N, L_y)
    x_starts: np.ndarray  # absolute step index of each window's first backcast sample
    backcast: int
    horizon: int
    stride: int
    split: str = "train"

    def __len__(self):
        return self.X.shape[0]

    @property
    def y_starts(self):
        return self.x_starts + self.backcast


def window_count(span, backcast, horizon, stride=1):
    if span < backcast + horizon:
        return 0
    return (span - backcast - horizon) // stride + 1


def make_windows(values, backcast, horizon, stride=1, offset=0, split="train") -> WindowDataset:
    """Sliding (backcast, forecast) pairs over ``values`` (N, span)."""
    values = np.asarray(values, dtype=np.float64)
    if backcast < 1 or horizon < 1 or stride < 1:
        raise ParameterError("backcast, horizon and stride must be >= 1")
    n = window_count(values.shape[1], backcast, horizon, stride)
    if n == 0:
        raise DataError(f"span {values.shape[1]} shorter than L_x + L_y = {backcast + horizon}")
    starts = np.arange(n) * stride
    X = np.stack([values[:, s:s + backcast] for s in starts])
    Y = np.stack([values[:, s + backcast:s + backcast + horizon] for s in starts])
    return WindowDataset(X, Y, starts + offset, backcast, horizon, stride, split)


def synth_coupled_sinusoids(n_series, length, groups=2, noise_std=0.1, seed=0, slopes=None,
                            periods=None, coupling=0.3, lag=3, phase_spread=2 * np.pi) -> TimeSeriesFrame:
    """Grouped sinusoids with shared group trends and lagged intra-group leakage.

    ``groups`` is either a group count (contiguous, near-equal partition) or an
    explicit partition of ``range(n_series)``. Series ``i`` in group ``g`` is::

        slope_g * t / T + sin(w_g t + phase_i)
          + coupling * mean_{j in g, j != i} sin(w_g (t - lag) + phase_j) + noise
    """
    if n_series < 2 or length < 256:
        raise ParameterError("need n_series >= 2 and length >= 256")
    if isinstance(groups, int):
        if not 1 <= groups <= n_series:
            raise ParameterError("group count must lie in [1, n_series]")
        groups = [list(a) for a in np.array_split(np.arange(n_series), groups)]
    members = sorted(i for g in groups for i in g)
    if members != list(range(n_series)) or any(len(g) == 0 for g in groups):
        raise ParameterError("groups must partition range(n_series)")
    G = len(groups)
    if slopes is None:
        slopes = [(1.0 if g % 2 == 0 else -1.0) * (1 + g // 2) for g in range(G)]
    if periods is None:
        periods = [24.0 * (1.0 + 0.5 * g) for g in range(G)]
    if len(slopes) != G or len(periods) != G:
        raise ParameterError("slopes and periods need one entry per group")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, phase_spread, size=n_series) if phase_spread > 0 else np.zeros(n_series)
    t = np.arange(length, dtype=np.float64)
    values = np.zeros((n_series, length))
    for g, members in enumerate(groups):
        w = 2 * np.pi / periods[g]
        for i in members:
            peers = [j for j in members if j != i]
            x = slopes[g] * t / length + np.sin(w * t + phases[i])
            if peers:
                x = x + coupling * np.mean([np.sin(w * (t - lag) + phases[j]) for j in peers], axis=0)
            values[i] = x
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=values.shape)
    return TimeSeriesFrame(values, tuple(f"s{i}" for i in range(n_series)))


# --- graphs over windows ------------------------------------------------------

@dataclass(frozen=True)
class GraphDataset:
    """Windows with their graphs in model-ready arrays."""

    batch: GraphBatch
    Y: np.ndarray
    x_starts: np.ndarray
    split: str = "train"

    def __len__(self):
        return self.Y.shape[0]


def build_window_graphs(windows: WindowDataset, K=4, c=0.5, names=None,
                        sd_threshold=DEFAULT_SD_THRESHOLD, max_iter=DEFAULT_MAX_ITER):
    return [build_graph(NodeMatrix(X, names, int(s)), K, c, sd_threshold, max_iter)
            for X, s in zip(windows.X, windows.x_starts)]


def graph_dataset(windows: WindowDataset, K=4, c=0.5, names=None, sd_threshold=DEFAULT_SD_THRESHOLD,
                  max_iter=DEFAULT_MAX_ITER) -> GraphDataset:
    graphs = build_window_graphs(windows, K, c, names, sd_threshold, max_iter)
    return GraphDataset(GraphBatch.from_graphs(graphs), windows.Y, windows.x_starts, windows.split)


def prepare_splits(frame: TimeSeriesFrame, backcast, horizon, stride=1, K=4, c=0.5,
                   sd_threshold=DEFAULT_SD_THRESHOLD, max_iter=DEFAULT_MAX_ITER, stats=None):
    """Normalize with train statistics, window each split separately, build graphs.

    Returns ``(datasets, stats, splits)`` with ``datasets`` keyed by split name.
    """
    splits = split_sequential(frame, backcast, horizon)
    if stats is None:
        stats = normalization_stats(frame.values, splits.train)
    values = apply_normalization(frame.values, stats)
    out = {}
    for name, rng_ in splits.as_dict().items():
        w = make_windows(values[:, rng_.start:rng_.stop], backcast, horizon, stride, rng_.start, name)
        out[name] = graph_dataset(w, K, c, frame.series_names, sd_threshold, max_iter)
    return out, stats, splits


# --- graph serialization -------------------------------------------------------

GRAPH_FORMAT = "tsat-graph"


def graph_to_dict(g: DynamicGraph):
    return {
        "format": GRAPH_FORMAT,
        "version": 1,
        "shape": {"N": g.n_nodes, "L_x": g.backcast, "K": g.n_imfs, "c": g.threshold},
        "series_names": list(g.nodes.series_names),
        "window_start": int(g.nodes.window_start),
        "X": g.nodes.X.tolist(),
        "E": g.edges.tolist(),
        "A": g.adjacency.tolist(),
        "rho": g.residual_correlations.tolist(),
        "decompositions": [{"imfs": d.imfs.tolist(), "residual": d.residual.tolist(),
                            "sift_iterations": list(d.sift_iterations)} for d in g.decompositions],
    }


def _expect(arr, shape, what):
    if arr.shape != shape:
        raise IntegrityError(f"{what} has shape {arr.shape}, header says {shape}")
    return arr


def graph_from_dict(doc) -> DynamicGraph:
    if not isinstance(doc, dict) or doc.get("format") != GRAPH_FORMAT:
        raise IntegrityError("not a tsat graph document")
    try:
        hdr = doc["shape"]
        N, L, K, c = int(hdr["N"]), int(hdr["L_x"]), int(hdr["K"]), float(hdr["c"])
        X = _expect(np.array(doc["X"], dtype=np.float64), (N, L), "X")
        E = _expect(np.array(doc["E"], dtype=np.float64), (N, N, K), "E")
        A = _expect(np.array(doc["A"], dtype=np.float64), (N, N), "A")
        rho = _expect(np.array(doc["rho"], dtype=np.float64), (N, N), "rho")
        if len(doc["decompositions"]) != N or len(doc["series_names"]) != N:
            raise IntegrityError("per-series payload count differs from N")
        decomps = []
        for d in doc["decompositions"]:
            imfs = _expect(np.array(d["imfs"], dtype=np.float64), (K, L), "imfs")
            residual = _expect(np.array(d["residual"], dtype=np.float64), (L,), "residual")
            decomps.append(ImfDecomposition(imfs, residual, tuple(int(v) for v in d["sift_iterations"])))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, IntegrityError):
            raise
        raise IntegrityError(f"graph payload inconsistent with header: {exc}") from None
    nodes = NodeMatrix(X, tuple(doc["series_names"]), int(doc["window_start"]))
    return graph_from_parts(nodes, E, A, c, rho, decomps)


def _loads(text, where):
    stripped = text.rstrip()
    if not stripped.endswith("}"):
        raise IntegrityError(f"{where}: truncated graph document")
    try:
        return json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{where}: {exc.msg} at line {exc.lineno}, column {exc.colno}",
                              exc.lineno, exc.colno) from None


def export_graph(g: DynamicGraph, path):
    with open(path, "w") as fh:
        json.dump(graph_to_dict(g), fh)
        fh.write("\n")


def import_graph(path) -> DynamicGraph:
    with open(path) as fh:
        text = fh.read()
    return graph_from_dict(_loads(text, str(path)))


def export_archive(graphs, path):
    """One compact graph document per line."""
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_dict(g), separators=(",", ":")))
            fh.write("\n")


def import_archive(path):
    with open(path) as fh:
        text = fh.read()
    if text and not text.endswith("\n"):
        raise IntegrityError(f"{path}: archive truncated (no final newline)")
    return [graph_from_dict(_loads(line, f"{path}:{i}"))
            for i, line in enumerate(text.splitlines(), start=1) if line.strip()]


def write_manifest(windows_by_split, path):
    """CSV of (window_id, x_start, y_start, split), ids running across splits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_id", "x_start", "y_start", "split"])
        wid = 0
        for split, ds in windows_by_split:
            for xs in ds.x_starts:
                w.writerow([wid, int(xs), int(xs) + ds.backcast, split])
                wid += 1
