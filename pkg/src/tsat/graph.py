"""Edge-enhanced dynamic graphs built from one backcast window.

Each row of the window is decomposed into a fixed number ``K`` of IMF slots
plus a residual trend. Edge features are cosine similarities between
same-index IMFs of every pair of series; the adjacency connects two series
when the (uncentered) correlation of their residuals exceeds ``c`` in absolute
value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emd import DEFAULT_MAX_ITER, DEFAULT_SD_THRESHOLD, ImfDecomposition, decompose, pad_to_k
from .errors import DataError, DimensionError, ParameterError

ZERO_NORM = 1e-12
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class NodeMatrix:
    X: np.ndarray  # (N, L_x)
    series_names: tuple
    window_start: int = 0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 8:
            raise DataError(f"node matrix needs N >= 2 rows and L_x >= 8 columns, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("node matrix contains non-finite values")
        names = tuple(self.series_names) if self.series_names is not None else ()
        if not names:
            names = tuple(f"x{i}" for i in range(X.shape[0]))
        if len(names) != X.shape[0]:
            raise DimensionError("series_names length does not match node count")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "series_names", names)


@dataclass(frozen=True, eq=False)
class DynamicGraph:
    nodes: NodeMatrix
    edges: np.ndarray  # (N, N, K)
    adjacency: np.ndarray  # (N, N), 0/1
    threshold: float
    residual_correlations: np.ndarray  # (N, N)
    decompositions: tuple  # per-series ImfDecomposition, padded to K

    @property
    def n_nodes(self):
        return self.nodes.X.shape[0]

    @property
    def backcast(self):
        return self.nodes.X.shape[1]

    @property
    def n_imfs(self):
        return self.edges.shape[2]

    def imf_similarity_matrix(self, k):
        """The N x N similarity matrix of the k-th IMF (0-based)."""
        return self.edges[:, :, k]

    def __eq__(self, other):
        if not isinstance(other, DynamicGraph):
            return NotImplemented
        same = (self.threshold == other.threshold
                and self.nodes.series_names == other.nodes.series_names
                and self.nodes.window_start == other.nodes.window_start
                and np.array_equal(self.nodes.X, other.nodes.X)
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.adjacency, other.adjacency)
                and np.array_equal(self.residual_correlations, other.residual_correlations)
                and len(self.decompositions) == len(other.decompositions))
        if not same:
            return False
        return all(np.array_equal(a.imfs, b.imfs) and np.array_equal(a.residual, b.residual)
                   and tuple(a.sift_iterations) == tuple(b.sift_iterations)
                   for a, b in zip(self.decompositions, other.decompositions))


def _cosine(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.sqrt(np.dot(u, u))
    nv = np.sqrt(np.dot(v, v))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def imf_similarity(f_i, f_j):
    """Cosine similarity of two IMFs; 0 when either is (numerically) zero."""
    return _cosine(f_i, f_j)


def residual_correlation(r_i, r_j):
    """Uncentered correlation of two residual trends."""
    return _cosine(r_i, r_j)


def cosine_matrix(rows):
    """Pairwise cosine similarities of the rows of ``rows`` (M, L).

    Exactly symmetric, with an exact 1 on the diagonal of non-zero rows.
    """
    rows = np.asarray(rows, dtype=np.float64)
    m = rows.shape[0]
    norms = np.sqrt(np.einsum("il,il->i", rows, rows))
    out = np.zeros((m, m))
    live = norms >= ZERO_NORM
    for i in range(m):
        if not live[i]:
            continue
        out[i, i] = 1.0
        for j in range(i + 1, m):
            if live[j]:
                out[i, j] = out[j, i] = min(1.0, max(-1.0, np.dot(rows[i], rows[j]) / (norms[i] * norms[j])))
    return out


def build_adjacency(rho, c=DEFAULT_THRESHOLD):
    """Binary adjacency: ``a_ij = 1`` iff ``|rho_ij| > c``; diagonal forced to 1."""
    if not 0.0 <= c <= 1.0:
        raise ParameterError(f"threshold c must lie in [0, 1], got {c}")
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"rho must be square, got {rho.shape}")
    A = (np.abs(rho) > c).astype(np.float64)
    np.fill_diagonal(A, 1.0)
    return A


def edge_tensor(decompositions):
    """(N, N, K) stack of per-IMF cosine similarity matrices."""
    F = np.stack([d.imfs for d in decompositions])  # (N, K, L)
    return np.stack([cosine_matrix(F[:, k, :]) for k in range(F.shape[1])], axis=-1)


def build_graph(window, K=4, c=DEFAULT_THRESHOLD, sd_threshold=DEFAULT_SD_THRESHOLD,
                max_iter=DEFAULT_MAX_ITER):
    """Decompose every row of ``window`` and assemble the dynamic graph."""
    if not isinstance(window, NodeMatrix):
        window = NodeMatrix(np.asarray(window), None)
    if K < 1:
        raise ParameterError("K must be positive")
    if not 0.0 <= c <= 1.0:
        raise ParameterError(f"threshold c must lie in [0, 1], got {c}")
    decomps = tuple(pad_to_k(decompose(row, K, sd_threshold, max_iter), K) for row in window.X)
    edges = edge_tensor(decomps)
    rho = cosine_matrix(np.stack([d.residual for d in decomps]))
    return DynamicGraph(window, edges, build_adjacency(rho, c), float(c), rho, decomps)


def graph_from_parts(nodes, edges, adjacency, threshold, rho, decompositions):
    """Assemble a graph from stored arrays (used by deserialization)."""
    return DynamicGraph(nodes, np.asarray(edges, dtype=np.float64),
                        np.asarray(adjacency, dtype=np.float64), float(threshold),
                        np.asarray(rho, dtype=np.float64),
                        tuple(d if isinstance(d, ImfDecomposition) else ImfDecomposition(*d)
                              for d in decompositions))
