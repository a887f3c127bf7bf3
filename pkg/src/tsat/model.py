"""Time Series Attention Transformer on dynamic graphs.

Pipeline per graph: a tanh RNN embeds each node's backcast window, ``M``
post-norm blocks mix nodes with graph-augmented multi-head attention, a final
LayerNorm yields node embeddings, node-mean pooling yields the graph
embedding, and a shared affine head maps each node embedding to its
``L_y``-step forecast.

Attention scores per head blend three sources with shared weights ``alpha``::

    alpha[0] * softmax(Q K^T / sqrt(d_k))
      + sum_k alpha[k] * act(D_k)          (edge features, k = 1..K)
      + alpha[K+1] * A                      (adjacency)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError, GraphFileError
from .graph import DynamicGraph

IMF_ACTIVATIONS = ("softmax", "exp", "none")
LN_EPS = 1e-5


@dataclass(frozen=True)
class TsatConfig:
    n_series: int
    backcast: int
    horizon: int
    n_imfs: int = 4
    d_model: int = 16
    d_k: int = 8
    d_v: int = 8
    n_heads: int = 4
    n_blocks: int = 1
    ffn_width: int = 0  # 0 means 4 * d_model
    dropout: float = 0.1
    imf_activation: str = "softmax"
    use_edge: bool = True
    use_adjacency: bool = True
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_series", "backcast", "horizon", "n_imfs", "d_model", "d_k", "d_v", "n_heads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_blocks < 0:
            raise ConfigError("n_blocks must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.imf_activation not in IMF_ACTIVATIONS:
            raise ConfigError(f"imf_activation must be one of {IMF_ACTIVATIONS}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.ffn_width <= 0:
            object.__setattr__(self, "ffn_width", 4 * self.d_model)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def embedding_dim(backcast, n):
    """Width rule ``floor(L_x / 2**n)`` for ``n`` in 1..4."""
    if n not in (1, 2, 3, 4):
        raise ConfigError("n must be one of 1, 2, 3, 4")
    return backcast // 2 ** n


# Hyperparameter search ranges; only a tuner should enforce them.
SEARCH_SPACE = {
    "n_blocks": (1, 2, 4, 8),
    "n_heads": (4, 8, 16),
    "n_imfs": (3, 4, 5),
    "dropout": (0.1, 0.2),
    "imf_activation": IMF_ACTIVATIONS,
}


def parameter_shapes(config: TsatConfig):
    """Ordered ``name -> shape`` map; the init and checkpoint order."""
    d, F = config.d_model, config.ffn_width
    shapes = {
        "rnn.w_in": (1, d),
        "rnn.w_hh": (d, d),
        "rnn.bias": (d,),
        "alpha": (config.n_imfs + 2,),
    }
    for b in range(config.n_blocks):
        p = f"block{b}"
        for h in range(config.n_heads):
            shapes[f"{p}.head{h}.w_q"] = (d, config.d_k)
            shapes[f"{p}.head{h}.w_k"] = (d, config.d_k)
            shapes[f"{p}.head{h}.w_v"] = (d, config.d_v)
        shapes[f"{p}.w_o"] = (config.n_heads * config.d_v, d)
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, F)
        shapes[f"{p}.ffn.b1"] = (F,)
        shapes[f"{p}.ffn.w2"] = (F, d)
        shapes[f"{p}.ffn.b2"] = (d,)
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["head.weight"] = (d, config.horizon)
    shapes["head.bias"] = (config.horizon,)
    return shapes


def parameter_count(config: TsatConfig) -> int:
    return sum(math.prod(s) for s in parameter_shapes(config).values())


class TsatParams:
    """Named trainable tensors in a fixed order."""

    def __init__(self, tensors):
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def n_parameters(self):
        return sum(t.size for t in self.tensors.values())

    def arrays(self):
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def copy(self):
        return TsatParams({k: Tensor(t.data.copy(), requires_grad=True, name=k)
                           for k, t in self.tensors.items()})

    @classmethod
    def from_arrays(cls, arrays):
        return cls({k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)
                    for k, v in arrays.items()})

    def equals(self, other):
        return (list(self.tensors) == list(other.tensors)
                and all(np.array_equal(self[k].data, other[k].data) for k in self.tensors))


def parameter_init(config: TsatConfig, seed=None) -> TsatParams:
    """Glorot-uniform weights, zero biases, unit LayerNorm gains, uniform alpha."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    arrays = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "alpha":
            arrays[name] = np.full(shape, 1.0 / shape[0])
        elif leaf == "gain":
            arrays[name] = np.ones(shape)
        elif len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return TsatParams.from_arrays(arrays)


@dataclass(frozen=True)
class GraphBatch:
    """Model inputs for ``B`` graphs: X (B,N,L_x), D (B,K,N,N), A (B,N,N)."""

    X: np.ndarray
    D: np.ndarray
    A: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx):
        return GraphBatch(self.X[idx], self.D[idx], self.A[idx])

    @classmethod
    def from_graphs(cls, graphs):
        X = np.stack([g.nodes.X for g in graphs])
        D = np.stack([np.moveaxis(g.edges, -1, 0) for g in graphs])
        A = np.stack([g.adjacency for g in graphs])
        return cls(X, D, A)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return GraphBatch(self.X[:, perm], self.D[:, :, perm][:, :, :, perm], self.A[:, perm][:, :, perm])


@dataclass
class ForwardOutput:
    forecasts: Tensor  # (..., N, L_y)
    node_embeddings: Tensor  # (..., N, d)
    graph_embedding: Tensor  # (..., d)


def _as_inputs(graph):
    if isinstance(graph, DynamicGraph):
        return graph.nodes.X, np.moveaxis(graph.edges, -1, 0), graph.adjacency
    if isinstance(graph, GraphBatch):
        return graph.X, graph.D, graph.A
    X, D, A = graph
    return np.asarray(X, dtype=np.float64), np.asarray(D, dtype=np.float64), np.asarray(A, dtype=np.float64)


def _check_shapes(X, D, A, config):
    N, L, K = config.n_series, config.backcast, config.n_imfs
    if X.shape[-2:] != (N, L) or D.shape[-3:] != (K, N, N) or A.shape[-2:] != (N, N):
        raise DimensionError(
            f"graph shapes X{X.shape} D{D.shape} A{A.shape} do not match config (N={N}, L_x={L}, K={K})")


def activate_imf(D, kind):
    """Apply the edge-feature activation to similarity matrices (constants)."""
    if kind == "softmax":
        return ag.softmax_rows(Tensor(D)).data
    if kind == "exp":
        return np.exp(D)
    return np.asarray(D, dtype=np.float64)


def time_embed(X, params):
    """Final hidden state of a shared tanh RNN run over each node's window."""
    X = np.asarray(X, dtype=np.float64)
    w_in, w_hh, b = params["rnn.w_in"], params["rnn.w_hh"], params["rnn.bias"]
    h = None
    for t in range(X.shape[-1]):
        pre = ag.add(ag.matmul(Tensor(X[..., t:t + 1]), w_in), b)
        if h is not None:
            pre = ag.add(pre, ag.matmul(h, w_hh))
        h = ag.tanh(pre)
    return h


def _mixed_scores(H, act_D, A, w_q, w_k, alpha, config):
    K = config.n_imfs
    q = ag.matmul(H, w_q)
    k = ag.matmul(H, w_k)
    logits = ag.mul(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(w_q.shape[1]))
    scores = ag.mul(ag.take(alpha, [0]), ag.softmax_rows(logits))
    if config.use_edge:
        scores = ag.add(scores, ag.einsum2("k,...kij->...ij", ag.take(alpha, np.arange(1, K + 1)), act_D))
    if config.use_adjacency:
        scores = ag.add(scores, ag.mul(ag.take(alpha, [K + 1]), Tensor(A)))
    return scores


def attention_scores(H, D, A, params, config, block=0, head=0):
    """Mixed N x N score matrix of one head."""
    H = ag.as_tensor(H)
    act = activate_imf(np.asarray(D, dtype=np.float64), config.imf_activation)
    p = f"block{block}.head{head}"
    return _mixed_scores(H, act, np.asarray(A, dtype=np.float64), params[f"{p}.w_q"], params[f"{p}.w_k"],
                         params["alpha"], config)


def _mha(H, act_D, A, params, config, block):
    p = f"block{block}"
    heads = []
    for h in range(config.n_heads):
        scores = _mixed_scores(H, act_D, A, params[f"{p}.head{h}.w_q"], params[f"{p}.head{h}.w_k"],
                               params["alpha"], config)
        heads.append(ag.matmul(scores, ag.matmul(H, params[f"{p}.head{h}.w_v"])))
    return ag.matmul(ag.concat(heads, axis=-1), params[f"{p}.w_o"])


def multi_head_attention(H, D, A, params, config, block=0):
    act = activate_imf(np.asarray(D, dtype=np.float64), config.imf_activation)
    return _mha(ag.as_tensor(H), act, np.asarray(A, dtype=np.float64), params, config, block)


def _block(H, act_D, A, params, config, block, training, rng):
    p = f"block{block}"
    Ha = ag.layer_norm(ag.add(H, _mha(H, act_D, A, params, config, block)),
                       params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"], LN_EPS)
    hidden = ag.relu(ag.add(ag.matmul(Ha, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"]))
    ffn = ag.add(ag.matmul(hidden, params[f"{p}.ffn.w2"]), params[f"{p}.ffn.b2"])
    out = ag.layer_norm(ag.add(Ha, ffn), params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"], LN_EPS)
    return ag.dropout(out, config.dropout, rng, training)


def tsat_block(H, D, A, params, config, block=0, training=False, rng=None):
    """One post-norm block: attention + residual + LN, FFN + residual + LN, dropout."""
    act = activate_imf(np.asarray(D, dtype=np.float64), config.imf_activation)
    return _block(ag.as_tensor(H), act, np.asarray(A, dtype=np.float64), params, config, block, training, rng)


def forward(graph, params: TsatParams, config: TsatConfig, training=False, rng=None) -> ForwardOutput:
    """Run the model on a :class:`DynamicGraph`, a :class:`GraphBatch` or an (X, D, A) triple."""
    X, D, A = _as_inputs(graph)
    _check_shapes(X, D, A, config)
    if training and config.dropout > 0 and rng is None:
        raise ConfigError("training-mode forward with dropout needs an rng")
    act_D = activate_imf(D, config.imf_activation)
    H = time_embed(X, params)
    for b in range(config.n_blocks):
        H = _block(H, act_D, A, params, config, b, training, rng)
    emb = ag.layer_norm(H, params["final_ln.gain"], params["final_ln.bias"], LN_EPS)
    pooled = ag.mean(emb, axis=-2)
    head_in = ag.dropout(emb, config.dropout, rng, training)
    forecasts = ag.add(ag.matmul(head_in, params["head.weight"]), params["head.bias"])
    return ForwardOutput(forecasts, emb, pooled)


def predict(graph, params, config):
    return forward(graph, params, config, training=False).forecasts.data


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = "tsat-checkpoint"


def save_checkpoint(path, params: TsatParams, config: TsatConfig, extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": config.to_dict(),
        "tensors": [{"name": k, "shape": list(t.shape), "values": t.data.ravel().tolist()}
                    for k, t in params.items()],
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path, expected_config: TsatConfig | None = None):
    """Returns ``(params, config, extra)``; rejects a config differing from ``expected_config``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise GraphFileError(f"{path}: malformed checkpoint at line {exc.lineno}, column {exc.colno}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise GraphFileError(f"{path}: not a tsat checkpoint")
    config = TsatConfig.from_dict(doc["config"])
    if expected_config is not None and expected_config != config:
        raise ConfigError("checkpoint config does not match the requested model config")
    expected = parameter_shapes(config)
    arrays = {}
    for entry in doc["tensors"]:
        shape = tuple(entry["shape"])
        values = np.array(entry["values"], dtype=np.float64)
        if expected.get(entry["name"]) != shape or values.size != math.prod(shape):
            raise GraphFileError(f"{path}: tensor {entry['name']} does not match its declared shape")
        arrays[entry["name"]] = values.reshape(shape)
    if list(arrays) != list(expected):
        raise GraphFileError(f"{path}: tensor set does not match the config")
    return TsatParams.from_arrays(arrays), config, doc.get("extra", {})


def variant_config(config: TsatConfig, variant: str) -> TsatConfig:
    """Flag settings of the ablation variants."""
    flags = VARIANT_FLAGS[variant]
    return replace(config, use_edge=flags[0], use_adjacency=flags[1])


VARIANT_FLAGS = {
    "TSAT w/o graph": (False, False),
    "TSAT w/o edge": (False, True),
    "TSAT w/o adj": (True, False),
    "TSAT": (True, True),
}
