"""Independent plain-numpy vanilla transformer used as an oracle.

No tape, no D/A terms: just RNN embedding, softmax attention, post-norm blocks,
final LayerNorm, node-mean pooling and the per-node head.
"""

import numpy as np


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def rnn_embed(X, p):
    h = np.zeros(X.shape[:-1] + (p["rnn.w_hh"].shape[0],))
    for t in range(X.shape[-1]):
        h = np.tanh(X[..., t:t + 1] * p["rnn.w_in"][0] + p["rnn.bias"] + h @ p["rnn.w_hh"])
    return h


def vanilla_forward(X, p, n_blocks, n_heads):
    """Returns (forecasts, node_embeddings, pooled) for node windows X (..., N, L)."""
    H = rnn_embed(np.asarray(X, dtype=float), p)
    for b in range(n_blocks):
        pre = f"block{b}"
        outs = []
        for h in range(n_heads):
            q, k, v = (H @ p[f"{pre}.head{h}.{w}"] for w in ("w_q", "w_k", "w_v"))
            outs.append(softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])) @ v)
        H = layer_norm(H + np.concatenate(outs, axis=-1) @ p[f"{pre}.w_o"], p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
        ffn = np.maximum(H @ p[f"{pre}.ffn.w1"] + p[f"{pre}.ffn.b1"], 0) @ p[f"{pre}.ffn.w2"] + p[f"{pre}.ffn.b2"]
        H = layer_norm(H + ffn, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
    emb = layer_norm(H, p["final_ln.gain"], p["final_ln.bias"])
    return emb @ p["head.weight"] + p["head.bias"], emb, emb.mean(axis=-2)
