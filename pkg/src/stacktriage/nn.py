"""Differentiable building blocks for the fixed ranking graphs.

Everything is 64-bit numpy. Each block exposes a forward pass returning
(output, cache) and a matching backward pass mapping upstream gradients and
the cache to input/parameter gradients. There is no general autodiff engine:
the ranker wires these blocks into its fixed computation graphs and calls
the backward passes in reverse order, accumulating into a per-parameter
gradient dict shaped exactly like the parameters.

Forward/score paths are read-only over a ParameterSet and safe to run
concurrently; training (backward + adam_step) mutates state and is
single-threaded by contract.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

KERNEL_WIDTH = 5

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_VERSION = 1


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (via tanh, so no overflow)."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


@dataclass
class ParameterSet:
    """Named parameter tensors plus the seed they were initialized from."""

    tensors: dict[str, np.ndarray]
    rng_seed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grads(self) -> dict[str, np.ndarray]:
        """One gradient slot per parameter, identically shaped."""
        return {name: np.zeros_like(t) for name, t in self.tensors.items()}

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.tensors.items()}, self.rng_seed)


# ---------------------------------------------------------------------------
# Initialization


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_embedding(rng, tensors, name: str, vocab_size: int, dim: int) -> None:
    tensors[name] = rng.normal(0.0, 0.1, size=(vocab_size, dim))


def init_lstm(rng, tensors, prefix: str, d_in: int, hidden: int) -> None:
    tensors[f"{prefix}.wx"] = glorot(rng, (d_in, 4 * hidden), d_in, 4 * hidden)
    tensors[f"{prefix}.wh"] = glorot(rng, (hidden, 4 * hidden), hidden, 4 * hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias
    tensors[f"{prefix}.b"] = b


def init_attention(rng, tensors, prefix: str, hidden: int) -> None:
    tensors[f"{prefix}.w"] = glorot(rng, (hidden, hidden), hidden, hidden)
    tensors[f"{prefix}.b"] = np.zeros(hidden)
    tensors[f"{prefix}.v"] = glorot(rng, (hidden,), hidden, 1)


def init_rnn_encoder(rng, tensors, prefix: str, d_in: int, hidden: int) -> None:
    init_lstm(rng, tensors, f"{prefix}.fwd", d_in, hidden)
    init_lstm(rng, tensors, f"{prefix}.bwd", d_in, hidden)
    init_attention(rng, tensors, f"{prefix}.att_fwd", hidden)
    init_attention(rng, tensors, f"{prefix}.att_bwd", hidden)


def init_cnn_encoder(rng, tensors, prefix: str, d_in: int, filters: int) -> None:
    tensors[f"{prefix}.conv.k"] = glorot(
        rng, (filters, KERNEL_WIDTH, d_in), KERNEL_WIDTH * d_in, filters
    )
    tensors[f"{prefix}.conv.b"] = np.zeros(filters)


def init_mlp(rng, tensors, prefix: str, d_in: int, hidden: int) -> None:
    tensors[f"{prefix}.w1"] = glorot(rng, (d_in, hidden), d_in, hidden)
    tensors[f"{prefix}.b1"] = np.zeros(hidden)
    tensors[f"{prefix}.w2"] = glorot(rng, (hidden,), hidden, 1)
    tensors[f"{prefix}.b2"] = np.zeros(())


# ---------------------------------------------------------------------------
# Embedding lookup


def embed(token_ids: Sequence[int], table: np.ndarray) -> np.ndarray:
    """Row i of the result is table[token_ids[i]]; empty input gives (0, d)."""
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.size == 0:
        return np.zeros((0, table.shape[1]))
    return table[ids]


def embed_backward(d_rows: np.ndarray, token_ids: Sequence[int], d_table: np.ndarray) -> None:
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.size:
        np.add.at(d_table, ids, d_rows)


# ---------------------------------------------------------------------------
# LSTM


def lstm_forward(inputs: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray):
    """Unidirectional LSTM over inputs (n, d_in) -> outputs (n, h).

    Gate layout along the last axis of wx/wh/b is [input, forget, output,
    cell], each of width h (the three sigmoid gates are contiguous).
    """
    n = inputs.shape[0]
    h = wh.shape[0]
    pre = inputs @ wx + b
    sig = np.empty((n, 3 * h))  # input, forget, output gates after sigmoid
    gg = np.empty((n, h))
    tanh_c = np.empty((n, h))
    outputs = np.empty((n, h))
    prev_h = np.empty((n, h))
    prev_c = np.empty((n, h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for t in range(n):
        prev_h[t] = h_prev
        prev_c[t] = c_prev
        z = pre[t] + h_prev @ wh
        s = sig[t]
        s[:] = 0.5 * (1.0 + np.tanh(0.5 * z[: 3 * h]))
        gg[t] = np.tanh(z[3 * h :])
        c_prev = s[h : 2 * h] * c_prev + s[:h] * gg[t]
        tanh_c[t] = np.tanh(c_prev)
        h_prev = s[2 * h :] * tanh_c[t]
        outputs[t] = h_prev
    cache = (inputs, wx, wh, sig, gg, tanh_c, prev_h, prev_c)
    return outputs, cache


def lstm_backward(d_outputs: np.ndarray, cache):
    """Backpropagation through time; d_outputs holds the gradient w.r.t.
    every step's output (fold any extra final-state gradient into the last
    row before calling)."""
    inputs, wx, wh, sig, gg, tanh_c, prev_h, prev_c = cache
    n, h = d_outputs.shape
    dz_all = np.empty((n, 4 * h))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in range(n - 1, -1, -1):
        s = sig[t]
        gi, gf, go = s[:h], s[h : 2 * h], s[2 * h :]
        dh = d_outputs[t] + dh_next
        dc = dh * go * (1.0 - tanh_c[t] ** 2) + dc_next
        dz = dz_all[t]
        dz[:h] = dc * gg[t]
        dz[h : 2 * h] = dc * prev_c[t]
        dz[2 * h : 3 * h] = dh * tanh_c[t]
        dz[: 3 * h] *= s * (1.0 - s)
        dz[3 * h :] = dc * gi * (1.0 - gg[t] ** 2)
        dh_next = wh @ dz
        dc_next = dc * gf
    d_inputs = dz_all @ wx.T
    d_wx = inputs.T @ dz_all
    d_wh = prev_h.T @ dz_all
    d_b = dz_all.sum(axis=0)
    return d_inputs, d_wx, d_wh, d_b


# ---------------------------------------------------------------------------
# Additive attention


def attention_forward(outputs: np.ndarray, w: np.ndarray, b: np.ndarray, v: np.ndarray):
    """Single-hidden-layer tanh scorer, softmax-normalized, over LSTM
    outputs (n, h); returns the weighted context vector (h,)."""
    u = np.tanh(outputs @ w + b)
    alpha = softmax(u @ v)
    assert np.all(alpha >= 0.0) and abs(alpha.sum() - 1.0) < 1e-9
    context = alpha @ outputs
    cache = (outputs, w, v, u, alpha)
    return context, alpha, cache


def attention_backward(d_context: np.ndarray, cache):
    outputs, w, v, u, alpha = cache
    d_alpha = outputs @ d_context
    d_outputs = np.outer(alpha, d_context)
    d_scores = alpha * (d_alpha - alpha @ d_alpha)
    du = np.outer(d_scores, v)
    dv = u.T @ d_scores
    dz = du * (1.0 - u * u)
    dw = outputs.T @ dz
    db = dz.sum(axis=0)
    d_outputs += dz @ w.T
    return d_outputs, dw, db, dv


# ---------------------------------------------------------------------------
# Bidirectional LSTM + attention encoder


def bilstm_attention_forward(inputs: np.ndarray, params: ParameterSet, prefix: str):
    """Encode (n, d_in) into [y_fwd_last; ctx_fwd; y_bwd_last; ctx_bwd] of
    length 4h. Empty input encodes to the zero vector (callers guard)."""
    h = params[f"{prefix}.fwd.wh"].shape[0]
    if inputs.shape[0] == 0:
        return np.zeros(4 * h), None
    yf, lstm_f = lstm_forward(
        inputs, params[f"{prefix}.fwd.wx"], params[f"{prefix}.fwd.wh"], params[f"{prefix}.fwd.b"]
    )
    ctx_f, _, att_f = attention_forward(
        yf, params[f"{prefix}.att_fwd.w"], params[f"{prefix}.att_fwd.b"], params[f"{prefix}.att_fwd.v"]
    )
    yb, lstm_b = lstm_forward(
        inputs[::-1], params[f"{prefix}.bwd.wx"], params[f"{prefix}.bwd.wh"], params[f"{prefix}.bwd.b"]
    )
    ctx_b, _, att_b = attention_forward(
        yb, params[f"{prefix}.att_bwd.w"], params[f"{prefix}.att_bwd.b"], params[f"{prefix}.att_bwd.v"]
    )
    out = np.concatenate([yf[-1], ctx_f, yb[-1], ctx_b])
    return out, (h, lstm_f, att_f, lstm_b, att_b)


def bilstm_attention_backward(d_out: np.ndarray, cache, grads: dict, prefix: str) -> np.ndarray:
    """Accumulate parameter gradients into `grads`; returns d_inputs."""
    h, lstm_f, att_f, lstm_b, att_b = cache

    d_yf, dw, db, dv = attention_backward(d_out[h : 2 * h], att_f)
    grads[f"{prefix}.att_fwd.w"] += dw
    grads[f"{prefix}.att_fwd.b"] += db
    grads[f"{prefix}.att_fwd.v"] += dv
    d_yf[-1] += d_out[:h]
    d_in_f, dwx, dwh, dbi = lstm_backward(d_yf, lstm_f)
    grads[f"{prefix}.fwd.wx"] += dwx
    grads[f"{prefix}.fwd.wh"] += dwh
    grads[f"{prefix}.fwd.b"] += dbi

    d_yb, dw, db, dv = attention_backward(d_out[3 * h :], att_b)
    grads[f"{prefix}.att_bwd.w"] += dw
    grads[f"{prefix}.att_bwd.b"] += db
    grads[f"{prefix}.att_bwd.v"] += dv
    d_yb[-1] += d_out[2 * h : 3 * h]
    d_in_b, dwx, dwh, dbi = lstm_backward(d_yb, lstm_b)
    grads[f"{prefix}.bwd.wx"] += dwx
    grads[f"{prefix}.bwd.wh"] += dwh
    grads[f"{prefix}.bwd.b"] += dbi

    return d_in_f + d_in_b[::-1]


def bilstm_attention_encode(inputs: np.ndarray, params: ParameterSet, prefix: str) -> np.ndarray:
    """Forward-only convenience wrapper around bilstm_attention_forward."""
    return bilstm_attention_forward(inputs, params, prefix)[0]


# ---------------------------------------------------------------------------
# 1D convolution + max pooling


def conv_maxpool_forward(inputs: np.ndarray, kernels: np.ndarray, bias: np.ndarray):
    """Valid 1D convolution (kernel width 5) along the sequence, then max
    over positions; one output per filter.

    Trailing all-zero rows are treated as padding and stripped first, so the
    output is invariant to appended zero rows; inputs shorter than the
    kernel are zero-padded up to it.
    """
    n_orig, d = inputs.shape
    n = n_orig
    while n > 0 and not inputs[n - 1].any():
        n -= 1
    if n < KERNEL_WIDTH:
        padded = np.zeros((KERNEL_WIDTH, d))
        padded[:n] = inputs[:n]
    else:
        padded = inputs[:n]
    positions = padded.shape[0] - KERNEL_WIDTH + 1
    windows = np.empty((positions, KERNEL_WIDTH * d))
    for p in range(positions):
        windows[p] = padded[p : p + KERNEL_WIDTH].ravel()
    conv = windows @ kernels.reshape(kernels.shape[0], -1).T + bias
    argmax = conv.argmax(axis=0)
    out = conv[argmax, np.arange(conv.shape[1])]
    return out, (windows, argmax, n, n_orig, d, kernels)


def conv_maxpool_backward(d_out: np.ndarray, cache):
    windows, argmax, n, n_orig, d, kernels = cache
    n_filters = kernels.shape[0]
    flat_k = kernels.reshape(n_filters, -1)
    d_kernels = np.zeros_like(kernels)
    d_padded = np.zeros((windows.shape[0] + KERNEL_WIDTH - 1, d))
    for f in range(n_filters):
        p = int(argmax[f])
        d_kernels[f] += (d_out[f] * windows[p]).reshape(KERNEL_WIDTH, d)
        d_padded[p : p + KERNEL_WIDTH] += d_out[f] * flat_k[f].reshape(KERNEL_WIDTH, d)
    d_inputs = np.zeros((n_orig, d))
    d_inputs[:n] = d_padded[:n]
    return d_inputs, d_kernels, d_out.copy()


def cnn_encode(inputs: np.ndarray, params: ParameterSet, prefix: str) -> np.ndarray:
    """Forward-only convenience wrapper around conv_maxpool_forward."""
    return conv_maxpool_forward(inputs, params[f"{prefix}.conv.k"], params[f"{prefix}.conv.b"])[0]


# ---------------------------------------------------------------------------
# Scoring head


def mlp_forward(
    x: np.ndarray,
    w1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    b2: np.ndarray,
    hidden_mask: Optional[np.ndarray] = None,
):
    """score = w2 . relu(w1^T x + b1) + b2, with optional dropout on the
    hidden layer during training."""
    z = x @ w1 + b1
    a = np.maximum(z, 0.0)
    if hidden_mask is not None:
        a = a * hidden_mask
    score = float(a @ w2 + b2)
    return score, (x, w1, w2, z > 0.0, a, hidden_mask)


def mlp_backward(d_score: float, cache):
    x, w1, w2, relu_mask, a, hidden_mask = cache
    dw2 = d_score * a
    db2 = np.asarray(d_score, dtype=np.float64)
    da = d_score * w2
    if hidden_mask is not None:
        da = da * hidden_mask
    dz = da * relu_mask
    dw1 = np.outer(x, dz)
    db1 = dz
    dx = w1 @ dz
    return dx, dw1, db1, dw2, db2


def score_mlp(x: np.ndarray, params: ParameterSet, prefix: str = "mlp") -> float:
    """Two-layer scorer over a joined vector; raises on width mismatch."""
    return mlp_forward(
        x, params[f"{prefix}.w1"], params[f"{prefix}.b1"], params[f"{prefix}.w2"], params[f"{prefix}.b2"]
    )[0]


def bilinear(x_q: np.ndarray, m: np.ndarray, x_d: np.ndarray) -> float:
    """x_q^T M x_d; raises on shape mismatch."""
    return float(x_q @ m @ x_d)


def bilinear_backward(d: float, x_q: np.ndarray, m: np.ndarray, x_d: np.ndarray):
    return d * (m @ x_d), d * np.outer(x_q, x_d), d * (m.T @ x_q)


# ---------------------------------------------------------------------------
# Dropout (inverted; training only)


def dropout_mask(rng: Optional[np.random.Generator], shape, rate: float) -> Optional[np.ndarray]:
    """Inverted-dropout mask, or None when dropout is disabled."""
    if rng is None or rate <= 0.0:
        return None
    return (rng.random(shape) >= rate).astype(np.float64) / (1.0 - rate)


def apply_mask(x: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return x if mask is None else x * mask


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    learning_rate: float
    weight_decay: float
    dropout_rate: float

    @classmethod
    def create(
        cls,
        params: ParameterSet,
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-3,
        dropout_rate: float = 0.2,
    ) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
            step=0,
            learning_rate=learning_rate,
            weight_decay=weight_decay,
            dropout_rate=dropout_rate,
        )


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: OptimizerState):
    """One Adam update; decoupled weight decay shrinks parameters before the
    Adam delta is applied. Mutates params and state in place."""
    state.step += 1
    lr = state.learning_rate
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step
    for name, theta in params.tensors.items():
        g = grads[name]
        if state.weight_decay:
            theta -= lr * state.weight_decay * theta
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, state


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    path,
    params: ParameterSet,
    config: dict,
    vocabulary: Sequence[str],
    idf: Optional[dict] = None,
) -> None:
    """Write a versioned JSON checkpoint; floats round-trip bit-exactly."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": config,
        "vocabulary": list(vocabulary),
        "seed": params.rng_seed,
        "parameters": {
            name: {"shape": list(t.shape), "data": t.ravel().tolist()}
            for name, t in params.tensors.items()
        },
    }
    if idf is not None:
        doc["idf"] = idf
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path):
    """Read a checkpoint; returns (ParameterSet, full document)."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    tensors = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["parameters"].items()
    }
    return ParameterSet(tensors=tensors, rng_seed=doc.get("seed", 0)), doc
