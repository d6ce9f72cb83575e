"""Functional building blocks over :class:`~prismnet.tensor.Tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = T.matmul(x, w)
    return y if b is None else T.add(y, b)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, L, E = x.shape
    return T.transpose(T.reshape(x, (B, L, heads, E // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, L, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (B, L, H * dh))


def attention(q_in: Tensor, kv_in: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
              heads: int, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention.

    ``mask`` broadcasts against (B, heads, Lq, Lk); False entries are
    excluded.  Returns the projected output and the attention weights.
    """
    E = wq.shape[-1]
    if E % heads:
        raise ValueError(f"attention width {E} is not divisible by {heads} heads")
    q = _split_heads(linear(q_in, wq), heads)
    k = _split_heads(linear(kv_in, wk), heads)
    v = _split_heads(linear(kv_in, wv), heads)
    scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(E // heads))
    weights = T.softmax(scores, axis=-1, mask=mask)
    out = _merge_heads(T.matmul(weights, v))
    return linear(out, wo), weights


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return linear(T.relu(linear(x, w1, b1)), w2, b2)


def encoder_block(x: Tensor, p: dict[str, Tensor], prefix: str, heads: int,
                  mask: np.ndarray | None = None, dropout: float = 0.0,
                  rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Post-norm transformer encoder layer."""
    a, _ = attention(x, x, p[prefix + "wq"], p[prefix + "wk"], p[prefix + "wv"], p[prefix + "wo"],
                     heads, mask)
    a = T.dropout(a, dropout, rng, training)
    y = T.layer_norm(T.add(x, a), p[prefix + "ln1_g"], p[prefix + "ln1_b"])
    f = feed_forward(y, p[prefix + "ff1_w"], p[prefix + "ff1_b"], p[prefix + "ff2_w"], p[prefix + "ff2_b"])
    f = T.dropout(f, dropout, rng, training)
    return T.layer_norm(T.add(y, f), p[prefix + "ln2_g"], p[prefix + "ln2_b"])


def gru_cell(x: Tensor, h: Tensor, p: dict[str, Tensor], prefix: str,
             force_update: float | None = None) -> Tensor:
    """One step of a gated recurrent unit.

    ``h' = (1 - z) * h + z * n`` with update gate ``z``, reset gate ``r`` and
    candidate ``n = tanh(x Wn + r * (h Un) + bn)``.  ``force_update`` pins
    ``z`` to a constant (gate algebra checks).
    """
    r = T.sigmoid(T.add(T.add(T.matmul(x, p[prefix + "wr_x"]), T.matmul(h, p[prefix + "wr_h"])),
                        p[prefix + "br"]))
    if force_update is None:
        z = T.sigmoid(T.add(T.add(T.matmul(x, p[prefix + "wz_x"]), T.matmul(h, p[prefix + "wz_h"])),
                            p[prefix + "bz"]))
    else:
        z = Tensor(np.full(h.shape, float(force_update)))
    n = T.tanh(T.add(T.add(T.matmul(x, p[prefix + "wn_x"]),
                           T.mul(r, T.matmul(h, p[prefix + "wn_h"]))), p[prefix + "bn"]))
    return T.add(T.mul(T.sub(1.0, z), h), T.mul(z, n))
