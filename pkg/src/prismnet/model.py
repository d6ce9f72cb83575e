"""Tri-modal encoders, fusion and the cross-attention forecaster."""
from __future__ import annotations

import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import layers as L
from . import tensor as T
from .data import ConfigError
from .tensor import Tensor


@dataclass
class ModelConfig:
    n_channels: int = 4
    window: int = 480
    horizon: int = 24
    patch_len: int = 16
    patch_stride: int = 16
    embed_dim: int = 128
    heads: int = 4
    text_dim: int = 64
    text_heads: int = 4
    text_pool: int = 4  # frozen features are mean-pooled in chunks of this many tokens
    vocab_size: int = 256
    max_len: int = 512
    clip_dim: int = 512
    frame_patch: int = 16
    image_size: int = 224
    group_size: int = 8
    gru_hidden: int = 128
    dropout: float = 0.1
    image_encoder: str = "gru"  # or "transformer"
    text_encoder: str = "causal"  # or "bag" (static token embeddings)
    use_text: bool = True
    use_image: bool = True
    horizons: tuple[int, ...] = (24, 96, 192, 336)
    frozen_seed: int = 0

    @property
    def num_patches(self) -> int:
        return 1 + math.ceil((self.window - self.patch_len) / self.patch_stride)

    @property
    def token_dim(self) -> int:
        return self.patch_len * self.n_channels

    def validate(self) -> None:
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim={self.embed_dim} is not divisible by heads={self.heads}")
        if self.text_dim % self.text_heads:
            raise ConfigError("text_dim is not divisible by text_heads")
        if self.horizon not in self.horizons:
            raise ConfigError(f"horizon {self.horizon} is not in the configured set {self.horizons}")
        if self.image_size % self.frame_patch:
            raise ConfigError("image_size must be a multiple of frame_patch")
        if self.image_encoder not in ("gru", "transformer"):
            raise ConfigError(f"unknown image encoder {self.image_encoder!r}")
        if self.text_encoder not in ("causal", "bag"):
            raise ConfigError(f"unknown text encoder {self.text_encoder!r}")


@dataclass
class EmbeddingSet:
    h_X: Tensor  # (B, P, E)
    h_T: Tensor | None  # (B, 1, E)
    h_I: Tensor | None  # (B, N, E)
    h_F: Tensor  # (B, 1 + N, E)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    ang = pos / (10000.0 ** (2 * i / dim))
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


class PrismNet:
    """Parameters plus forward functions of the tri-modal forecaster.

    Frozen tensors (text embedding + causal block, frame projection) never
    require gradients and are excluded from :meth:`trainable`.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()
        self.dropout_rng = np.random.default_rng([seed, 7])
        # negatives draw their own masks so the anchor path is the same with or without them
        self.negative_dropout_rng = np.random.default_rng([seed, 8])
        self._build(np.random.default_rng(seed))

    @contextmanager
    def negative_stream(self):
        main = self.dropout_rng
        self.dropout_rng = self.negative_dropout_rng
        try:
            yield
        finally:
            self.dropout_rng = main

    # -- parameters ------------------------------------------------------

    def _add(self, name: str, value: np.ndarray, frozen: bool = False) -> None:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        self.params[name] = Tensor(value, requires_grad=not frozen, name=name)
        if frozen:
            self.frozen.add(name)

    def _block(self, rng, prefix: str, dim: int, frozen: bool = False) -> None:
        s = 1.0 / np.sqrt(dim)
        for n in ("wq", "wk", "wv", "wo"):
            self._add(prefix + n, rng.normal(0, s, (dim, dim)), frozen)
        self._add(prefix + "ln1_g", np.ones(dim), frozen)
        self._add(prefix + "ln1_b", np.zeros(dim), frozen)
        self._add(prefix + "ff1_w", rng.normal(0, s, (dim, 4 * dim)), frozen)
        self._add(prefix + "ff1_b", np.zeros(4 * dim), frozen)
        self._add(prefix + "ff2_w", rng.normal(0, 1 / np.sqrt(4 * dim), (4 * dim, dim)), frozen)
        self._add(prefix + "ff2_b", np.zeros(dim), frozen)
        self._add(prefix + "ln2_g", np.ones(dim), frozen)
        self._add(prefix + "ln2_b", np.zeros(dim), frozen)

    def _build(self, rng: np.random.Generator) -> None:
        c = self.config
        E, tok, Dt = c.embed_dim, c.token_dim, c.text_dim
        nrm = lambda fi, fo: rng.normal(0.0, 1.0 / np.sqrt(fi), (fi, fo))  # noqa: E731
        # frozen stand-ins come from their own seed so that they are shared
        # by every run, like a pretrained checkpoint would be
        frng = np.random.default_rng([c.frozen_seed, 1])
        fnrm = lambda fi, fo: frng.normal(0.0, 1.0 / np.sqrt(fi), (fi, fo))  # noqa: E731
        # series encoder
        self._add("series.wq", nrm(tok, E))
        self._add("series.wk", nrm(tok, E))
        self._add("series.wv", nrm(tok, E))
        self._add("series.wo", nrm(E, tok))
        self._add("series.fcl_w", nrm(tok, E))
        self._add("series.fcl_b", np.zeros(E))
        # frozen causal text block (stand-in for a pretrained decoder)
        self._add("text.embed", frng.normal(0, 1.0, (c.vocab_size, Dt)), frozen=True)
        self._add("text.pos", sinusoidal_positions(c.max_len, Dt), frozen=True)
        self._add("text.f_ln1_g", np.ones(Dt), frozen=True)
        self._add("text.f_ln1_b", np.zeros(Dt), frozen=True)
        for n in ("wq", "wk", "wv", "wo"):
            self._add("text.f_" + n, fnrm(Dt, Dt), frozen=True)
        self._add("text.f_ln2_g", np.ones(Dt), frozen=True)
        self._add("text.f_ln2_b", np.zeros(Dt), frozen=True)
        self._add("text.f_ff1_w", fnrm(Dt, 4 * Dt), frozen=True)
        self._add("text.f_ff1_b", np.zeros(4 * Dt), frozen=True)
        self._add("text.f_ff2_w", fnrm(4 * Dt, Dt), frozen=True)
        self._add("text.f_ff2_b", np.zeros(Dt), frozen=True)
        # trainable prompt encoder
        self._block(rng, "prompt.", Dt)
        self._add("prompt.out_w", nrm(Dt, E))
        self._add("prompt.out_b", np.zeros(E))
        # frozen frame projection (stand-in for a pretrained image encoder)
        n_patch = (c.image_size // c.frame_patch) ** 2
        self._add("image.proj", fnrm(n_patch, c.clip_dim) * np.sqrt(12.0), frozen=True)
        H = c.gru_hidden
        if c.image_encoder == "gru":
            for g in ("z", "r", "n"):
                self._add(f"gru.w{g}_x", nrm(c.clip_dim, H))
                self._add(f"gru.w{g}_h", nrm(H, H))
                self._add(f"gru.b{g}", np.zeros(H))
            self._add("image.out_w", nrm(H, E))
            self._add("image.out_b", np.zeros(E))
        else:
            self._add("image.in_w", nrm(c.clip_dim, E))
            self._add("image.in_b", np.zeros(E))
            self._block(rng, "frames.", E)
        # fusion (no bias)
        self._add("fuse.text_w", nrm(E, E))
        self._add("fuse.image_w", nrm(E, E))
        # forecaster
        for n in ("wq", "wk", "wv", "wo"):
            self._add("cross." + n, nrm(E, E))
        P = c.num_patches
        self._add("head.w", rng.normal(0, 1.0 / np.sqrt(P * E), (P * E, c.horizon * c.n_channels)))
        self._add("head.b", np.zeros(c.horizon * c.n_channels))

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k not in self.frozen}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing tensors: {sorted(missing)[:5]}")
        for k, v in state.items():
            if k not in self.params:
                raise KeyError(f"unexpected tensor {k!r}")
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k!r}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)

    # -- series ------------------------------------------------------------

    def encode_series(self, patches: np.ndarray, training: bool = False,
                      return_weights: bool = False):
        """(B, P, token_dim) normalized patches -> h_X (B, P, E)."""
        p, c = self.params, self.config
        x = Tensor(patches)
        a, w = L.attention(x, x, p["series.wq"], p["series.wk"], p["series.wv"], p["series.wo"], c.heads)
        a = T.dropout(a, c.dropout, self.dropout_rng, training)
        h = L.linear(T.add(a, x), p["series.fcl_w"], p["series.fcl_b"])
        return (h, w) if return_weights else h

    # -- text ----------------------------------------------------------------

    def pad_tokens(self, token_lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        c = self.config
        rows = []
        for toks in token_lists:
            toks = list(toks)
            if len(toks) > c.max_len:
                warnings.warn(f"text of {len(toks)} tokens truncated to the last {c.max_len}",
                              stacklevel=3)
                toks = toks[-c.max_len:]
            if not toks:
                toks = [0]
            rows.append(toks)
        length = max(len(r) for r in rows)
        ids = np.zeros((len(rows), length), dtype=np.int64)
        mask = np.zeros((len(rows), length), dtype=bool)
        for i, r in enumerate(rows):
            ids[i, :len(r)] = r
            mask[i, :len(r)] = True
        return ids, mask

    def frozen_text_features(self, ids: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Frozen causal block: (B, L) ids -> ((B, L', Dt) features, (B, L') mask).

        With the ``bag`` text encoder, the block is replaced by the average of
        the static token embeddings (one row per text).
        """
        p, c = self.params, self.config
        with T.no_grad():
            emb = T.embedding(p["text.embed"], ids)
            if c.text_encoder == "bag":
                m = mask[..., None].astype(np.float64)
                bag = (emb.data * m).sum(axis=1, keepdims=True) / np.maximum(m.sum(axis=1, keepdims=True), 1)
                return bag, np.ones((ids.shape[0], 1), dtype=bool)
            x = T.add(emb, p["text.pos"].data[:ids.shape[1]])
            attn_mask = L.causal_mask(ids.shape[1])[None, None]
            y = T.layer_norm(x, p["text.f_ln1_g"], p["text.f_ln1_b"])
            a, _ = L.attention(y, y, p["text.f_wq"], p["text.f_wk"], p["text.f_wv"], p["text.f_wo"],
                               c.text_heads, attn_mask)
            x = T.add(x, a)
            y = T.layer_norm(x, p["text.f_ln2_g"], p["text.f_ln2_b"])
            f = L.feed_forward(y, p["text.f_ff1_w"], p["text.f_ff1_b"], p["text.f_ff2_w"], p["text.f_ff2_b"])
            return T.add(x, f).data, mask

    def pool_features(self, feats: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Average frozen features over consecutive chunks of ``text_pool``
        tokens (padding excluded); shortens the sequence the trainable block sees."""
        k = self.config.text_pool
        if k <= 1 or feats.shape[1] == 1:
            return feats, mask
        B, Lt, D = feats.shape
        n = -(-Lt // k)
        f = np.zeros((B, n * k, D))
        m = np.zeros((B, n * k))
        f[:, :Lt] = feats * mask[..., None]
        m[:, :Lt] = mask
        cnt = m.reshape(B, n, k).sum(axis=2)
        pooled = f.reshape(B, n, k, D).sum(axis=2) / np.maximum(cnt, 1)[..., None]
        return pooled, cnt > 0

    def text_features(self, token_lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Everything upstream of the trainable prompt encoder (cacheable)."""
        ids, mask = self.pad_tokens(token_lists)
        return self.pool_features(*self.frozen_text_features(ids, mask))

    def prompt_encoder(self, feats: np.ndarray | Tensor, mask: np.ndarray, training: bool = False,
                       return_weights: bool = False):
        """Trainable encoder over frozen features, masked mean-pool, project to E."""
        p, c = self.params, self.config
        x = feats if isinstance(feats, Tensor) else Tensor(feats)
        key_mask = mask[:, None, None, :]
        a, w = L.attention(x, x, p["prompt.wq"], p["prompt.wk"], p["prompt.wv"], p["prompt.wo"],
                           c.text_heads, key_mask)
        a = T.dropout(a, c.dropout, self.dropout_rng, training)
        y = T.layer_norm(T.add(x, a), p["prompt.ln1_g"], p["prompt.ln1_b"])
        f = L.feed_forward(y, p["prompt.ff1_w"], p["prompt.ff1_b"], p["prompt.ff2_w"], p["prompt.ff2_b"])
        f = T.dropout(f, c.dropout, self.dropout_rng, training)
        y = T.layer_norm(T.add(y, f), p["prompt.ln2_g"], p["prompt.ln2_b"])
        m = mask[..., None].astype(np.float64)
        pooled = T.div(T.sum_(T.mul(y, m), axis=1, keepdims=True), np.maximum(m.sum(axis=1, keepdims=True), 1))
        h = L.linear(pooled, p["prompt.out_w"], p["prompt.out_b"])
        return (h, w) if return_weights else h

    def encode_text(self, token_lists: Sequence[Sequence[int]], training: bool = False) -> Tensor:
        """Token id lists -> h_T (B, 1, E)."""
        return self.prompt_encoder(*self.text_features(token_lists), training=training)

    # -- images --------------------------------------------------------------

    def frame_patch_means(self, frames: np.ndarray) -> np.ndarray:
        """(..., H, W) uint8 frames -> (..., n_patches) centred patch averages."""
        c = self.config
        f = np.asarray(frames, dtype=np.float64) / 255.0 - 0.5
        g = c.image_size // c.frame_patch
        lead = f.shape[:-2]
        means = f.reshape(*lead, g, c.frame_patch, g, c.frame_patch).mean(axis=(-3, -1))
        return means.reshape(*lead, g * g)

    def frame_embedding(self, frames: np.ndarray) -> np.ndarray:
        """Frozen per-frame embedding: 16x16 patch means -> linear -> clip_dim.

        ``frames`` is (..., H, W) uint8; returns (..., clip_dim).
        """
        return self.frame_patch_means(frames) @ self.params["image.proj"].data

    def encode_images(self, z: np.ndarray, training: bool = False,
                      force_update: float | None = None) -> Tensor:
        """Frame embeddings (B, N, clip_dim) -> h_I (B, N, E)."""
        p, c = self.params, self.config
        z = np.asarray(z, dtype=np.float64)
        B, N, _ = z.shape
        if c.image_encoder == "transformer":
            x = L.linear(Tensor(z), p["image.in_w"], p["image.in_b"])
            return L.encoder_block(x, p, "frames.", c.heads, None, c.dropout, self.dropout_rng, training)
        h = Tensor(np.zeros((B, c.gru_hidden)))
        states = []
        for t in range(N):
            h = L.gru_cell(Tensor(z[:, t]), h, p, "gru.", force_update)
            states.append(T.reshape(h, (B, 1, c.gru_hidden)))
        hs = T.concat(states, axis=1)
        return L.linear(hs, p["image.out_w"], p["image.out_b"])

    # -- fusion / forecast -----------------------------------------------------

    def fuse(self, h_T: Tensor | None, h_I: Tensor | None, batch: int) -> Tensor:
        """Concatenate projected text row and image rows: (B, 1 + N, E).

        A disabled modality contributes zero rows.
        """
        p, c = self.params, self.config
        E, N = c.embed_dim, c.group_size
        t = T.matmul(h_T, p["fuse.text_w"]) if h_T is not None else Tensor(np.zeros((batch, 1, E)))
        i = T.matmul(h_I, p["fuse.image_w"]) if h_I is not None else Tensor(np.zeros((batch, N, E)))
        return T.concat([t, i], axis=1)

    def forecast(self, h_X: Tensor, h_F: Tensor, mean: np.ndarray, std: np.ndarray,
                 training: bool = False, horizon: int | None = None, return_weights: bool = False):
        """Cross-attention (queries h_X, keys/values h_F), flatten, linear head,
        de-normalize.  Returns (B, h, d) in load units."""
        p, c = self.params, self.config
        if horizon is not None and horizon != c.horizon:
            raise ConfigError(f"model was built for horizon {c.horizon}, not {horizon}")
        a, w = L.attention(h_X, h_F, p["cross.wq"], p["cross.wk"], p["cross.wv"], p["cross.wo"], c.heads)
        a = T.dropout(a, c.dropout, self.dropout_rng, training)
        y = T.add(h_X, a)
        B = y.shape[0]
        flat = T.dropout(T.reshape(y, (B, -1)), c.dropout, self.dropout_rng, training)
        out = T.reshape(L.linear(flat, p["head.w"], p["head.b"]), (B, c.horizon, c.n_channels))
        pred = T.add(T.mul(out, np.asarray(std)[:, None, :]), np.asarray(mean)[:, None, :])
        return (pred, w) if return_weights else pred

    def embed(self, patches: np.ndarray, tokens: Sequence[Sequence[int]] | None,
              z: np.ndarray | None, training: bool = False) -> EmbeddingSet:
        c = self.config
        B = patches.shape[0]
        h_X = self.encode_series(patches, training)
        h_T = self.encode_text(tokens, training) if (c.use_text and tokens is not None) else None
        h_I = self.encode_images(z, training) if (c.use_image and z is not None) else None
        return EmbeddingSet(h_X, h_T, h_I, self.fuse(h_T, h_I, B))
