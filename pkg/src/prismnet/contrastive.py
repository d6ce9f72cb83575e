"""Bidirectional InfoNCE and the redundancy / synergy / total objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ConfigError
from .tensor import Tensor


@dataclass
class ContrastiveConfig:
    tau: float = 0.1
    eta: float = 0.5
    distance: str = "sq_euclidean_normalized"
    alpha: tuple[float, float] = (1.0, 1.0)  # series-text, series-image
    beta: tuple[float, float, float] = (1.0, 1.0, 1.0)  # fused-series, fused-text, fused-image
    lambda_rdn: float = 0.1
    lambda_syn: float = 0.3

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if not 0.0 <= self.eta < 1.0:
            raise ConfigError(f"reverse-direction weight must lie in [0, 1), got {self.eta}")
        if self.distance not in DISTANCES:
            raise ConfigError(f"unknown distance {self.distance!r}")
        if self.lambda_rdn < 0 or self.lambda_syn < 0:
            raise ConfigError("loss weights must be non-negative")


def _sq_euclidean_normalized(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise ||a_i/|a_i| - b_j/|b_j|||^2 = 2 - 2 cos.  a (N, E), b (..., M, E)."""
    an = T.l2_normalize(a, axis=-1)
    bn = T.l2_normalize(b, axis=-1)
    return T.sub(2.0, T.mul(2.0, T.matmul(an, T.swapaxes(bn, -1, -2))))


def _sq_euclidean(a: Tensor, b: Tensor) -> Tensor:
    aa = T.sum_(T.mul(a, a), axis=-1, keepdims=True)
    bb = T.swapaxes(T.sum_(T.mul(b, b), axis=-1, keepdims=True), -1, -2)
    return T.add(T.sub(aa, T.mul(2.0, T.matmul(a, T.swapaxes(b, -1, -2)))), bb)


DISTANCES = {
    "sq_euclidean_normalized": _sq_euclidean_normalized,
    "sq_euclidean": _sq_euclidean,
}


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def info_nce_directional(anchors, targets, negatives=None, tau: float = 0.1,
                         distance: str = "sq_euclidean_normalized") -> Tensor:
    """Mean over anchors of ``-log softmax(-D/tau)`` at the paired target.

    The denominator of anchor i runs over every in-batch target plus
    ``negatives[i]`` (shape (N, K, E)), the anchor's own constructed negatives.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    dist = DISTANCES[distance]
    a, t = _as_tensor(anchors), _as_tensor(targets)
    if a.ndim != 2 or a.shape != t.shape:
        raise T.DimensionError(f"anchors {a.shape} and targets {t.shape} must both be (N, E)")
    n = a.shape[0]
    logits = T.mul(dist(a, t), -1.0 / tau)  # (N, N)
    if negatives is not None:
        neg = _as_tensor(negatives)
        if neg.ndim != 3 or neg.shape[0] != n or neg.shape[2] != a.shape[1]:
            raise T.DimensionError(f"negatives must be (N, K, E), got {neg.shape}")
        if neg.shape[1]:
            a3 = T.reshape(a, (n, 1, a.shape[1]))
            neg_logits = T.reshape(T.mul(dist(a3, neg), -1.0 / tau), (n, neg.shape[1]))
            logits = T.concat([logits, neg_logits], axis=1)
    eye = np.zeros(logits.shape)
    eye[np.arange(n), np.arange(n)] = 1.0
    positive = T.sum_(T.mul(logits, eye), axis=1)
    return T.mean(T.sub(T.logsumexp(logits, axis=1), positive))


def info_nce(e_x, e_y, negatives_y=None, negatives_x=None, cfg: ContrastiveConfig | None = None,
             parts: dict | None = None, name: str = "") -> Tensor:
    """Forward direction (x anchors, y targets) plus ``eta`` times the reverse.

    With ``parts`` given, the two directions and their sum are recorded
    under ``name + "_fwd"``, ``name + "_rev"`` and ``name``.
    """
    cfg = cfg or ContrastiveConfig()
    cfg.validate()
    fwd = info_nce_directional(e_x, e_y, negatives_y, cfg.tau, cfg.distance)
    rev = None
    out = fwd
    if cfg.eta != 0.0:
        rev = info_nce_directional(e_y, e_x, negatives_x, cfg.tau, cfg.distance)
        out = T.add(fwd, T.mul(rev, cfg.eta))
    if parts is not None:
        parts[name + "_fwd"] = float(fwd.data)
        parts[name + "_rev"] = 0.0 if rev is None else float(rev.data)
        parts[name] = float(out.data)
    return out


def pool(h) -> Tensor:
    """(N, L, E) -> (N, E) by averaging rows; 2-D input is returned as is."""
    h = _as_tensor(h)
    return T.mean(h, axis=1) if h.ndim == 3 else h


@dataclass
class Negatives:
    """Embedded constructed negatives per anchor, each (N, K, E) or None."""
    text: Tensor | None = None
    image: Tensor | None = None


def _zero() -> Tensor:
    return Tensor(np.zeros(()))


def loss_rdn(h_X, h_T, h_I, negatives: Negatives | None = None,
             cfg: ContrastiveConfig | None = None, parts: dict | None = None) -> Tensor:
    """Cross-modal redundancy term: series-text plus series-image.

    A modality passed as None contributes nothing.
    """
    cfg = cfg or ContrastiveConfig()
    negatives = negatives or Negatives()
    x = pool(h_X)
    total = _zero()
    a1, a2 = cfg.alpha
    if h_T is not None:
        term = info_nce(x, pool(h_T), negatives.text, None, cfg, parts, "rdn_series_text")
        total = T.add(total, T.mul(term, a1))
    if h_I is not None:
        term = info_nce(x, pool(h_I), negatives.image, None, cfg, parts, "rdn_series_image")
        total = T.add(total, T.mul(term, a2))
    return total


def loss_syn(h_F, h_X, h_T, h_I, negatives: Negatives | None = None,
             cfg: ContrastiveConfig | None = None, parts: dict | None = None) -> Tensor:
    """Fused-vs-unimodal synergy term (fused-series, fused-text, fused-image)."""
    cfg = cfg or ContrastiveConfig()
    negatives = negatives or Negatives()
    f = pool(h_F)
    b1, b2, b3 = cfg.beta
    total = _zero()
    terms = [("syn_fused_series", h_X, None, b1), ("syn_fused_text", h_T, negatives.text, b2),
             ("syn_fused_image", h_I, negatives.image, b3)]
    for name, h, neg, w in terms:
        if h is None or w == 0.0:
            continue
        term = info_nce(f, pool(h), neg, None, cfg, parts, name)
        total = T.add(total, T.mul(term, w))
    return total


def mse(pred, target) -> Tensor:
    diff = T.sub(_as_tensor(pred), np.asarray(getattr(target, "data", target), dtype=np.float64))
    return T.mean(T.mul(diff, diff))


@dataclass
class LossBreakdown:
    l_prediction: float
    l_rdn: float
    l_syn: float
    l_total: float
    lambda_rdn: float
    lambda_syn: float
    components: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    total: Tensor | None = None  # differentiable total

    def identity_residual(self) -> float:
        return abs(self.l_total - (self.l_prediction + self.lambda_rdn * self.l_rdn
                                   + self.lambda_syn * self.l_syn))


def total_loss(pred, target, l_rdn, l_syn, lambda_rdn: float = 0.1, lambda_syn: float = 0.3,
               components: dict | None = None) -> LossBreakdown:
    """Prediction MSE plus the weighted contrastive terms."""
    if lambda_rdn < 0 or lambda_syn < 0:
        raise ConfigError(f"loss weights must be non-negative, got {lambda_rdn}, {lambda_syn}")
    l_pred = mse(pred, target)
    l_rdn, l_syn = _as_tensor(l_rdn), _as_tensor(l_syn)
    tot = T.add(l_pred, T.add(T.mul(l_rdn, lambda_rdn), T.mul(l_syn, lambda_syn)))
    p, r, s = float(l_pred.data), float(l_rdn.data), float(l_syn.data)
    # the logged total is rebuilt from the logged scalars so the identity is exact
    logged = p + lambda_rdn * r + lambda_syn * s
    ratio = (lambda_rdn / lambda_syn) if lambda_syn else float("inf")
    return LossBreakdown(p, r, s, logged, lambda_rdn, lambda_syn, dict(components or {}),
                         {"lambda_ratio": ratio, "lambda_ratio_text": _ratio_text(lambda_rdn, lambda_syn)},
                         tot)


def _ratio_text(a: float, b: float) -> str:
    if a == 0 and b == 0:
        return "0:0"
    if a == 0:
        return "0:1"
    r = b / a
    return f"1:{r:g}"
