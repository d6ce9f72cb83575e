import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prismnet import tensor as T
from prismnet.contrastive import (ContrastiveConfig, Negatives, info_nce, info_nce_directional,
                                  loss_rdn, loss_syn, total_loss)
from prismnet.data import ConfigError
from prismnet.tensor import Tensor


def ref_directional(a, t, neg=None, tau=0.1):
    """Loop-by-loop evaluation on unit-normalized vectors."""
    def unit(v):
        return v / np.linalg.norm(v)

    total = 0.0
    for i in range(len(a)):
        cands = [unit(t[j]) for j in range(len(t))]
        if neg is not None:
            cands += [unit(v) for v in neg[i]]
        scores = [math.exp(-float(np.sum((unit(a[i]) - c) ** 2)) / tau) for c in cands]
        total -= math.log(scores[i] / sum(scores))
    return total / len(a)


def close(a, b):
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


def test_single_pair_is_zero():
    v = np.array([[1.0, 2.0, 3.0]])
    assert info_nce_directional(v, v * 0.5).item() == pytest.approx(0.0, abs=1e-15)


def test_hand_value_two_pairs():
    e = np.array([[1.0, 0.0], [0.0, 1.0]])  # orthogonal unit vectors sit at distance 2
    loss = info_nce_directional(e, e, tau=1.0).item()
    assert abs(loss - math.log(1 + math.exp(-2))) < 1e-9
    assert abs(loss - 0.1269) < 1e-4
    assert info_nce_directional(e, e, tau=0.1).item() <= loss


def test_config_errors():
    e = np.eye(2)
    with pytest.raises(ConfigError):
        info_nce_directional(e, e, tau=0.0)
    with pytest.raises(ConfigError):
        ContrastiveConfig(eta=1.0).validate()
    with pytest.raises(ConfigError):
        ContrastiveConfig(distance="cosine").validate()
    with pytest.raises(T.DimensionError):
        info_nce_directional(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(T.DimensionError):
        info_nce_directional(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)))


def test_matches_loop_oracle_with_negatives():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, t = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        neg = rng.normal(size=(4, 3, 6))
        got = info_nce_directional(a, t, neg, tau=0.2).item()
        assert close(got, ref_directional(a, t, neg, tau=0.2))


def test_bidirectional_aggregation():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    ny, nx = rng.normal(size=(4, 2, 5)), rng.normal(size=(4, 2, 5))
    cfg = ContrastiveConfig(eta=0.3, tau=0.5)
    want = ref_directional(x, y, ny, 0.5) + 0.3 * ref_directional(y, x, nx, 0.5)
    assert close(info_nce(x, y, ny, nx, cfg).item(), want)
    zero_eta = ContrastiveConfig(eta=0.0, tau=0.5)
    assert close(info_nce(x, y, ny, nx, zero_eta).item(), ref_directional(x, y, ny, 0.5))


def test_symmetric_embeddings():
    x = np.random.default_rng(2).normal(size=(4, 5))
    cfg = ContrastiveConfig(eta=0.5)
    fwd = info_nce_directional(x, x).item()
    assert info_nce(x, x, cfg=cfg).item() == pytest.approx(1.5 * fwd, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 3))
def test_loss_non_negative(seed, n, k):
    rng = np.random.default_rng(seed)
    a, t = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))
    neg = rng.normal(size=(n, k, 4))
    assert info_nce_directional(a, t, neg).item() >= -1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_closer_positive_never_increases_loss(seed):
    # one anchor, so moving its target leaves every other distance fixed
    rng = np.random.default_rng(seed)
    a, t = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    neg = rng.normal(size=(1, 4, 5))
    before = info_nce_directional(a, t, neg, tau=0.3).item()
    ua, ut = a[0] / np.linalg.norm(a[0]), t[0] / np.linalg.norm(t[0])
    t2 = (0.7 * ut + 0.3 * ua)[None]
    after = info_nce_directional(a, t2, neg, tau=0.3).item()
    assert after <= before + 1e-12


def test_batch_order_invariance():
    rng = np.random.default_rng(3)
    hx, ht, hi, hf = (rng.normal(size=(5, 6)) for _ in range(4))
    neg = Negatives(Tensor(rng.normal(size=(5, 2, 6))), Tensor(rng.normal(size=(5, 2, 6))))
    perm = rng.permutation(5)
    pneg = Negatives(Tensor(neg.text.data[perm]), Tensor(neg.image.data[perm]))
    a = loss_syn(hf, hx, ht, hi, neg).item() + loss_rdn(hx, ht, hi, neg).item()
    b = loss_syn(hf[perm], hx[perm], ht[perm], hi[perm], pneg).item() + \
        loss_rdn(hx[perm], ht[perm], hi[perm], pneg).item()
    assert abs(a - b) < 1e-12


def test_rdn_weights_and_pooling():
    rng = np.random.default_rng(4)
    hx, ht, hi = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 1, 5)), rng.normal(size=(3, 8, 5))
    cfg = ContrastiveConfig(alpha=(0.0, 2.0))
    want = 2.0 * info_nce(hx.mean(1), hi.mean(1), cfg=cfg).item()
    assert loss_rdn(hx, ht, hi, cfg=cfg).item() == pytest.approx(want, abs=1e-12)


def test_rdn_minimum_at_matched_pairing():
    rng = np.random.default_rng(5)
    e = rng.normal(size=(6, 8))
    matched = loss_rdn(e, e, e).item()
    shuffled = loss_rdn(e, e[np.roll(np.arange(6), 1)], e[np.roll(np.arange(6), 2)]).item()
    assert matched < shuffled


def test_syn_weights():
    rng = np.random.default_rng(6)
    hf, hx, ht, hi = (rng.normal(size=(4, 5)) for _ in range(4))
    cfg = ContrastiveConfig(beta=(1.0, 0.0, 0.0))
    assert loss_syn(hf, hx, ht, hi, cfg=cfg).item() == pytest.approx(info_nce(hf, hx, cfg=cfg).item(), abs=1e-12)
    same = loss_syn(hx, hx, ht, hi, cfg=cfg).item()
    other = loss_syn(hx[::-1].copy(), hx, ht, hi, cfg=cfg).item()
    assert same < other


def test_negatives_route_to_target_modality():
    rng = np.random.default_rng(7)
    hx, ht, hi = (rng.normal(size=(3, 4)) for _ in range(3))
    neg_t = rng.normal(size=(3, 2, 4))
    cfg = ContrastiveConfig(alpha=(1.0, 0.0))
    got = loss_rdn(hx, ht, hi, Negatives(Tensor(neg_t), None), cfg).item()
    want = ref_directional(hx, ht, neg_t) + 0.5 * ref_directional(ht, hx)
    assert close(got, want)


def test_loss_gradients_pass_finite_differences():
    rng = np.random.default_rng(8)
    ps = [Tensor(rng.normal(size=(4, 6)), requires_grad=True) for _ in range(4)]
    negs = Negatives(Tensor(rng.normal(size=(4, 2, 6)), requires_grad=True),
                     Tensor(rng.normal(size=(4, 2, 6)), requires_grad=True))
    hx, ht, hi, hf = ps

    def fn():
        return T.add(loss_rdn(hx, ht, hi, negs), T.mul(loss_syn(hf, hx, ht, hi, negs), 3.0))

    errs = T.gradcheck(fn, ps + [negs.text, negs.image])
    assert max(errs.values()) < 1e-3


def test_total_loss_identity_and_metadata():
    pred, target = np.ones((2, 3)), np.zeros((2, 3))
    bd = total_loss(pred, target, 0.7, 1.9)
    assert bd.l_prediction == 1.0
    assert bd.identity_residual() <= 1e-12
    assert bd.metadata["lambda_ratio_text"] == "1:3"
    assert total_loss(pred, pred, 0.7, 1.9, 0.0, 0.0).l_total == 0.0
    assert total_loss(pred, target, 5.0, 5.0, 0.0, 0.0).l_total == 1.0
    with pytest.raises(ConfigError):
        total_loss(pred, target, 0.1, 0.1, -0.1, 0.3)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 5), st.floats(0, 5))
def test_total_identity_property(r, s, l1, l2):
    bd = total_loss(np.array([0.3, -1.2]), np.array([0.1, 0.4]), r, s, l1, l2)
    assert bd.identity_residual() <= 1e-12


def test_parts_record_both_directions():
    rng = np.random.default_rng(9)
    x, y = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    parts = {}
    cfg = ContrastiveConfig(eta=0.25)
    out = info_nce(x, y, cfg=cfg, parts=parts, name="pair").item()
    assert parts["pair"] == out
    assert parts["pair"] == parts["pair_fwd"] + 0.25 * parts["pair_rev"]
    assert close(parts["pair_rev"], ref_directional(y, x))
