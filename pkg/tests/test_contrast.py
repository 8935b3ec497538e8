import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cacl import autodiff as ad
from cacl.contrast import (
    ContrastiveConfig,
    SubgraphPool,
    contrastive_loss,
    contrastive_node_loss,
    match_all,
    match_subgraph,
    pair_contrastive_loss,
    total_loss,
)


def toy_views(dim=3):
    """alpha = [anchor (human), negative (bot)], beta = [positive (human)], all one unit vector."""
    u = np.zeros((1, dim))
    u[0, 0] = 1.0
    za = np.repeat(u, 2, axis=0)
    zb = u.copy()
    return za, za.copy(), zb, zb.copy(), np.array([0, 1]), np.array([0])


@pytest.mark.parametrize("tau", [0.07, 0.5, 1.0])
def test_symmetric_toy_is_log_three_halves(tau):
    za, zat, zb, zbt, ya, yb = toy_views()
    loss = contrastive_node_loss(za, zat, zb, zbt, ya, yb, 0, ContrastiveConfig(0.9, tau))
    assert abs(loss - (-math.log(2 / 3))) < 1e-9


def test_no_negatives_gives_zero():
    za = np.array([[1.0, 0.0], [0.0, 1.0]])
    zb = np.array([[1.0, 1.0]])
    loss = contrastive_node_loss(za, za, zb, zb, np.array([0, 0]), np.array([0]), 0, ContrastiveConfig())
    assert loss == 0.0


def test_total_loss_composition():
    cfg = ContrastiveConfig(lam=0.9)
    assert total_loss(0.4055, 0.6931, cfg) == pytest.approx(0.43426, abs=1e-12)
    assert total_loss(-math.log(2 / 3), math.log(2), cfg) == pytest.approx(0.4342333153533425, abs=1e-12)
    assert total_loss(3.0, 0.25, ContrastiveConfig(lam=0.0)) == 0.25
    assert total_loss(3.0, 0.25, ContrastiveConfig(lam=1.0)) == 3.0


def test_total_loss_on_tensors():
    out = total_loss(ad.constant(2.0), ad.constant(1.0), ContrastiveConfig(lam=0.25))
    assert out.item() == pytest.approx(1.25)


def random_case(seed, n_alpha=4, n_beta=3, dim=3):
    r = np.random.default_rng(seed)
    za, zat = r.normal(size=(n_alpha, dim)), r.normal(size=(n_alpha, dim))
    zb, zbt = r.normal(size=(n_beta, dim)), r.normal(size=(n_beta, dim))
    ya = r.integers(-1, 2, n_alpha)
    ya[0] = 0
    yb = r.integers(-1, 2, n_beta)
    return za, zat, zb, zbt, ya, yb


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.07, 0.5, 1.0]))
def test_node_loss_nonnegative_and_scale_invariant(seed, tau):
    za, zat, zb, zbt, ya, yb = random_case(seed)
    cfg = ContrastiveConfig(temperature=tau)
    base = contrastive_node_loss(za, zat, zb, zbt, ya, yb, 0, cfg)
    assert base >= 0
    za2 = za.copy()
    za2[0] *= 7.3
    zb2 = zb.copy()
    zb2[-1] *= 0.2
    assert contrastive_node_loss(za2, zat, zb2, zbt, ya, yb, 0, cfg) == pytest.approx(base, rel=1e-10, abs=1e-12)


def test_adding_negative_increases_and_positive_decreases():
    za, zat, zb, zbt, ya, yb = random_case(3)
    ya[:] = [0, 1, -1, 0]
    cfg = ContrastiveConfig(temperature=0.5)
    base = contrastive_node_loss(za, zat, zb, zbt, ya, yb, 0, cfg)
    new = np.array([[0.3, -0.2, 0.9]])
    more_neg = contrastive_node_loss(
        np.vstack([za, new]), np.vstack([zat, new]), zb, zbt, np.append(ya, 1), yb, 0, cfg
    )
    more_pos = contrastive_node_loss(
        za, zat, np.vstack([zb, new]), np.vstack([zbt, new]), ya, np.append(yb, 0), 0, cfg
    )
    assert more_neg > base
    assert more_pos < base


def reference_pair_loss(za, zat, zb, zbt, ya, yb, cfg):
    total = 0.0
    for i in np.flatnonzero(ya >= 0):
        total += contrastive_node_loss(za, zat, zb, zbt, ya, yb, i, cfg)
        total += contrastive_node_loss(za, zat, zb, zbt, ya, yb, i, cfg, anchor_tilde=True)
    return total / (2 * len(za))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.07, 0.5, 1.0]))
def test_vectorised_loss_matches_loop_reference(seed, tau):
    za, zat, zb, zbt, ya, yb = random_case(seed, n_alpha=5, n_beta=4)
    cfg = ContrastiveConfig(temperature=tau)
    fast = pair_contrastive_loss(*map(ad.constant, (za, zat, zb, zbt)), ya, yb, cfg, "cacl_dynamic").item()
    assert fast == pytest.approx(reference_pair_loss(za, zat, zb, zbt, ya, yb, cfg), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("mode", ["cacl_dynamic", "supervised_all", "unsupervised"])
@pytest.mark.parametrize("seed", range(4))
def test_contrastive_gradients(mode, seed):
    r = np.random.default_rng(seed)
    sizes = [3, 4, 3]  # 10 users over three subgraphs
    ps = []
    views = []
    for k, n in enumerate(sizes):
        z, zt = ad.Param(r.normal(size=(n, 3)), f"z{k}"), ad.Param(r.normal(size=(n, 3)), f"zt{k}")
        y = r.integers(0, 2, n)
        ps += [z, zt]
        views.append((z, zt, y))
    matches = match_all(np.vstack([v[0].value.mean(axis=0) for v in views]))
    f = lambda: contrastive_loss(views, ContrastiveConfig(temperature=0.5), mode, matches)
    assert ad.grad_check(f, ps) < 1e-4


def test_total_loss_gradient():
    r = np.random.default_rng(0)
    za, zat = ad.Param(r.normal(size=(3, 2)), "za"), ad.Param(r.normal(size=(3, 2)), "zat")
    zb, zbt = ad.Param(r.normal(size=(2, 2)), "zb"), ad.Param(r.normal(size=(2, 2)), "zbt")
    w_c = ad.Param(r.normal(size=(2, 2)), "w_c")
    cfg = ContrastiveConfig(lam=0.9, temperature=0.07)

    def f():
        lc = pair_contrastive_loss(za, zat, zb, zbt, np.array([0, 1, 0]), np.array([0, 1]), cfg)
        lk = ad.softmax_cross_entropy(ad.linear(za, w_c), [0, 1, 0])
        return total_loss(lc, lk, cfg)

    assert ad.grad_check(f, [za, zat, zb, zbt, w_c]) < 1e-4


def test_single_subgraph_pool_is_zero_with_warning():
    z = np.eye(2)
    with pytest.warns(UserWarning):
        out = contrastive_loss([(z, z, np.array([0, 1]))], ContrastiveConfig())
    assert out.item() == 0.0


def test_uniform_labels_positives_aligned_gives_zero():
    u = np.array([[1.0, 0.0]])
    views = [(np.repeat(u, 3, 0), np.repeat(u, 3, 0), np.zeros(3, int)), (np.repeat(u, 2, 0), np.repeat(u, 2, 0), np.zeros(2, int))]
    assert contrastive_loss(views, ContrastiveConfig(), "cacl_dynamic", [1, 0]).item() == 0.0


def test_descent_direction_in_similarity_space():
    # On the all-identical toy every cosine has zero gradient with respect to
    # the embeddings, so a literal step is a no-op.  The direction shows up in
    # similarity space: the loss grows with the negative's cosine and shrinks
    # with the positive's, so descent pushes the one down and the other up.
    cfg = ContrastiveConfig(lam=1.0, temperature=0.5)

    def loss(c_pos, c_neg):
        unit = lambda c, sign: np.array([c, sign * math.sqrt(max(0.0, 1 - c * c))])
        za = np.vstack([unit(1.0, 1), unit(c_neg, -1)])
        zb = unit(c_pos, 1)[None, :]
        return contrastive_node_loss(za, za, zb, zb, np.array([0, 1]), np.array([0]), 0, cfg)

    h = 1e-6
    d_neg = (loss(1.0, 1.0) - loss(1.0, 1.0 - h)) / h
    d_pos = (loss(1.0, 1.0) - loss(1.0 - h, 1.0)) / h
    assert d_neg > 0
    assert d_pos < 0
    assert loss(1.0, 1.0) == pytest.approx(-math.log(2 / 3), abs=1e-12)


def test_identical_toy_is_stationary():
    za, zat, zb, zbt, ya, yb = toy_views()
    params = [ad.Param(m.copy(), n) for m, n in zip((za, zat, zb, zbt), ("za", "zat", "zb", "zbt"))]
    views = [(params[0], params[1], ya), (params[2], params[3], yb)]
    ad.backward(contrastive_loss(views, ContrastiveConfig(lam=1.0), "cacl_dynamic", [1, 0]))
    assert all(np.abs(p.grad).max() < 1e-12 for p in params)


def test_match_examples():
    means = np.array([[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0]])
    assert match_subgraph(means, 0) == 2
    assert match_all(np.array([[1.0, 2.0], [3.0, -1.0]])) == [1, 0]
    with pytest.raises(ValueError):
        match_subgraph(np.array([[1.0, 0.0]]), 0)


def test_match_ties_go_to_lowest_index():
    means = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
    assert match_subgraph(means, 0) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6))
def test_match_against_brute_force(k, seed):
    means = np.random.default_rng(seed).normal(size=(k, 4))
    pool = SubgraphPool(subgraphs=[None] * k, mean_embeddings=means)
    for a in range(k):
        best, best_cos = None, math.inf
        for b in range(k):
            if b == a:
                continue
            c = means[a] @ means[b] / (np.linalg.norm(means[a]) * np.linalg.norm(means[b]))
            if c < best_cos:
                best, best_cos = b, c
        assert match_subgraph(pool, a) == best


def test_config_validation():
    with pytest.raises(ValueError):
        ContrastiveConfig(lam=1.5)
    with pytest.raises(ValueError):
        ContrastiveConfig(temperature=0.0)
