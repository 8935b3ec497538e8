import numpy as np
import pytest

from cacl import autodiff as ad
from cacl.community import CaEncoder
from cacl.encoder import (
    Classifier,
    HeteroEncoder,
    ProjectionHead,
    classify,
    encode_text,
    forward,
    project,
    relation_names,
)
from cacl.graph import EdgeType, NodeType, RawFeature, build_graph, induce_subgraph


def lrelu(x):
    return np.where(x >= 0, x, 0.01 * x)


def make_graph(user_feats, texts=(), user_edges=(), labels=None):
    """Users with 2-d numeric features; texts are (owner, tokens)."""
    nt = [NodeType(0, "user", 2, ()), NodeType(1, "text", 0, ())]
    et = [EdgeType(0, "follow", 0, 0), EdgeType(1, "post", 0, 1)]
    nu = len(user_feats)
    feats = [RawFeature(tuple(map(float, f)), (), ()) for f in user_feats]
    feats += [RawFeature((), (), (tuple(t),)) for _, t in texts]
    edges = [(a, b, 0) for a, b in user_edges] + [(o, nu + k, 1) for k, (o, _) in enumerate(texts)]
    labels = list(labels if labels is not None else [0] * nu) + [-1] * len(texts)
    return build_graph(nt, et, [0] * nu + [1] * len(texts), feats, edges, labels, ["train"] * nu + [None] * len(texts))


def init_encoder(g, hidden=4, layers=2, backbone="rsage", seed=0):
    rng = np.random.default_rng(seed)
    d_user = g.node_types[0].dense_dim
    ca = CaEncoder.init(d_user, hidden, 1, rng)
    return HeteroEncoder.init(g, ca, hidden, layers, rng, backbone=backbone, embed_dim=3, dropout=0.5)


def set_identity(enc):
    for p in enc.params():
        if p is enc.token_embedding:
            continue
        r, c = p.shape
        p.value = np.eye(r, c)


def test_relation_names_include_reverse_and_predicted():
    assert relation_names(["follow"]) == ["follow", "rev_follow", "predicted", "rev_predicted"]


def test_user_projection_is_shared_with_community_encoder():
    g = make_graph([[1, 2]])
    rng = np.random.default_rng(0)
    ca = CaEncoder.init(2, 4, 1, rng)
    enc = HeteroEncoder.init(g, ca, 4, 1, rng)
    assert enc.w_q["user"] is ca.w_p


def test_single_user_identity_weights():
    g = make_graph([[0.5, 2.0]])
    enc = init_encoder(g, hidden=2)
    set_identity(enc)
    h = forward(enc, induce_subgraph(g, [0]))
    assert np.allclose(h.value, [[0.5, 2.0]])


def test_encode_text_mean_and_empty():
    g = make_graph([[1, 1]], texts=[(0, [2, 3])])
    enc = init_encoder(g)
    emb = enc.token_embedding.value
    out = encode_text(enc, [((2,),), (), ((1, 3), (2,)), ((3, 1), (2,))]).value
    assert np.allclose(out[0], emb[2])
    assert np.all(out[1] == 0)
    assert np.allclose(out[2], emb[[1, 3, 2]].mean(axis=0))
    assert np.allclose(out[2], out[3])


def test_duplicate_neighbour_leaves_mean_unchanged():
    one = make_graph([[1.0, 0.5], [0.3, -2.0]], user_edges=[(1, 0)])
    two = make_graph([[1.0, 0.5], [0.3, -2.0], [0.3, -2.0]], user_edges=[(1, 0), (2, 0)])
    e1, e2 = init_encoder(one, seed=3), init_encoder(two, seed=3)
    h1 = forward(e1, induce_subgraph(one, [0, 1])).value
    h2 = forward(e2, induce_subgraph(two, [0, 1, 2])).value
    assert np.allclose(h1[0], h2[0], rtol=1e-12, atol=1e-14)


def test_rsage_matches_straight_line_oracle():
    g = make_graph([[1.0, -0.5], [0.2, 0.7]], texts=[(0, [1, 2]), (1, [2])])
    enc = init_encoder(g, hidden=4, layers=2, seed=5)
    # nodes: user0, user1, text2 (owned by 0), text3 (owned by 1); edges 0->2, 1->3 of type "post"
    x_user = np.array([[1.0, -0.5], [0.2, 0.7]])
    emb = enc.token_embedding.value
    x_text = np.vstack([emb[[1, 2]].mean(axis=0), emb[[2]].mean(axis=0)])
    h = np.vstack([lrelu(x_user @ enc.w_q["user"].value.T), lrelu(x_text @ enc.w_q["text"].value.T)])
    post = np.zeros((4, 4))
    post[2, 0] = post[3, 1] = 1.0  # text aggregates its author
    rev = post.T.copy()  # author aggregates its texts
    for layer in enc.layers:
        acc = h @ layer["self"].value.T
        acc += post @ h @ layer["post"].value.T
        acc += rev @ h @ layer["rev_post"].value.T
        h = lrelu(acc)
    out = forward(enc, induce_subgraph(g, [0, 1])).value
    assert np.allclose(out, h[:2], rtol=1e-12, atol=1e-14)


def test_gcn_matches_dense_oracle():
    g = make_graph([[1.0, -0.5], [0.2, 0.7], [0.4, 0.4]], user_edges=[(0, 1), (1, 2), (2, 1)])
    enc = init_encoder(g, hidden=3, layers=2, backbone="gcn", seed=2)
    a = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
    d = a.sum(axis=1)
    a_hat = a / np.sqrt(np.outer(d, d))
    x = np.array([[1.0, -0.5], [0.2, 0.7], [0.4, 0.4]])
    h = lrelu(x @ enc.w_q["user"].value.T)
    for layer in enc.layers:
        h = lrelu(a_hat @ h @ layer["w"].value)
    assert np.allclose(forward(enc, induce_subgraph(g, [0, 1, 2])).value, h, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("backbone", ["rsage", "gcn"])
def test_forward_permutation_equivariant(backbone):
    r = np.random.default_rng(7)
    feats = r.normal(size=(5, 2))
    edges = [(0, 1), (1, 2), (3, 4), (4, 0), (2, 4)]
    perm = r.permutation(5)  # new id of old node i is perm[i]
    inv = np.argsort(perm)
    g1 = make_graph(feats, user_edges=edges)
    g2 = make_graph(feats[inv], user_edges=[(perm[a], perm[b]) for a, b in edges])
    e1, e2 = init_encoder(g1, backbone=backbone, seed=1), init_encoder(g2, backbone=backbone, seed=1)
    h1 = forward(e1, induce_subgraph(g1, range(5))).value
    h2 = forward(e2, induce_subgraph(g2, range(5))).value
    assert np.allclose(h2[perm], h1, rtol=1e-12, atol=1e-14)


def test_dropout_requires_rng():
    g = make_graph([[1, 1]])
    with pytest.raises(ValueError):
        forward(init_encoder(g), induce_subgraph(g, [0]), dropout_on=True)


def test_unknown_backbone():
    g = make_graph([[1, 1]])
    with pytest.raises(ValueError):
        init_encoder(g, backbone="hgt")


@pytest.mark.parametrize("backbone", ["rsage", "gcn"])
def test_forward_gradients(backbone):
    g = make_graph([[1.0, -0.5], [0.2, 0.7], [0.9, 0.1]], texts=[(0, [1, 2]), (2, [0])], user_edges=[(0, 1), (2, 1)])
    enc = init_encoder(g, hidden=3, layers=2, backbone=backbone, seed=4)
    sub = induce_subgraph(g, [0, 1, 2])
    w = np.random.default_rng(0).normal(size=(3, 3))
    f = lambda: ad.sum_all(ad.mul(forward(enc, sub), w))
    assert ad.grad_check(f, enc.params()) < 1e-4


def test_project_identity_scaling_and_composition():
    r = np.random.default_rng(0)
    h = r.normal(size=(5, 3))
    ident = ProjectionHead(ad.Param(np.eye(3), "w1"), ad.Param(np.eye(3), "w2"))
    assert np.allclose(project(ident, h).value, h)
    head = ProjectionHead.init(3, 4, r)
    z = project(head, h).value
    assert np.allclose(project(head, 2.5 * h).value, 2.5 * z)
    assert np.allclose(z, (h @ head.w1.value.T) @ head.w2.value.T)


def test_classify_values_and_gradient():
    clf = Classifier(ad.Param(np.zeros((2, 3)), "w_c"))
    _, loss = classify(clf, np.ones((4, 3)), [0, 1, -1, 1])
    assert loss.item() == pytest.approx(np.log(2), abs=1e-15)
    clf = Classifier(ad.Param(np.array([[50.0, 0, 0], [-50.0, 0, 0]]), "w_c"))
    _, loss = classify(clf, np.array([[1.0, 0, 0], [-1.0, 0, 0]]), [0, 1])
    assert loss.item() < 1e-30
    r = np.random.default_rng(3)
    clf = Classifier(ad.Param(r.normal(size=(2, 3)), "w_c"))
    h = r.normal(size=(6, 3))
    assert ad.grad_check(lambda: classify(clf, h, [0, 1, 1, 0, -1, 1])[1], clf.params()) < 1e-6


def test_classify_requires_labels():
    clf = Classifier(ad.Param(np.zeros((2, 3)), "w_c"))
    with pytest.raises(ValueError):
        classify(clf, np.ones((2, 3)), [-1, -1])
