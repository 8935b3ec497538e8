"""Heterogeneous GNN backbone, projection head and classifier.

Each node type has its own input projection; the user projection is the very
same :class:`~cacl.autodiff.Param` as the community encoder's ``w_p``, so
updates through either path move both.  Two backbones are available:

``rsage``
    per relation, mean of neighbour states transformed by a relation weight,
    summed with a self transform.  Every edge type contributes a forward and
    a reverse relation.
``gcn``
    edge types collapsed, symmetric normalised adjacency with self loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Param, Tensor
from .augment import PREDICTED
from .community import CaEncoder
from .graph import HeteroGraph, Subgraph

BACKBONES = ("gcn", "rsage")


def relation_names(edge_type_names) -> list[str]:
    names = list(edge_type_names)
    if PREDICTED not in names:
        names.append(PREDICTED)
    return [n for e in names for n in (e, f"rev_{e}")]


@dataclass(eq=False)
class HeteroEncoder:
    backbone: str
    type_names: list[str]
    text_types: set[str]
    w_q: dict[str, Param]
    token_embedding: Param | None
    layers: list[dict[str, Param]]
    dropout: float = 0.5

    @classmethod
    def init(
        cls,
        g: HeteroGraph,
        ca: CaEncoder,
        hidden: int,
        n_layers: int,
        rng: np.random.Generator,
        backbone: str = "rsage",
        embed_dim: int = 16,
        dropout: float = 0.5,
    ) -> "HeteroEncoder":
        if backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {backbone!r}")
        text_types = {
            g.node_types[t].name
            for t in {int(g.node_type[i]) for i, f in enumerate(g.features) if any(f.tokens)}
        }
        vocab = g.vocab_size
        emb = None
        if text_types and vocab > 0:
            emb = Param(rng.normal(0.0, 1.0, size=(vocab, embed_dim)), name="token_embedding")
        w_q = {}
        for t in g.node_types:
            d_in = t.dense_dim + (embed_dim if t.name in text_types and emb is not None else 0)
            if t.name == "user":
                if ca.w_p.shape != (hidden, d_in):
                    raise ValueError(f"community encoder w_p shape {ca.w_p.shape} != {(hidden, d_in)}")
                w_q[t.name] = ca.w_p
            else:
                w_q[t.name] = ad.glorot(rng, hidden, max(d_in, 1), f"{t.name}/w_q")
        rels = relation_names(e.name for e in g.edge_types)
        layers = []
        for l in range(n_layers):
            if backbone == "gcn":
                layers.append({"w": ad.glorot(rng, hidden, hidden, f"gcn{l}/w")})
            else:
                ws = {"self": ad.glorot(rng, hidden, hidden, f"rsage{l}/self")}
                for r in rels:
                    ws[r] = ad.glorot(rng, hidden, hidden, f"rsage{l}/{r}")
                layers.append(ws)
        return cls(backbone, [t.name for t in g.node_types], text_types, w_q, emb, layers, dropout)

    @property
    def L(self) -> int:
        return len(self.layers)

    def params(self) -> list[Param]:
        out = list(self.w_q.values())
        if self.token_embedding is not None:
            out.append(self.token_embedding)
        for layer in self.layers:
            out.extend(layer.values())
        return out


@dataclass(eq=False)
class ProjectionHead:
    w1: Param
    w2: Param
    nonlinear: bool = False

    @classmethod
    def init(cls, hidden: int, out_dim: int, rng: np.random.Generator, nonlinear: bool = False):
        return cls(ad.glorot(rng, out_dim, hidden, "proj/w1"), ad.glorot(rng, out_dim, out_dim, "proj/w2"), nonlinear)

    def params(self) -> list[Param]:
        return [self.w1, self.w2]


@dataclass(eq=False)
class Classifier:
    w_c: Param  # (2, hidden)

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator):
        return cls(ad.glorot(rng, 2, hidden, "clf/w_c"))

    def params(self) -> list[Param]:
        return [self.w_c]


# ---------------------------------------------------------------------------
# Text and input projection
# ---------------------------------------------------------------------------


def token_mean_matrix(token_lists, vocab: int) -> sp.csr_matrix:
    """Row i averages the embeddings of every token attached to node i."""
    rows, cols, vals = [], [], []
    for i, seqs in enumerate(token_lists):
        toks = [t for seq in seqs for t in seq]
        for t in toks:
            if not 0 <= t < vocab:
                raise ValueError(f"token {t} outside vocabulary of size {vocab}")
            rows.append(i)
            cols.append(t)
            vals.append(1.0 / len(toks))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(token_lists), vocab))


def encode_text(enc: HeteroEncoder, token_lists) -> Tensor:
    """Mean token embedding per node; nodes without tokens get a zero row."""
    emb = enc.token_embedding
    return ad.spmm(token_mean_matrix(token_lists, emb.shape[0]), emb)


def type_inputs(enc: HeteroEncoder, sub: Subgraph, tid: int) -> Tensor:
    """Raw input block for one node type: dense features, plus mean token embedding."""
    g = sub.graph
    name = g.node_types[tid].name
    x = ad.constant(sub.dense_features(tid))
    if name in enc.text_types and enc.token_embedding is not None:
        ids = g.nodes_of_type(tid)
        txt = encode_text(enc, [g.features[i].tokens for i in ids])
        x = ad.hstack([x, txt]) if x.shape[1] else txt
    if x.shape[1] == 0:
        x = ad.constant(np.ones((x.shape[0], 1)))
    return x


def user_input_matrix(enc: HeteroEncoder, sub: Subgraph) -> np.ndarray:
    """User rows of the input block as a constant, for the community encoder."""
    return type_inputs(enc, sub, sub.graph.user_type).value


def project_inputs(enc: HeteroEncoder, sub: Subgraph) -> Tensor:
    g = sub.graph
    parts, order = [], []
    for t in g.node_types:
        ids = g.nodes_of_type(t.id)
        if len(ids) == 0:
            continue
        if t.name not in enc.w_q:
            raise ValueError(f"unknown node type {t.name!r}")
        parts.append(ad.leaky_relu(ad.linear(type_inputs(enc, sub, t.id), enc.w_q[t.name])))
        order.append(ids)
    stacked = ad.vstack(parts)
    pos = np.empty(g.n, dtype=np.int64)
    pos[np.concatenate(order)] = np.arange(g.n)
    return ad.rows(stacked, pos)


# ---------------------------------------------------------------------------
# Message passing
# ---------------------------------------------------------------------------


def relation_matrices(g: HeteroGraph, names) -> dict[str, sp.csr_matrix]:
    """Row-normalised (mean) aggregation matrix per relation, keyed by relation name."""
    key = ("rel", tuple(names))
    if key in g._cache:
        return g._cache[key]
    known = set(names)
    out = {}
    for t in g.edge_types:
        if t.name not in known:
            raise ValueError(f"unknown edge type {t.name!r}")
        sel = g.etype == t.id
        if not sel.any():
            continue
        for name, dst, src in ((t.name, g.dst[sel], g.src[sel]), (f"rev_{t.name}", g.src[sel], g.dst[sel])):
            m = sp.csr_matrix((np.ones(len(dst)), (dst, src)), shape=(g.n, g.n))
            deg = np.asarray(m.sum(axis=1)).ravel()
            inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
            out[name] = (sp.diags(inv) @ m).tocsr()
    g._cache[key] = out
    return out


def homogeneous_adjacency(g: HeteroGraph) -> sp.csr_matrix:
    key = ("gcn_adj",)
    if key not in g._cache:
        n = g.n
        a = sp.csr_matrix((np.ones(len(g.src)), (g.src, g.dst)), shape=(n, n))
        a = a + a.T
        a.data[:] = 1.0
        a.setdiag(0)
        a.eliminate_zeros()
        a = a + sp.identity(n, format="csr")
        d = np.asarray(a.sum(axis=1)).ravel()
        s = sp.diags(1.0 / np.sqrt(d))
        g._cache[key] = (s @ a @ s).tocsr()
    return g._cache[key]


def forward(enc: HeteroEncoder, sub: Subgraph, dropout_on: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Hidden states ``H^L`` for the subgraph's users (rows in ``sub.users`` order)."""
    if dropout_on and rng is None:
        raise ValueError("dropout needs an rng")
    g = sub.graph
    h = project_inputs(enc, sub)
    if enc.backbone == "gcn":
        a_hat = homogeneous_adjacency(g)
        for layer in enc.layers:
            h = ad.leaky_relu(ad.spmm(a_hat, ad.matmul(h, layer["w"])))
            if dropout_on:
                h = ad.dropout(h, enc.dropout, rng)
    else:
        rels = [r for r in enc.layers[0] if r != "self"] if enc.layers else []
        mats = relation_matrices(g, sorted({r[4:] if r.startswith("rev_") else r for r in rels}))
        for layer in enc.layers:
            acc = ad.linear(h, layer["self"])
            for name, m in mats.items():
                acc = ad.add(acc, ad.spmm(m, ad.linear(h, layer[name])))
            h = ad.leaky_relu(acc)
            if dropout_on:
                h = ad.dropout(h, enc.dropout, rng)
    return ad.rows(h, np.arange(sub.user_count))


def project(head: ProjectionHead, h: Tensor) -> Tensor:
    """``z = W_2 (W_1 h)`` row-wise, optionally with a Leaky-ReLU in between."""
    mid = ad.linear(ad.constant(h), head.w1)
    if head.nonlinear:
        mid = ad.leaky_relu(mid)
    return ad.linear(mid, head.w2)


def classify(clf: Classifier, h: Tensor, labels, rows=None) -> tuple[Tensor, Tensor]:
    """Logits for every row and the cross-entropy over the selected labelled rows."""
    logits = ad.linear(ad.constant(h), clf.w_c)
    labels = np.asarray(labels)
    if rows is None:
        rows = np.flatnonzero(labels >= 0)
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("classify: no labelled rows")
    loss = ad.softmax_cross_entropy(ad.rows(logits, rows), labels[rows])
    return logits, loss
