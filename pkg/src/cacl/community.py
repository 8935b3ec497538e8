"""Community-aware module.

A GCN encoder over the user graph, Louvain to pick the community count,
cosine-weighted edge merging down to that count, and the modularity-inspired
pretraining objective (graph reconstruction + softened modularity).
"""

from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Param, Tensor
from .graph import UserGraph

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass
class CaConfig:
    beta: float = 1.0
    gamma: float = 0.5
    neg_samples_per_edge: int = 1

    def __post_init__(self):
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")
        if self.neg_samples_per_edge < 0:
            raise ValueError("neg_samples_per_edge must be >= 0")


@dataclass(eq=False)
class CaEncoder:
    w_p: Param  # (hidden, d_in)
    layers: list[Param]  # each (hidden, hidden), applied as h @ W

    @classmethod
    def init(cls, d_in: int, hidden: int, n_layers: int, rng: np.random.Generator) -> "CaEncoder":
        w_p = ad.glorot(rng, hidden, d_in, "user/w_q")
        layers = [ad.glorot(rng, hidden, hidden, f"ca/w_h{l}") for l in range(n_layers)]
        return cls(w_p, layers)

    @property
    def L(self) -> int:
        return len(self.layers)

    def params(self) -> list[Param]:
        return [self.w_p, *self.layers]

    def frozen_copy(self) -> "CaEncoder":
        return copy.deepcopy(self)


@dataclass
class CommunityPartition:
    assignment: np.ndarray  # local user index -> community
    members: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if not self.members:
            k = int(self.assignment.max()) + 1 if len(self.assignment) else 0
            self.members = [np.flatnonzero(self.assignment == c) for c in range(k)]

    @property
    def k(self) -> int:
        return len(self.members)

    def to_json(self) -> dict:
        return {"k": self.k, "assignment": [int(c) for c in self.assignment]}


def canonical_labels(labels) -> np.ndarray:
    """Renumber community labels by order of first appearance."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inv].astype(np.int64)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def normalized_adjacency(ug: UserGraph) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with degrees taken from ``A + I``."""
    a = ug.adjacency + sp.identity(ug.n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    return (s @ a @ s).tocsr()


def encode_users(enc: CaEncoder, ug: UserGraph, features, a_hat=None) -> Tensor:
    features = ad.constant(features)
    if features.shape[0] != ug.n:
        raise ValueError(f"{features.shape[0]} feature rows for {ug.n} users")
    if features.shape[1] != enc.w_p.shape[1]:
        raise ValueError(f"feature width {features.shape[1]} != encoder input {enc.w_p.shape[1]}")
    if a_hat is None:
        a_hat = normalized_adjacency(ug)
    h = ad.leaky_relu(ad.linear(features, enc.w_p))
    for w in enc.layers:
        h = ad.leaky_relu(ad.spmm(a_hat, ad.matmul(h, w)))
    return h


# ---------------------------------------------------------------------------
# Modularity and Louvain
# ---------------------------------------------------------------------------


def modularity(ug: UserGraph, part) -> float:
    """Newman modularity of a hard partition of the user graph."""
    assign = part.assignment if isinstance(part, CommunityPartition) else np.asarray(part)
    if len(assign) != ug.n:
        raise ValueError("partition does not cover all users")
    m = ug.edge_count
    if m == 0:
        raise ValueError("modularity undefined for an edgeless graph")
    return _weighted_modularity(ug.adjacency, canonical_labels(assign))


def _weighted_modularity(w: sp.spmatrix, labels: np.ndarray) -> float:
    k = int(labels.max()) + 1
    p = sp.csr_matrix((np.ones(len(labels)), (np.arange(len(labels)), labels)), shape=(len(labels), k))
    inner = (p.T @ w @ p).diagonal()
    tot = np.asarray(p.T @ np.asarray(w.sum(axis=1))).ravel()
    m2 = w.sum()
    return float((inner / m2).sum() - ((tot / m2) ** 2).sum())


def _move_nodes(w: sp.csr_matrix) -> np.ndarray:
    n = w.shape[0]
    k = np.asarray(w.sum(axis=1)).ravel()
    m2 = k.sum()
    comm = np.arange(n)
    tot = k.copy()
    indptr, indices, data = w.indptr, w.indices, w.data
    moved_any = True
    while moved_any:
        moved_any = False
        for i in range(n):
            ci = comm[i]
            ki = k[i]
            links: dict[int, float] = {}
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    c = comm[j]
                    links[c] = links.get(c, 0.0) + data[p]
            tot[ci] -= ki
            best, best_gain = ci, links.get(ci, 0.0) - tot[ci] * ki / m2
            for c in sorted(links):
                gain = links[c] - tot[c] * ki / m2
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            tot[best] += ki
            if best != ci:
                comm[i] = best
                moved_any = True
    return canonical_labels(comm)


LOUVAIN_RESTARTS = 16


def _louvain_once(w: sp.csr_matrix) -> np.ndarray:
    labels = np.arange(w.shape[0])
    while True:
        level = _move_nodes(w)
        if level.max() + 1 == w.shape[0]:
            break
        labels = level[labels]
        p = sp.csr_matrix((np.ones(len(level)), (np.arange(len(level)), level)))
        w = (p.T @ w @ p).tocsr()
    return labels


def louvain(ug: UserGraph, restarts: int = LOUVAIN_RESTARTS) -> CommunityPartition:
    """Two-phase Louvain (local moving + aggregation) on the unweighted user graph.

    The first pass visits nodes in index order; further passes use fixed
    pseudo-random visiting orders and the highest-modularity result wins (the
    earliest on ties).  Within a pass ties keep the current community, so the
    result is deterministic.  An edgeless graph yields all singletons.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    n = ug.n
    if ug.edge_count == 0:
        return CommunityPartition(np.arange(n))
    w = ug.adjacency.astype(np.float64).tocsr()
    order_rng = np.random.default_rng(0)
    best_q, best = -np.inf, None
    for r in range(restarts):
        perm = np.arange(n) if r == 0 else order_rng.permutation(n)
        lab = np.empty(n, dtype=np.int64)
        lab[perm] = _louvain_once(w[perm][:, perm].tocsr())
        q = _weighted_modularity(w, canonical_labels(lab))
        if q > best_q + 1e-12:
            best_q, best = q, lab
    return CommunityPartition(canonical_labels(best))


def louvain_k(ug: UserGraph, restarts: int = LOUVAIN_RESTARTS) -> int:
    return louvain(ug, restarts).k


# ---------------------------------------------------------------------------
# Cosine-weighted edge merging
# ---------------------------------------------------------------------------


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def edge_cosines(ug: UserGraph, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges = ug.edges()
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=1)
    norms[norms == 0] = 1.0
    u = h / norms[:, None]
    w = (u[edges[:, 0]] * u[edges[:, 1]]).sum(axis=1)
    return edges, w


def cluster_to_k(ug: UserGraph, h, k: int, weights=None) -> CommunityPartition:
    """Merge endpoints of edges in descending cosine order until ``k`` communities remain.

    Ties are broken by ``(i, j)`` ascending.  If the edges run out first the
    partition is returned with more than ``k`` communities.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    n = ug.n
    if k > n:
        raise ValueError(f"k={k} exceeds user count {n}")
    if weights is None:
        edges, w = edge_cosines(ug, h.value if isinstance(h, Tensor) else h)
    else:
        edges, w = ug.edges(), np.asarray(weights, dtype=np.float64)
    order = np.lexsort((edges[:, 1], edges[:, 0], -w))
    uf = UnionFind(n)
    count = n
    for e in order:
        if count <= k:
            break
        if uf.union(int(edges[e, 0]), int(edges[e, 1])):
            count -= 1
    if count > k:
        warnings.warn(f"cluster_to_k: edges exhausted at {count} communities (target {k})", stacklevel=2)
    return CommunityPartition(canonical_labels([uf.find(i) for i in range(n)]))


# ---------------------------------------------------------------------------
# Pretraining objective
# ---------------------------------------------------------------------------


def sample_non_edges(ug: UserGraph, count: int, rng: np.random.Generator) -> np.ndarray:
    n = ug.n
    if count == 0 or n * (n - 1) // 2 == ug.edge_count:
        return np.zeros((0, 2), dtype=np.int64)
    adj = ug.adjacency
    out = np.zeros((count, 2), dtype=np.int64)
    todo = np.arange(count)
    while len(todo):
        u = rng.integers(0, n, size=len(todo))
        v = rng.integers(0, n, size=len(todo))
        ok = (u != v) & (np.asarray(adj[u, v]).ravel() == 0)
        out[todo[ok], 0] = u[ok]
        out[todo[ok], 1] = v[ok]
        todo = todo[~ok]
    return out


def reconstruction_loss(ug: UserGraph, h: Tensor, cfg: CaConfig, rng: np.random.Generator) -> Tensor:
    """Graph auto-encoder cross-entropy on edges plus sampled non-edges, scaled by 1/n^2."""
    n = ug.n
    pos = ug.edges()
    neg = sample_non_edges(ug, cfg.neg_samples_per_edge * len(pos), rng)
    pairs = np.vstack([pos, neg])
    target = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])[:, None]
    logit = ad.sum_rows(ad.mul(ad.rows(h, pairs[:, 0]), ad.rows(h, pairs[:, 1])))
    a_hat = ad.clip(ad.sigmoid(logit), PROB_CLAMP, 1.0 - PROB_CLAMP)
    ce = ad.add(ad.mul(ad.log(a_hat), target), ad.mul(ad.log(ad.sub(1.0, a_hat)), 1.0 - target))
    return ad.scale(ad.sum_all(ce), -1.0 / n**2)


def modularity_matrix(ug: UserGraph) -> np.ndarray:
    d = ug.degrees
    m2 = d.sum()
    return ug.dense() - np.outer(d, d) / m2


def soft_modularity_loss(ug: UserGraph, h: Tensor, cfg: CaConfig, b=None) -> Tensor:
    """``-(beta/2m) * sum_ij B_ij exp(-gamma ||h_i - h_j||^2)``."""
    m = ug.edge_count
    if m == 0:
        raise ValueError("soft modularity undefined for an edgeless graph")
    if b is None:
        b = modularity_matrix(ug)
    kern = ad.exp(ad.scale(ad.pairwise_sqdist(h), -cfg.gamma))
    return ad.scale(ad.sum_all(ad.mul(kern, b)), -cfg.beta / (2.0 * m))


def ca_loss_terms(ug: UserGraph, h: Tensor, cfg: CaConfig, rng: np.random.Generator, b=None) -> tuple[Tensor, Tensor]:
    if ug.edge_count == 0:
        raise ValueError("ca_loss undefined for an edgeless graph")
    h = ad.constant(h)
    return reconstruction_loss(ug, h, cfg, rng), soft_modularity_loss(ug, h, cfg, b)


def ca_loss(ug: UserGraph, h, cfg: CaConfig, rng: np.random.Generator) -> Tensor:
    lg, lm = ca_loss_terms(ug, h, cfg, rng)
    return ad.add(lg, lm)


def pretrain_ca(
    enc: CaEncoder,
    ug: UserGraph,
    features: np.ndarray,
    cfg: CaConfig,
    epochs: int,
    rng: np.random.Generator,
    lr: float = 5e-3,
) -> tuple[CaEncoder, list[dict]]:
    """Minimise the community-aware loss; returns the encoder and a per-epoch log."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    opt = ad.Adam(enc.params(), lr=lr)
    a_hat = normalized_adjacency(ug)
    b = modularity_matrix(ug)
    history = []
    for epoch in range(1, epochs + 1):
        opt.zero_grad()
        h = encode_users(enc, ug, features, a_hat)
        lg, lm = ca_loss_terms(ug, h, cfg, rng, b)
        total = ad.add(lg, lm)
        if not np.isfinite(total.item()):
            raise FloatingPointError(
                f"pretrain_ca diverged at epoch {epoch}: L_G={lg.item()}, L_M={lm.item()}"
            )
        ad.backward(total)
        opt.step()
        row = {"epoch": epoch, "L_G": lg.item(), "L_M": lm.item(), "L_CA": total.item()}
        history.append(row)
        log.debug("pretrain epoch %d: %s", epoch, row)
    return enc, history
