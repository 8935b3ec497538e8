"""Adaptive graph augmentations: feature shifting, link prediction, synonym substitution."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .autodiff import sigmoid_np
from .community import CaEncoder, encode_users
from .graph import EdgeType, HeteroGraph, RawFeature, Subgraph, UserGraph

PREDICTED = "predicted"


@dataclass
class AugConfig:
    p_f: float = 0.3
    p_tau: float = 0.7
    p_e: float = 0.95
    p_s: float = 0.2
    damping: float = 0.85

    def __post_init__(self):
        for name in ("p_f", "p_tau", "p_s"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.p_e <= 1.0:
            raise ValueError("p_e must lie in (0, 1]")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")


class SynonymDict(dict):
    """token id -> list of substitute token ids."""

    def __init__(self, mapping=None):
        super().__init__()
        for k, subs in (mapping or {}).items():
            k = int(k)
            subs = [int(s) for s in subs]
            if k in subs:
                raise ValueError(f"token {k} lists itself as a synonym")
            if any(s < 0 for s in subs) or k < 0:
                raise ValueError("token ids must be non-negative")
            if subs:
                self[k] = subs

    @classmethod
    def load(cls, path) -> "SynonymDict":
        with open(path) as fh:
            return cls(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({str(k): v for k, v in sorted(self.items())}, fh)


# ---------------------------------------------------------------------------
# Feature shifting
# ---------------------------------------------------------------------------


def pagerank(ug: UserGraph, damping: float = 0.85, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Power iteration with uniform teleport; dangling mass is spread uniformly."""
    n = ug.n
    if n == 0:
        raise ValueError("pagerank on an empty graph")
    deg = ug.degrees
    dangling = deg == 0
    inv = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, deg))
    # column-stochastic walk: P[i, j] = A[i, j] / deg[j]
    walk = (ug.adjacency @ sp.diags(inv)).tocsr()
    rho = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (walk @ rho + rho[dangling].sum() / n) + (1.0 - damping) / n
        resid = np.abs(nxt - rho).sum()
        rho = nxt
        if resid < tol:
            return rho / rho.sum()
    raise RuntimeError(f"pagerank did not converge (residual {resid:.3e})")


def feature_weights(features: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``w_o = log sum_i |x_io| rho_i``; all-zero columns get ``-inf``."""
    features = np.asarray(features, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64).ravel()
    if features.shape[0] != rho.shape[0]:
        raise ValueError("centrality not aligned with feature rows")
    s = np.abs(features).T @ rho
    with np.errstate(divide="ignore"):
        return np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -np.inf)


def mask_probabilities(w: np.ndarray, p_f: float, p_tau: float) -> np.ndarray:
    """``p_o = min((w_max - w_o) / (w_max - w_mean) * p_f, p_tau)``.

    Means and maxima are over finite weights.  ``-inf`` columns (all zero)
    receive ``p_tau``.  If every finite weight is equal nothing is masked.
    """
    w = np.asarray(w, dtype=np.float64)
    finite = np.isfinite(w)
    p = np.full(w.shape, p_tau)
    if not finite.any():
        return p
    wf = w[finite]
    w_max, w_bar = wf.max(), wf.mean()
    if w_max - w_bar <= 0:
        p[finite] = 0.0
        return p
    p[finite] = np.minimum((w_max - wf) / (w_max - w_bar) * p_f, p_tau)
    return p


def sample_mask(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(1 - p) keep-mask."""
    return (rng.random(p.shape) >= p).astype(np.float64)


def shift_features(sub: Subgraph, cfg: AugConfig, rho: np.ndarray, rng: np.random.Generator) -> Subgraph:
    """Mask feature columns per node type, sparing the most important ones.

    ``rho`` is a centrality value per subgraph user (aligned with
    ``sub.users``).  Non-user node types weight their rows uniformly.
    """
    g = sub.graph
    masks = dict(sub.feature_mask or {})
    for t in g.node_types:
        ids = g.nodes_of_type(t.id)
        if t.dense_dim == 0 or len(ids) == 0:
            continue
        x = sub.dense_features(t.id)
        if t.id == g.user_type:
            weights = np.asarray(rho, dtype=np.float64)
        else:
            weights = np.full(len(ids), 1.0 / len(ids))
        p = mask_probabilities(feature_weights(x, weights), cfg.p_f, cfg.p_tau)
        m = sample_mask(p, rng)
        if t.id in masks:
            masks[t.id] = masks[t.id] * m
        elif not m.all():
            masks[t.id] = m
    return replace(sub, feature_mask=masks or None)


# ---------------------------------------------------------------------------
# Link prediction
# ---------------------------------------------------------------------------


def user_features(sub: Subgraph) -> np.ndarray:
    return sub.dense_features(sub.graph.user_type)


def predict_links(sub: Subgraph, enc: CaEncoder, p_e: float) -> np.ndarray:
    """Non-adjacent user pairs (local ids, i < j) with sigmoid(h_i . h_j) > p_e."""
    ug = sub.user_graph()
    if ug.n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    h = encode_users(enc, ug, user_features(sub)).value
    prob = sigmoid_np(h @ h.T)
    cand = np.triu(prob > p_e, k=1) & (ug.dense() == 0)
    i, j = np.nonzero(cand)
    return np.stack([i, j], axis=1).astype(np.int64)


def ensure_predicted_type(g: HeteroGraph) -> tuple[list[EdgeType], int]:
    for t in g.edge_types:
        if t.name == PREDICTED:
            return list(g.edge_types), t.id
    ut = g.user_type
    types = list(g.edge_types) + [EdgeType(len(g.edge_types), PREDICTED, ut, ut)]
    return types, len(types) - 1


def add_predicted_edges(sub: Subgraph, pairs: np.ndarray) -> Subgraph:
    if len(pairs) == 0:
        return sub
    g = sub.graph
    types, tid = ensure_predicted_type(g)
    # user local ids coincide with node local ids (users come first)
    src = np.concatenate([g.src, pairs[:, 0]])
    dst = np.concatenate([g.dst, pairs[:, 1]])
    et = np.concatenate([g.etype, np.full(len(pairs), tid)])
    return replace(sub, graph=g.with_edges(src, dst, et, types))


# ---------------------------------------------------------------------------
# Synonym substitution
# ---------------------------------------------------------------------------


def substitute_tokens(seq, syn: SynonymDict, p_s: float, rng: np.random.Generator) -> tuple[int, ...]:
    out = []
    for tok in seq:
        subs = syn.get(tok)
        if subs and rng.random() < p_s:
            out.append(subs[int(rng.integers(len(subs)))])
        else:
            out.append(tok)
    return tuple(out)


def substitute_synonyms(sub: Subgraph, syn: SynonymDict, p_s: float, rng: np.random.Generator) -> Subgraph:
    if p_s == 0 or not syn:
        return sub
    g = sub.graph
    feats = list(g.features)
    changed = False
    for i, f in enumerate(feats):
        if not f.tokens:
            continue
        toks = tuple(substitute_tokens(seq, syn, p_s, rng) for seq in f.tokens)
        if toks != f.tokens:
            feats[i] = replace(f, tokens=toks)
            changed = True
    if not changed:
        return sub
    return replace(sub, graph=g.with_features(feats))


def augment_subgraph(
    sub: Subgraph,
    enc: CaEncoder,
    syn: SynonymDict,
    cfg: AugConfig,
    rng: np.random.Generator,
    rho: np.ndarray,
) -> Subgraph:
    """Feature shifting, then link prediction, then synonym substitution.

    Node ids and order are preserved so the original and augmented views are
    aligned row by row.
    """
    out = shift_features(sub, cfg, rho, rng)
    out = add_predicted_edges(out, predict_links(out, enc, cfg.p_e))
    return substitute_synonyms(out, syn, cfg.p_s, rng)
