"""Subgraph pool, matched-subgraph selection and the community-aware contrastive loss.

Similarities are ``exp(cos(u, v) / tau)``.  For an anchor user ``i`` of
subgraph ``alpha`` (views ``alpha`` and ``alpha~``) matched to ``beta``:

* ``s_self``: the anchor against its own copy in the other view;
* ``s_pos``: half the sum over same-label users of both views of ``beta``;
* ``s_neg``: half the sum over different-label users of both views of ``alpha``;

and the per-node loss is ``-log((s_self + s_pos) / (s_self + s_pos + s_neg))``.
Labels are ``-1`` for users that must not act as positives or negatives.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Subgraph

LOSS_MODES = ("cacl_dynamic", "cacl_static", "supervised_all", "unsupervised")


@dataclass
class ContrastiveConfig:
    lam: float = 0.9
    temperature: float = 0.07

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(eq=False)
class SubgraphPool:
    subgraphs: list[Subgraph]
    mean_embeddings: np.ndarray | None = None
    partition: object = None
    batch: Subgraph | None = None
    local_members: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.subgraphs)

    def refresh(self, zs) -> None:
        """Recompute per-subgraph mean projections from one z matrix per subgraph."""
        self.mean_embeddings = np.vstack([np.asarray(z.value if isinstance(z, Tensor) else z).mean(axis=0) for z in zs])


def _cos_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    u = m / np.where(norms == 0, 1.0, norms)
    return u @ u.T


def match_subgraph(pool_or_means, alpha: int) -> int:
    """Index of the pool member least cosine-similar to ``alpha``; ties go to the lowest index."""
    means = pool_or_means.mean_embeddings if isinstance(pool_or_means, SubgraphPool) else pool_or_means
    means = np.asarray(means, dtype=np.float64)
    if len(means) < 2:
        raise ValueError("matching needs a pool of at least two subgraphs")
    sims = _cos_rows(means)[alpha].copy()
    sims[alpha] = np.inf
    return int(np.argmin(sims))


def match_all(means) -> list[int]:
    return [match_subgraph(means, a) for a in range(len(means))]


# ---------------------------------------------------------------------------
# Reference per-node loss (plain loops)
# ---------------------------------------------------------------------------


def _sim(u, v, tau):
    return math.exp(float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))) / tau)


def contrastive_node_loss(z_alpha, z_alpha_tilde, z_beta, z_beta_tilde, labels_alpha, labels_beta, i, cfg, anchor_tilde=False) -> float:
    """Per-node loss for user ``i`` of ``alpha``; with ``anchor_tilde`` the anchor is its augmented copy."""
    za, zat = np.asarray(z_alpha), np.asarray(z_alpha_tilde)
    zb, zbt = np.asarray(z_beta), np.asarray(z_beta_tilde)
    tau = cfg.temperature
    yi = labels_alpha[i]
    if yi < 0:
        raise ValueError("anchor must be labelled")
    anchor = zat[i] if anchor_tilde else za[i]
    other = za[i] if anchor_tilde else zat[i]
    s_self = _sim(anchor, other, tau)
    s_pos = 0.0
    for view in (zb, zbt):
        for j in range(len(view)):
            if labels_beta[j] == yi:
                s_pos += 0.5 * _sim(anchor, view[j], tau)
    s_neg = 0.0
    for view in (za, zat):
        for j in range(len(view)):
            if j != i and labels_alpha[j] >= 0 and labels_alpha[j] != yi:
                s_neg += 0.5 * _sim(anchor, view[j], tau)
    return -math.log((s_self + s_pos) / (s_self + s_pos + s_neg))


# ---------------------------------------------------------------------------
# Vectorised differentiable loss
# ---------------------------------------------------------------------------


def _pair_masks(mode: str, ya: np.ndarray, yb: np.ndarray):
    """(anchor rows, pos_own, neg_own, pos_matched, neg_matched); ``None`` marks an empty mask."""
    la, lb = ya >= 0, yb >= 0
    same_ab = (ya[:, None] == yb[None, :]) & la[:, None] & lb[None, :]
    diff_ab = (ya[:, None] != yb[None, :]) & la[:, None] & lb[None, :]
    same_aa = (ya[:, None] == ya[None, :]) & la[:, None] & la[None, :]
    diff_aa = (ya[:, None] != ya[None, :]) & la[:, None] & la[None, :]
    np.fill_diagonal(same_aa, False)
    if mode in ("cacl", "cacl_dynamic", "cacl_static"):
        return np.flatnonzero(la), None, diff_aa, same_ab, None
    if mode == "supervised_all":
        return np.flatnonzero(la), same_aa, diff_aa, same_ab, diff_ab
    if mode == "unsupervised":
        own = ~np.eye(len(ya), dtype=bool)
        return np.arange(len(ya)), None, own, None, np.ones((len(ya), len(yb)), dtype=bool)
    raise ValueError(f"unknown loss mode {mode!r}")


def _masked_rowsum(anchor: Tensor, others: list[Tensor], mask, tau: float):
    if mask is None or not mask.any():
        return None
    m = mask.astype(np.float64)
    acc = None
    for o in others:
        e = ad.mul(ad.exp(ad.scale(ad.matmul(anchor, ad.transpose(o)), 1.0 / tau)), m)
        part = ad.sum_rows(e)
        acc = part if acc is None else ad.add(acc, part)
    return ad.scale(acc, 0.5)


def anchor_loss_sum(
    z_alpha: Tensor,
    z_alpha_tilde: Tensor,
    z_beta: Tensor,
    z_beta_tilde: Tensor,
    labels_alpha,
    labels_beta,
    cfg: ContrastiveConfig,
    mode: str = "cacl",
) -> Tensor | None:
    """Sum over anchor users of the loss anchored at ``alpha`` plus the loss anchored at ``alpha~``."""
    ya = np.asarray(labels_alpha, dtype=np.int64)
    yb = np.asarray(labels_beta, dtype=np.int64)
    anchors, pos_own, neg_own, pos_m, neg_m = _pair_masks(mode, ya, yb)
    if len(anchors) == 0:
        return None
    tau = cfg.temperature
    ua, uat = ad.row_normalize(z_alpha), ad.row_normalize(z_alpha_tilde)
    ub, ubt = ad.row_normalize(z_beta), ad.row_normalize(z_beta_tilde)
    s_self = ad.exp(ad.scale(ad.sum_rows(ad.mul(ua, uat)), 1.0 / tau))
    total = None
    for anchor in (ua, uat):
        num = s_self
        for part in (_masked_rowsum(anchor, [ua, uat], pos_own, tau), _masked_rowsum(anchor, [ub, ubt], pos_m, tau)):
            if part is not None:
                num = ad.add(num, part)
        den = num
        for part in (_masked_rowsum(anchor, [ua, uat], neg_own, tau), _masked_rowsum(anchor, [ub, ubt], neg_m, tau)):
            if part is not None:
                den = ad.add(den, part)
        per_node = ad.sub(ad.log(den), ad.log(num))
        term = ad.sum_all(ad.rows(per_node, anchors))
        total = term if total is None else ad.add(total, term)
    return total


def pair_contrastive_loss(z_alpha, z_alpha_tilde, z_beta, z_beta_tilde, labels_alpha, labels_beta, cfg, mode="cacl") -> Tensor:
    """One subgraph's contribution: ``1/(2 N_alpha)`` times the anchor loss sum."""
    s = anchor_loss_sum(z_alpha, z_alpha_tilde, z_beta, z_beta_tilde, labels_alpha, labels_beta, cfg, mode)
    if s is None:
        return ad.constant(0.0)
    return ad.scale(s, 1.0 / (2.0 * z_alpha.shape[0]))


def contrastive_loss(views, cfg: ContrastiveConfig, mode: str = "cacl", matches=None) -> Tensor:
    """Pool-level loss.

    ``views`` is a list of ``(z, z_tilde, labels)`` triples, one per subgraph.
    Matches default to the least-similar subgraph by mean original-view z.
    A single-subgraph pool yields 0 with a warning.
    """
    if len(views) < 2:
        warnings.warn("contrastive_loss: single-subgraph pool, no matched subgraph; loss is 0", stacklevel=2)
        return ad.constant(0.0)
    if matches is None:
        means = np.vstack([ad.constant(z).value.mean(axis=0) for z, _, _ in views])
        matches = match_all(means)
    total = ad.constant(0.0)
    for a, b in enumerate(matches):
        za, zat, ya = views[a]
        zb, zbt, yb = views[b]
        total = ad.add(total, pair_contrastive_loss(ad.constant(za), ad.constant(zat), ad.constant(zb), ad.constant(zbt), ya, yb, cfg, mode))
    return total


def total_loss(l_contrast, l_classify, cfg: ContrastiveConfig):
    """``lambda * L_contrast + (1 - lambda) * L_classify``; works on floats or tensors."""
    if isinstance(l_contrast, Tensor) or isinstance(l_classify, Tensor):
        return ad.add(ad.scale(ad.constant(l_contrast), cfg.lam), ad.scale(ad.constant(l_classify), 1.0 - cfg.lam))
    return cfg.lam * l_contrast + (1.0 - cfg.lam) * l_classify
