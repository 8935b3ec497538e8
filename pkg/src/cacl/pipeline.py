"""Training orchestration: pretrain, batch, detect communities, augment, contrast, classify."""

from __future__ import annotations

import csv
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import AugConfig, SynonymDict, augment_subgraph, pagerank
from .community import (
    CaConfig,
    CaEncoder,
    cluster_to_k,
    encode_users,
    louvain_k,
    pretrain_ca,
)
from .contrast import LOSS_MODES, ContrastiveConfig, SubgraphPool, match_all, pair_contrastive_loss
from .encoder import Classifier, HeteroEncoder, ProjectionHead, forward, project, user_input_matrix
from .graph import HeteroGraph, Subgraph, extract_user_graph, induce_subgraph, zscore_normalize
from .metrics import binary_scores, community_entropy, cosine_tracks

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "cacl-model"
DESK_OVERRIDES = {"lr": 5e-3, "dropout": 0.1}


@dataclass
class TrainConfig:
    lam: float = 0.9
    temperature: float = 0.07
    lr: float = 1e-4
    layers: int = 2
    dropout: float = 0.5
    batch_users: int = 1000
    epochs: int = 50
    seed: int = 0
    backbone: str = "rsage"
    beta: float = 1.0
    gamma: float = 0.5
    neg_samples_per_edge: int = 1
    p_f: float = 0.3
    p_tau: float = 0.7
    p_e: float = 0.95
    p_s: float = 0.2
    damping: float = 0.85
    loss_mode: str = "cacl_dynamic"
    hidden: int = 32
    proj_dim: int = 32
    embed_dim: int = 16
    proj_nonlinear: bool = False
    pretrain_epochs: int = 100
    ca_lr: float = 5e-3

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.layers < 1 or self.hidden < 1 or self.batch_users < 1 or self.epochs < 0:
            raise ValueError("layers, hidden, batch_users must be positive; epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        # component configs validate their own ranges
        self.ca_config(), self.aug_config(), self.contrast_config()

    def ca_config(self) -> CaConfig:
        return CaConfig(self.beta, self.gamma, self.neg_samples_per_edge)

    def aug_config(self) -> AugConfig:
        return AugConfig(self.p_f, self.p_tau, self.p_e, self.p_s, self.damping)

    def contrast_config(self) -> ContrastiveConfig:
        return ContrastiveConfig(self.lam, self.temperature)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Defaults with the step size and dropout used for 1000-user synthetic runs.

        With only a few optimiser steps per epoch, lr=1e-4 barely moves the
        weights in 50 epochs, and dropout 0.5 on both views at tau=0.07 lets
        the contrastive term collapse every embedding onto one direction.
        """
        kw = dict(DESK_OVERRIDES)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    accuracy: float = float("nan")
    f1: float = float("nan")
    mcc: float = float("nan")
    split: str = "test"
    best_epoch: int = 0
    best_val_mcc: float = float("nan")
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    pretrain: list[dict] = field(default_factory=list)

    @property
    def entropy(self) -> list[float]:
        return [e["entropy"] for e in self.epochs]

    def track(self, name: str) -> list[float | None]:
        return [e[f"cos_{name}"] for e in self.epochs]

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        """Write the report as JSON plus per-epoch, per-step and pretraining CSV sidecars."""
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
        stem = path.with_suffix("")
        for name, rows in (("epochs", self.epochs), ("steps", self.steps), ("pretrain", self.pretrain)):
            if rows:
                write_csv(f"{stem}.{name}.csv", rows)


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Model container and checkpoints
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Model:
    ca: CaEncoder
    enc: HeteroEncoder
    head: ProjectionHead
    clf: Classifier
    cfg: TrainConfig

    @classmethod
    def init(cls, g: HeteroGraph, cfg: TrainConfig, rng: np.random.Generator) -> "Model":
        ut = g.node_types[g.user_type]
        has_text = any(f.tokens for i, f in enumerate(g.features) if g.node_type[i] == g.user_type)
        d_user = ut.dense_dim + (cfg.embed_dim if has_text and g.vocab_size > 0 else 0)
        ca = CaEncoder.init(max(d_user, 1), cfg.hidden, cfg.layers, rng)
        enc = HeteroEncoder.init(g, ca, cfg.hidden, cfg.layers, rng, cfg.backbone, cfg.embed_dim, cfg.dropout)
        head = ProjectionHead.init(cfg.hidden, cfg.proj_dim, rng, cfg.proj_nonlinear)
        clf = Classifier.init(cfg.hidden, rng)
        return cls(ca, enc, head, clf, cfg)

    def params(self) -> list[ad.Param]:
        return ad._unique([*self.ca.params(), *self.enc.params(), *self.head.params(), *self.clf.params()])

    def trainable(self) -> list[ad.Param]:
        """Parameters updated by the contrastive/classification objective (CA layers excluded)."""
        return ad._unique([*self.enc.params(), *self.head.params(), *self.clf.params()])

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for p in self.params():
            p.value = snap[p.name].copy()

    def to_checkpoint(self) -> dict:
        data = ad.params_to_dict(self.params())
        data["kind"] = CHECKPOINT_KIND
        data["config"] = self.cfg.to_dict()
        return data

    @classmethod
    def from_checkpoint(cls, data: dict, g: HeteroGraph) -> "Model":
        if data.get("kind") != CHECKPOINT_KIND:
            raise ValueError("not a model checkpoint")
        cfg = TrainConfig.from_dict(data["config"])
        model = cls.init(g, cfg, np.random.default_rng(0))
        ad.load_params_dict(data, model.params())
        return model


def save_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def ca_checkpoint(ca: CaEncoder, cfg: TrainConfig, history=None) -> dict:
    data = ad.params_to_dict(ca.params())
    data["kind"] = "cacl-ca"
    data["config"] = cfg.to_dict()
    data["history"] = history or []
    return data


# ---------------------------------------------------------------------------
# Batching and pools
# ---------------------------------------------------------------------------


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "pretrain", "batch", "augment", "dropout")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def sample_batch(g: HeteroGraph, n_users: int, rng: np.random.Generator, ug=None) -> Subgraph:
    """Breadth-first expansion over the user graph from random labelled seeds."""
    ug = ug if ug is not None else extract_user_graph(g)
    total = ug.n
    if not 1 <= n_users <= total:
        raise ValueError(f"n_users must lie in [1, {total}]")
    adj = ug.adjacency
    labelled = g.labels[ug.user_ids] >= 0
    visited = np.zeros(total, dtype=bool)
    picked: list[int] = []
    while len(picked) < n_users:
        pool = np.flatnonzero(~visited & labelled)
        if len(pool) == 0:
            pool = np.flatnonzero(~visited)
        seed = int(rng.choice(pool))
        visited[seed] = True
        queue = deque([seed])
        while queue and len(picked) < n_users:
            u = queue.popleft()
            picked.append(u)
            for v in adj.indices[adj.indptr[u] : adj.indptr[u + 1]]:
                if not visited[v]:
                    visited[v] = True
                    queue.append(int(v))
    return induce_subgraph(g, ug.user_ids[np.asarray(picked)])


def build_pool(
    g: HeteroGraph,
    batch: Subgraph,
    ca: CaEncoder,
    enc: HeteroEncoder,
    k_cache: dict | None = None,
) -> SubgraphPool:
    """Louvain fixes k, the community encoder's cosines drive the merge, one subgraph per community."""
    ug = batch.user_graph()
    key = tuple(sorted(batch.users.tolist()))
    if k_cache is not None and key in k_cache:
        k = k_cache[key]
    else:
        k = louvain_k(ug) if ug.edge_count else ug.n
        if k_cache is not None:
            k_cache[key] = k
    h = encode_users(ca, ug, user_input_matrix(enc, batch)).value
    part = cluster_to_k(ug, h, k)
    subs = [induce_subgraph(g, batch.users[m]) for m in part.members]
    return SubgraphPool(subs, partition=part, batch=batch, local_members=part.members)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _train_labels(sub: Subgraph) -> np.ndarray:
    y = sub.graph.labels[: sub.user_count].copy()
    y[sub.graph.split[: sub.user_count] != "train"] = -1
    return y


def _all_labels(sub: Subgraph) -> np.ndarray:
    return sub.graph.labels[: sub.user_count].copy()


def _embed(model: Model, sub: Subgraph, dropout_on: bool = False, rng=None):
    h = forward(model.enc, sub, dropout_on, rng)
    return h, project(model.head, h)


def predict(model: Model, g: HeteroGraph, full: Subgraph | None = None) -> np.ndarray:
    """Predicted class per user (rows in ``g.user_ids`` order), no dropout."""
    full = full if full is not None else induce_subgraph(g, g.user_ids)
    h = forward(model.enc, full, False)
    logits = ad.linear(h, model.clf.w_c).value
    return logits.argmax(axis=1)


def evaluate(model: Model, g: HeteroGraph, split: str = "test", full: Subgraph | None = None, normalized: bool = False) -> MetricsReport:
    """Accuracy, F1 (bot positive) and MCC over the labelled users of one split."""
    if not normalized:
        g = zscore_normalize(g)
    users = g.user_ids
    mask = (g.split[users] == split) & (g.labels[users] >= 0)
    if not mask.any():
        raise ValueError(f"split {split!r} has no labelled users")
    pred = predict(model, g, full)
    s = binary_scores(g.labels[users][mask], pred[mask])
    return MetricsReport(s["accuracy"], s["f1"], s["mcc"], split=split)


def pretrain(model: Model, g: HeteroGraph, cfg: TrainConfig, rng: np.random.Generator):
    full = induce_subgraph(g, g.user_ids)
    ug = full.user_graph()
    if ug.edge_count == 0:
        return []
    x = user_input_matrix(model.enc, full)
    _, history = pretrain_ca(model.ca, ug, x, cfg.ca_config(), cfg.pretrain_epochs, rng, lr=cfg.ca_lr)
    return history


def train(
    g: HeteroGraph,
    cfg: TrainConfig,
    synonyms: SynonymDict | None = None,
    ca_state: dict | None = None,
) -> tuple[dict, MetricsReport]:
    """Full run: pretrain the community module, then contrastive + supervised training.

    Returns the checkpoint of the epoch with the best validation MCC and a
    report holding its test scores plus per-epoch diagnostics.
    """
    g = zscore_normalize(g)
    rngs = _streams(cfg.seed)
    synonyms = synonyms or SynonymDict()
    model = Model.init(g, cfg, rngs["init"])
    report = MetricsReport()

    if ca_state is not None:
        ad.load_params_dict(ca_state, model.ca.params())
    elif cfg.pretrain_epochs > 0:
        report.pretrain = pretrain(model, g, cfg, rngs["pretrain"])

    static_ca = model.ca.frozen_copy() if cfg.loss_mode == "cacl_static" else None
    ug_full = extract_user_graph(g)
    rho_full = pagerank(ug_full, cfg.damping)
    rho_of = np.zeros(g.n)
    rho_of[ug_full.user_ids] = rho_full
    full = induce_subgraph(g, g.user_ids)
    ccfg = cfg.contrast_config()
    acfg = cfg.aug_config()
    opt = ad.Adam(model.trainable(), lr=cfg.lr)
    k_cache: dict = {}
    n_batches = int(np.ceil(ug_full.n / cfg.batch_users))
    best = (-np.inf, 0, model.snapshot())
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        entropies, sums = [], {"contrast": 0.0, "classify": 0.0, "total": 0.0}
        n_steps = 0
        last_pool = None
        for _ in range(n_batches):
            batch = sample_batch(g, min(cfg.batch_users, ug_full.n), rngs["batch"], ug_full)
            ca = static_ca if static_ca is not None else model.ca
            pool = build_pool(g, batch, ca, model.enc, k_cache)
            entropies.append(community_entropy([_all_labels(s) for s in pool.subgraphs]))
            pool.refresh([_embed(model, s)[1] for s in pool.subgraphs])
            matches = match_all(pool.mean_embeddings) if len(pool) > 1 else [None]
            last_pool = pool
            for a, b in enumerate(matches):
                sa = pool.subgraphs[a]
                aug_a = augment_subgraph(sa, ca, synonyms, acfg, rngs["augment"], rho_of[sa.users])
                ya = _train_labels(sa)
                opt.zero_grad()
                drop = rngs["dropout"]
                ha, za = _embed(model, sa, True, drop)
                hat, zat = _embed(model, aug_a, True, drop)
                if b is not None:
                    sb = pool.subgraphs[b]
                    aug_b = augment_subgraph(sb, ca, synonyms, acfg, rngs["augment"], rho_of[sb.users])
                    _, zb = _embed(model, sb, True, drop)
                    _, zbt = _embed(model, aug_b, True, drop)
                    l_con = pair_contrastive_loss(za, zat, zb, zbt, ya, _train_labels(sb), ccfg, cfg.loss_mode)
                else:
                    l_con = ad.constant(0.0)
                rows = np.flatnonzero(ya >= 0)
                if len(rows):
                    logits = ad.linear(ad.vstack([ad.rows(ha, rows), ad.rows(hat, rows)]), model.clf.w_c)
                    l_cls = ad.softmax_cross_entropy(logits, np.concatenate([ya[rows], ya[rows]]))
                else:
                    l_cls = ad.constant(0.0)
                loss = ad.add(ad.scale(l_con, ccfg.lam), ad.scale(l_cls, 1.0 - ccfg.lam))
                if not np.isfinite(loss.item()):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, step {step}: "
                        f"L_contrast={l_con.item()}, L_classify={l_cls.item()}"
                    )
                if loss.requires_grad:
                    ad.backward(loss)
                    opt.step()
                step += 1
                n_steps += 1
                row = {
                    "step": step,
                    "epoch": epoch,
                    "L_contrast": l_con.item(),
                    "L_classify": l_cls.item(),
                    "L_CL": loss.item(),
                }
                report.steps.append(row)
                sums["contrast"] += row["L_contrast"]
                sums["classify"] += row["L_classify"]
                sums["total"] += row["L_CL"]

        # diagnostics on the epoch's last pool with the updated parameters
        zs = [_embed(model, s)[1].value for s in last_pool.subgraphs]
        ms = match_all(np.vstack([z.mean(axis=0) for z in zs])) if len(zs) > 1 else [None]
        tracks = cosine_tracks(zs, [_all_labels(s) for s in last_pool.subgraphs], ms)
        val = evaluate(model, g, "val", full, normalized=True)
        row = {
            "epoch": epoch,
            "k": len(last_pool),
            "entropy": float(np.mean(entropies)),
            "cos_positive": tracks["positive"],
            "cos_negative": tracks["negative"],
            "cos_within": tracks["within"],
            "cos_between": tracks["between"],
            "L_contrast": sums["contrast"] / max(n_steps, 1),
            "L_classify": sums["classify"] / max(n_steps, 1),
            "L_CL": sums["total"] / max(n_steps, 1),
            "val_accuracy": val.accuracy,
            "val_f1": val.f1,
            "val_mcc": val.mcc,
        }
        report.epochs.append(row)
        log.info("epoch %d: %s", epoch, row)
        if val.mcc > best[0]:
            best = (val.mcc, epoch, model.snapshot())

    model.restore(best[2])
    test = evaluate(model, g, "test", full, normalized=True)
    report.accuracy, report.f1, report.mcc = test.accuracy, test.f1, test.mcc
    report.best_epoch, report.best_val_mcc = best[1], float(best[0])
    return model.to_checkpoint(), report
