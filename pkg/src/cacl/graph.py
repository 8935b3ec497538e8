"""Heterogeneous graph data model and dataset ingestion.

A :class:`HeteroGraph` holds typed nodes (with raw numeric, categorical and
token features) and typed directed edges.  Node ids are dense ``0..n-1``.
Graphs are treated as immutable; every transformation returns a new graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

SPLITS = ("train", "val", "test")
USER = "user"


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class NodeType:
    id: int
    name: str
    numeric_dim: int = 0
    cat_sizes: tuple[int, ...] = ()

    @property
    def dense_dim(self) -> int:
        return self.numeric_dim + sum(self.cat_sizes)


@dataclass(frozen=True)
class EdgeType:
    id: int
    name: str
    src_type: int
    dst_type: int


@dataclass(frozen=True)
class RawFeature:
    numeric: tuple[float, ...] = ()
    categorical: tuple[int, ...] = ()
    tokens: tuple[tuple[int, ...], ...] = ()


@dataclass(eq=False)
class HeteroGraph:
    node_types: list[NodeType]
    edge_types: list[EdgeType]
    node_type: np.ndarray  # (n,) type id per node
    features: list[RawFeature]
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    labels: np.ndarray  # (n,) -1 where absent
    split: np.ndarray  # (n,) object: "train" / "val" / "test" / None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.node_type)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def type_id(self, name: str) -> int:
        for t in self.node_types:
            if t.name == name:
                return t.id
        raise KeyError(f"unknown node type {name!r}")

    def edge_type_id(self, name: str) -> int:
        for t in self.edge_types:
            if t.name == name:
                return t.id
        raise KeyError(f"unknown edge type {name!r}")

    @property
    def user_type(self) -> int:
        return self.type_id(USER)

    @property
    def user_ids(self) -> np.ndarray:
        return np.flatnonzero(self.node_type == self.user_type)

    def nodes_of_type(self, tid: int) -> np.ndarray:
        return np.flatnonzero(self.node_type == tid)

    @property
    def vocab_size(self) -> int:
        if "vocab" not in self._cache:
            top = -1
            for f in self.features:
                for seq in f.tokens:
                    if seq:
                        top = max(top, max(seq))
            self._cache["vocab"] = top + 1
        return self._cache["vocab"]

    def dense_features(self, tid: int) -> np.ndarray:
        """Numeric block concatenated with one-hot categoricals, rows in id order."""
        key = ("dense", tid)
        if key not in self._cache:
            t = self.node_types[tid]
            ids = self.nodes_of_type(tid)
            out = np.zeros((len(ids), t.dense_dim))
            offsets = t.numeric_dim + np.concatenate([[0], np.cumsum(t.cat_sizes)[:-1]]).astype(int)
            for r, i in enumerate(ids):
                f = self.features[i]
                if t.numeric_dim:
                    out[r, : t.numeric_dim] = f.numeric
                for c, v in enumerate(f.categorical):
                    out[r, offsets[c] + v] = 1.0
            self._cache[key] = out
        return self._cache[key]

    def validate(self) -> None:
        names = [t.name for t in self.node_types]
        if len(set(names)) != len(names):
            raise DatasetError("duplicate node type names")
        if USER not in names:
            raise DatasetError("dataset has no 'user' node type")
        enames = [t.name for t in self.edge_types]
        if len(set(enames)) != len(enames):
            raise DatasetError("duplicate edge type names")
        n = self.n
        for i, t in enumerate(self.node_types):
            if t.id != i:
                raise DatasetError("node type ids must be dense and ordered")
        for i, t in enumerate(self.edge_types):
            if t.id != i:
                raise DatasetError("edge type ids must be dense and ordered")
            if not (0 <= t.src_type < len(self.node_types) and 0 <= t.dst_type < len(self.node_types)):
                raise DatasetError(f"edge type {t.name!r} references an unknown node type")
        for i, (tid, f) in enumerate(zip(self.node_type, self.features)):
            t = self.node_types[tid]
            if len(f.numeric) != t.numeric_dim:
                raise DatasetError(f"node {i}: numeric length {len(f.numeric)} != {t.numeric_dim}")
            if len(f.categorical) != len(t.cat_sizes):
                raise DatasetError(f"node {i}: expected {len(t.cat_sizes)} categorical values")
            for v, size in zip(f.categorical, t.cat_sizes):
                if not 0 <= v < size:
                    raise DatasetError(f"node {i}: category {v} out of range")
            if not all(np.isfinite(f.numeric)):
                raise DatasetError(f"node {i}: non-finite numeric feature")
            for seq in f.tokens:
                if any(tok < 0 for tok in seq):
                    raise DatasetError(f"node {i}: negative token id")
        if len(self.src):
            if self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= n:
                bad = int(max(self.src.max(), self.dst.max()))
                raise DatasetError(f"dangling edge endpoint {bad} (graph has {n} nodes)")
            et = np.array([(t.src_type, t.dst_type) for t in self.edge_types]).reshape(-1, 2)
            ok = (self.node_type[self.src] == et[self.etype, 0]) & (self.node_type[self.dst] == et[self.etype, 1])
            if not ok.all():
                k = int(np.flatnonzero(~ok)[0])
                raise DatasetError(f"edge {self.src[k]}->{self.dst[k]} inconsistent with its edge type")
        ut = self.user_type
        if ((self.labels >= 0) & (self.node_type != ut)).any():
            raise DatasetError("labels are only allowed on user nodes")
        if not np.isin(self.labels, (-1, 0, 1)).all():
            raise DatasetError("labels must be 0, 1 or null")
        for s in self.split:
            if s is not None and s not in SPLITS:
                raise DatasetError(f"unknown split tag {s!r}")

    def with_edges(self, src, dst, etype, edge_types=None) -> "HeteroGraph":
        return replace(
            self,
            src=np.asarray(src, dtype=np.int64),
            dst=np.asarray(dst, dtype=np.int64),
            etype=np.asarray(etype, dtype=np.int64),
            edge_types=list(edge_types if edge_types is not None else self.edge_types),
            _cache={},
        )

    def with_features(self, features: list[RawFeature]) -> "HeteroGraph":
        return replace(self, features=features, _cache={})


def build_graph(
    node_types: Sequence[NodeType],
    edge_types: Sequence[EdgeType],
    node_type: Iterable[int],
    features: Sequence[RawFeature],
    edges: Iterable[tuple[int, int, int]] = (),
    labels: Iterable[int] | None = None,
    split: Iterable[str | None] | None = None,
) -> HeteroGraph:
    node_type = np.asarray(list(node_type), dtype=np.int64)
    e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 3)
    n = len(node_type)
    g = HeteroGraph(
        node_types=list(node_types),
        edge_types=list(edge_types),
        node_type=node_type,
        features=list(features),
        src=e[:, 0].copy(),
        dst=e[:, 1].copy(),
        etype=e[:, 2].copy(),
        labels=np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(list(labels), dtype=np.int64),
        split=np.array([None] * n if split is None else list(split), dtype=object),
    )
    g.validate()
    return g


# ---------------------------------------------------------------------------
# JSON-lines I/O
# ---------------------------------------------------------------------------


def load_dataset(path) -> HeteroGraph:
    node_types: dict[str, dict] = {}
    edge_types: dict[str, dict] = {}
    nodes: dict[int, dict] = {}
    edges: list[tuple[int, int, str, int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
                if kind == "node_type":
                    node_types[rec["name"]] = rec
                elif kind == "edge_type":
                    for end in ("src_type", "dst_type"):
                        if rec[end] not in node_types:
                            raise DatasetError(f"edge type uses undeclared node type {rec[end]!r}")
                    edge_types[rec["name"]] = rec
                elif kind == "node":
                    if rec["type"] not in node_types:
                        raise DatasetError(f"node uses undeclared type {rec['type']!r}")
                    nid = int(rec["id"])
                    if nid in nodes:
                        raise DatasetError(f"duplicate node id {nid}")
                    nodes[nid] = rec
                elif kind == "edge":
                    if rec["type"] not in edge_types:
                        raise DatasetError(f"edge uses undeclared type {rec['type']!r}")
                    edges.append((int(rec["src"]), int(rec["dst"]), rec["type"], lineno))
                else:
                    raise DatasetError(f"unknown record kind {kind!r}")
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"line {lineno}: malformed record ({exc})") from None

    n = len(nodes)
    if sorted(nodes) != list(range(n)):
        raise DatasetError("node ids must be dense 0..n-1")
    tnames = list(node_types)
    tindex = {name: i for i, name in enumerate(tnames)}

    records = [nodes[i] for i in range(n)]
    ntypes = []
    for name in tnames:
        rec = node_types[name]
        members = [r for r in records if r["type"] == name]
        numeric_dim = rec.get("numeric_dim")
        if numeric_dim is None:
            numeric_dim = len(members[0].get("numeric") or []) if members else 0
        cat_sizes = rec.get("cat_sizes")
        if cat_sizes is None:
            ncat = len(members[0].get("categorical") or []) if members else 0
            cat_sizes = [
                1 + max([int((r.get("categorical") or [0] * ncat)[c]) for r in members] or [0])
                for c in range(ncat)
            ]
        ntypes.append(NodeType(tindex[name], name, int(numeric_dim), tuple(int(c) for c in cat_sizes)))
    enames = list(edge_types)
    eindex = {name: i for i, name in enumerate(enames)}
    etypes = [
        EdgeType(eindex[name], name, tindex[edge_types[name]["src_type"]], tindex[edge_types[name]["dst_type"]])
        for name in enames
    ]
    for s, d, _, lineno in edges:
        if not (0 <= s < n and 0 <= d < n):
            raise DatasetError(f"line {lineno}: dangling edge endpoint {d if 0 <= s < n else s} (graph has {n} nodes)")
    features = [
        RawFeature(
            tuple(float(x) for x in r.get("numeric") or ()),
            tuple(int(x) for x in r.get("categorical") or ()),
            tuple(tuple(int(t) for t in seq) for seq in r.get("tokens") or ()),
        )
        for r in records
    ]
    labels = [-1 if r.get("label") is None else int(r["label"]) for r in records]
    return build_graph(
        ntypes,
        etypes,
        [tindex[r["type"]] for r in records],
        features,
        [(s, d, eindex[t]) for s, d, t, _ in edges],
        labels,
        [r.get("split") for r in records],
    )


def save_dataset(g: HeteroGraph, path) -> None:
    with open(path, "w") as fh:
        for lines in _records(g):
            fh.write(json.dumps(lines) + "\n")


def _records(g: HeteroGraph):
    for t in g.node_types:
        yield {"kind": "node_type", "name": t.name, "numeric_dim": t.numeric_dim, "cat_sizes": list(t.cat_sizes)}
    for t in g.edge_types:
        yield {
            "kind": "edge_type",
            "name": t.name,
            "src_type": g.node_types[t.src_type].name,
            "dst_type": g.node_types[t.dst_type].name,
        }
    for i in range(g.n):
        f = g.features[i]
        yield {
            "kind": "node",
            "id": i,
            "type": g.node_types[g.node_type[i]].name,
            "numeric": list(f.numeric),
            "categorical": list(f.categorical),
            "tokens": [list(s) for s in f.tokens],
            "label": None if g.labels[i] < 0 else int(g.labels[i]),
            "split": g.split[i],
        }
    for s, d, t in zip(g.src, g.dst, g.etype):
        yield {"kind": "edge", "src": int(s), "dst": int(d), "type": g.edge_types[t].name}


# ---------------------------------------------------------------------------
# Derived structures
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class UserGraph:
    adjacency: sp.csr_matrix  # symmetric 0/1, zero diagonal
    user_ids: np.ndarray  # local index -> parent node id

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.nnz // 2)

    def edges(self) -> np.ndarray:
        """Undirected edges as (i, j) rows with i < j, sorted."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        e = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
        return e[np.lexsort((e[:, 1], e[:, 0]))]

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray()


def user_graph_from_edges(n: int, edges, user_ids=None) -> UserGraph:
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    a = a + a.T
    a.data[:] = 1.0
    a.eliminate_zeros()
    return UserGraph(a.tocsr(), np.arange(n) if user_ids is None else np.asarray(user_ids))


def extract_user_graph(g: HeteroGraph) -> UserGraph:
    users = g.user_ids
    if len(users) == 0:
        raise ValueError("graph has no user nodes")
    local = np.full(g.n, -1, dtype=np.int64)
    local[users] = np.arange(len(users))
    keep = (local[g.src] >= 0) & (local[g.dst] >= 0)
    pairs = np.stack([local[g.src[keep]], local[g.dst[keep]]], axis=1)
    return user_graph_from_edges(len(users), pairs, users)


@dataclass(eq=False)
class Subgraph:
    """Induced subgraph; local node ``i`` corresponds to ``parent_ids[i]``.

    Users come first (in the order requested), then their text neighbours.
    ``feature_mask`` holds per-type column masks applied to the dense features
    (set by feature shifting; ``None`` means unmasked).
    """

    parent_ids: np.ndarray
    graph: HeteroGraph
    user_count: int
    feature_mask: dict[int, np.ndarray] | None = None

    @property
    def users(self) -> np.ndarray:
        return self.parent_ids[: self.user_count]

    def dense_features(self, tid: int) -> np.ndarray:
        x = self.graph.dense_features(tid)
        if self.feature_mask is not None and tid in self.feature_mask:
            x = x * self.feature_mask[tid]
        return x

    def user_graph(self) -> UserGraph:
        return extract_user_graph(self.graph)


def induce_subgraph(g: HeteroGraph, user_ids) -> Subgraph:
    user_ids = np.asarray(user_ids, dtype=np.int64).ravel()
    if len(user_ids) == 0:
        raise ValueError("induce_subgraph needs at least one user")
    ut = g.user_type
    if (user_ids < 0).any() or (user_ids >= g.n).any() or (g.node_type[user_ids] != ut).any():
        raise ValueError("induce_subgraph: ids must be valid user nodes")
    if len(np.unique(user_ids)) != len(user_ids):
        raise ValueError("induce_subgraph: duplicate user ids")

    in_users = np.zeros(g.n, dtype=bool)
    in_users[user_ids] = True
    is_user = g.node_type == ut
    touch = (in_users[g.src] & ~is_user[g.dst]) | (in_users[g.dst] & ~is_user[g.src])
    others = np.unique(np.concatenate([g.dst[touch & in_users[g.src]], g.src[touch & in_users[g.dst]]]))
    parent_ids = np.concatenate([user_ids, others]).astype(np.int64)

    local = np.full(g.n, -1, dtype=np.int64)
    local[parent_ids] = np.arange(len(parent_ids))
    keep = (local[g.src] >= 0) & (local[g.dst] >= 0)
    sub = HeteroGraph(
        node_types=g.node_types,
        edge_types=g.edge_types,
        node_type=g.node_type[parent_ids],
        features=[g.features[i] for i in parent_ids],
        src=local[g.src[keep]],
        dst=local[g.dst[keep]],
        etype=g.etype[keep],
        labels=g.labels[parent_ids],
        split=g.split[parent_ids],
    )
    return Subgraph(parent_ids, sub, len(user_ids))


def zscore_normalize(g: HeteroGraph) -> HeteroGraph:
    """Column-wise z-score of numeric features within each node type.

    Uses the population standard deviation; zero-variance columns become 0.
    """
    feats = list(g.features)
    for t in g.node_types:
        if t.numeric_dim == 0:
            continue
        ids = g.nodes_of_type(t.id)
        if len(ids) == 0:
            continue
        x = np.array([g.features[i].numeric for i in ids], dtype=np.float64)
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        const = sd == 0.0
        z = (x - mu) / np.where(const, 1.0, sd)
        z[:, const] = 0.0
        for r, i in enumerate(ids):
            feats[i] = replace(feats[i], numeric=tuple(float(v) for v in z[r]))
    return g.with_features(feats)
