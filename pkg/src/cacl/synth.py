"""Planted-community social graphs with bots, for desk-scale experiments.

Users form a stochastic block model.  Numeric features are Gaussian around a
block-level mean (users of one community look alike) plus a small class offset
shared by all bots, so bots are close to the humans of their own community and
further from bots elsewhere.  Each user posts a few texts whose tokens mix
common words, block topic words and class-flavoured words.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import SynonymDict
from .graph import EdgeType, HeteroGraph, NodeType, RawFeature, build_graph


@dataclass
class SynthSpec:
    blocks: int = 4
    users_per_block: int = 250
    p_in: float = 0.05
    p_out: float = 0.002
    bot_fraction: float | list[float] = 0.2
    numeric_dim: int = 8
    block_signal: float = 2.0
    class_signal: float = 0.5
    noise: float = 1.0
    categories: int = 4
    texts_per_user: int = 2
    tokens_per_text: int = 8
    vocab_size: int = 120
    topic_rate: float = 0.3
    class_word_rate: float = 0.1
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self):
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out < p_in <= 1")
        fr = self.bot_fractions()
        if len(fr) != self.blocks or any(not 0.0 <= f <= 1.0 for f in fr):
            raise ValueError("bot_fraction must be one value in [0, 1] or one per block")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.vocab_size < self.blocks * 4 + 8:
            raise ValueError("vocabulary too small for the topic layout")

    def bot_fractions(self) -> list[float]:
        f = self.bot_fraction
        return list(f) if isinstance(f, (list, tuple)) else [float(f)] * self.blocks

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path) as fh:
            data = json.load(fh)
        if "split" in data:
            data["split"] = tuple(data["split"])
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VocabLayout:
    common: np.ndarray
    topics: list[np.ndarray]
    class_words: list[np.ndarray] = field(default_factory=list)  # [human, bot]

    @classmethod
    def for_spec(cls, spec: SynthSpec) -> "VocabLayout":
        v = np.arange(spec.vocab_size)
        n_class = max(4, spec.vocab_size // 10)
        n_topic = max(4, (spec.vocab_size - 2 * n_class) // (2 * spec.blocks))
        cursor = 0
        class_words = []
        for _ in range(2):
            class_words.append(v[cursor : cursor + n_class])
            cursor += n_class
        topics = []
        for _ in range(spec.blocks):
            topics.append(v[cursor : cursor + n_topic])
            cursor += n_topic
        return cls(common=v[cursor:], topics=topics, class_words=class_words)

    def groups(self) -> list[np.ndarray]:
        return [self.common, *self.topics, *self.class_words]


def block_of(spec: SynthSpec) -> np.ndarray:
    return np.repeat(np.arange(spec.blocks), spec.users_per_block)


def sbm_edges(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Undirected SBM edges (i < j) over all users."""
    n = spec.blocks * spec.users_per_block
    blk = block_of(spec)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(blk[iu] == blk[ju], spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def generate_synth(spec: SynthSpec, rng: np.random.Generator) -> HeteroGraph:
    n_users = spec.blocks * spec.users_per_block
    blk = block_of(spec)

    labels = np.zeros(n_users, dtype=np.int64)
    for b, frac in enumerate(spec.bot_fractions()):
        members = np.flatnonzero(blk == b)
        n_bots = int(round(frac * len(members)))
        labels[rng.choice(members, size=n_bots, replace=False)] = 1

    perm = rng.permutation(n_users)
    cut1 = int(round(spec.split[0] * n_users))
    cut2 = cut1 + int(round(spec.split[1] * n_users))
    split = np.empty(n_users, dtype=object)
    split[perm[:cut1]] = "train"
    split[perm[cut1:cut2]] = "val"
    split[perm[cut2:]] = "test"

    d = spec.numeric_dim
    block_means = rng.normal(0.0, spec.block_signal, size=(spec.blocks, d))
    class_dir = rng.normal(0.0, 1.0, size=d)
    class_dir /= np.linalg.norm(class_dir)
    numeric = block_means[blk] + spec.noise * rng.normal(size=(n_users, d))
    numeric += np.where(labels[:, None] == 1, 0.5, -0.5) * spec.class_signal * class_dir
    # categorical "interest" column: mostly the block's own category
    cat = np.where(rng.random(n_users) < 0.7, blk % spec.categories, rng.integers(0, spec.categories, n_users))

    layout = VocabLayout.for_spec(spec)
    u = rng.random((n_users, spec.texts_per_user, spec.tokens_per_text))
    pick = rng.random((n_users, spec.texts_per_user, spec.tokens_per_text))
    texts = []
    for i in range(n_users):
        for t in range(spec.texts_per_user):
            seq = []
            for k in range(spec.tokens_per_text):
                if u[i, t, k] < spec.topic_rate:
                    group = layout.topics[blk[i]]
                elif u[i, t, k] < spec.topic_rate + spec.class_word_rate:
                    group = layout.class_words[labels[i]]
                else:
                    group = layout.common
                seq.append(int(group[int(pick[i, t, k] * len(group))]))
            texts.append((i, tuple(seq)))

    node_types = [NodeType(0, "user", d, (spec.categories,)), NodeType(1, "text", 0, ())]
    edge_types = [EdgeType(0, "follow", 0, 0), EdgeType(1, "post", 0, 1)]
    features = [RawFeature(tuple(float(x) for x in numeric[i]), (int(cat[i]),), ()) for i in range(n_users)]
    features += [RawFeature((), (), (seq,)) for _, seq in texts]
    node_type = [0] * n_users + [1] * len(texts)

    und = sbm_edges(spec, rng)
    flip = rng.random(len(und)) < 0.5
    follow = np.where(flip[:, None], und[:, ::-1], und)
    edges = [(int(s), int(t), 0) for s, t in follow]
    edges += [(owner, n_users + k, 1) for k, (owner, _) in enumerate(texts)]
    all_labels = list(labels) + [-1] * len(texts)
    all_split = list(split) + [None] * len(texts)
    return build_graph(node_types, edge_types, node_type, features, edges, all_labels, all_split)


def synth_synonyms(spec: SynthSpec, rng: np.random.Generator, per_token: int = 2) -> SynonymDict:
    """Synonyms stay within a vocabulary group, so substitution keeps topic and class flavour."""
    mapping = {}
    for group in VocabLayout.for_spec(spec).groups():
        if len(group) < 2:
            continue
        for tok in group:
            others = group[group != tok]
            mapping[int(tok)] = [int(x) for x in rng.choice(others, size=min(per_token, len(others)), replace=False)]
    return SynonymDict(mapping)
