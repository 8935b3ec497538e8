import numpy as np
import pytest

from cacl.graph import EdgeType, NodeType, RawFeature, build_graph


def tiny_graph(user_edges=(), n_users=3, texts=(), labels=None, split=None, numeric=None):
    """Users 0..n_users-1 then one text node per (owner, tokens) entry in ``texts``."""
    node_types = [NodeType(0, "user", 2, (3,)), NodeType(1, "text", 0, ())]
    edge_types = [EdgeType(0, "follow", 0, 0), EdgeType(1, "friend", 0, 0), EdgeType(2, "post", 0, 1)]
    if numeric is None:
        numeric = [(float(i), float(i % 2)) for i in range(n_users)]
    feats = [RawFeature(tuple(numeric[i]), (i % 3,), ()) for i in range(n_users)]
    feats += [RawFeature((), (), (tuple(tok),)) for _, tok in texts]
    edges = [(s, d, t) for s, d, t in user_edges]
    edges += [(owner, n_users + k, 2) for k, (owner, _) in enumerate(texts)]
    n = n_users + len(texts)
    if labels is None:
        labels = [i % 2 for i in range(n_users)]
    labels = list(labels) + [-1] * len(texts)
    if split is None:
        split = ["train"] * n_users
    split = list(split) + [None] * len(texts)
    return build_graph(node_types, edge_types, [0] * n_users + [1] * len(texts), feats, edges, labels, split)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
