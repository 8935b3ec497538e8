import json

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from cacl.graph import extract_user_graph
from cacl.synth import SynthSpec, VocabLayout, block_of, generate_synth, sbm_edges, synth_synonyms

SMALL = dict(blocks=3, users_per_block=40, vocab_size=60)


def test_no_cross_edges_gives_one_component_per_block():
    spec = SynthSpec(**SMALL, p_in=0.5, p_out=0.0)
    g = generate_synth(spec, np.random.default_rng(0))
    ug = extract_user_graph(g)
    n_comp, comp = connected_components(ug.adjacency, directed=False)
    assert n_comp == spec.blocks
    blk = block_of(spec)
    for b in range(spec.blocks):
        assert len(set(comp[blk == b])) == 1


def test_intra_block_edge_count_within_three_sigma():
    spec = SynthSpec(blocks=2, users_per_block=60, p_in=0.1, p_out=0.01)
    blk = block_of(spec)
    pairs = spec.blocks * spec.users_per_block * (spec.users_per_block - 1) // 2
    mean, sd = pairs * spec.p_in, np.sqrt(pairs * spec.p_in * (1 - spec.p_in))
    for seed in range(20):
        e = sbm_edges(spec, np.random.default_rng(seed))
        intra = int((blk[e[:, 0]] == blk[e[:, 1]]).sum())
        assert abs(intra - mean) <= 3 * sd


def test_label_counts_and_split_are_exact():
    spec = SynthSpec(**SMALL, bot_fraction=[0.1, 0.25, 0.5])
    g = generate_synth(spec, np.random.default_rng(3))
    users = g.user_ids
    blk = block_of(spec)
    y = g.labels[users]
    assert [int(y[blk == b].sum()) for b in range(3)] == [4, 10, 20]
    split = list(g.split[users])
    assert (split.count("train"), split.count("val"), split.count("test")) == (84, 12, 24)
    assert set(g.labels[g.node_type == 1]) == {-1}


def test_graph_shape():
    spec = SynthSpec(**SMALL)
    g = generate_synth(spec, np.random.default_rng(1))
    n_users = spec.blocks * spec.users_per_block
    assert len(g.user_ids) == n_users
    assert g.n == n_users * (1 + spec.texts_per_user)
    assert [e.name for e in g.edge_types] == ["follow", "post"]


def test_deterministic_per_seed():
    spec = SynthSpec(**SMALL)
    a = generate_synth(spec, np.random.default_rng(5))
    b = generate_synth(spec, np.random.default_rng(5))
    c = generate_synth(spec, np.random.default_rng(6))
    assert np.array_equal(a.src, b.src) and np.array_equal(a.dst, b.dst)
    assert a.features == b.features
    assert not (len(a.src) == len(c.src) and np.array_equal(a.src, c.src))


def test_spec_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        SynthSpec(p_in=0.01, p_out=0.02)
    with pytest.raises(ValueError):
        SynthSpec(bot_fraction=[0.2, 0.2])
    spec = SynthSpec(**SMALL, bot_fraction=[0.1, 0.2, 0.3])
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert SynthSpec.from_json(path) == spec


def test_synonyms_stay_in_group():
    spec = SynthSpec(**SMALL)
    syn = synth_synonyms(spec, np.random.default_rng(0))
    group_of = {}
    for k, grp in enumerate(VocabLayout.for_spec(spec).groups()):
        for t in grp:
            group_of[int(t)] = k
    for tok, alts in syn.items():
        assert alts and all(group_of[a] == group_of[tok] and a != tok for a in alts)
