import numpy as np
from hypothesis import given, settings, strategies as st

from scjd.skeleton import SkeletonTopology, adjacency_mask, build_h36m17, validate


def test_h36m17_is_valid_tree():
    topo = build_h36m17()
    assert validate(topo) == []
    assert topo.num_joints == 17 and len(topo.edges) == 16


def test_mask_symmetric_with_49_nonzeros():
    m = adjacency_mask(build_h36m17())
    assert np.array_equal(m, m.T)
    assert int(m.sum()) == 49
    assert int(adjacency_mask(build_h36m17(), include_self=False).sum()) == 32


def test_mask_matches_brute_force_edge_lookup():
    topo = build_h36m17()
    m = adjacency_mask(topo)
    edges = set(topo.edges)
    for a in range(17):
        for b in range(17):
            want = a == b or (a, b) in edges or (b, a) in edges
            assert m[a, b] == float(want)


def test_degree_sums_to_twice_edges():
    topo = build_h36m17()
    assert sum(topo.degree(j) for j in range(17)) == 32
    assert topo.degree(8) == 4  # thorax: spine, neck, both shoulders


def test_flip_permutation_is_involution():
    perm = build_h36m17().flip_permutation()
    assert np.array_equal(perm[perm], np.arange(17))
    assert perm[1] == 4 and perm[13] == 16 and perm[0] == 0


def test_validate_flags_cycles_ranges_and_disconnection():
    base = build_h36m17()
    d = base.to_dict()
    d["edges"][-1] = [15, 14]  # removes 16's bone, closes a loop
    problems = validate(SkeletonTopology.from_dict(d))
    assert any("cycle" in p for p in problems) and "not connected" in problems

    d = base.to_dict()
    d["edges"][0] = [0, 99]
    assert any("out of range" in p for p in validate(SkeletonTopology.from_dict(d)))

    d = base.to_dict()
    d["left_right_pairs"].append([4, 2])
    assert any("twice" in p for p in validate(SkeletonTopology.from_dict(d)))


def test_json_round_trip(tmp_path):
    topo = build_h36m17()
    topo.save(tmp_path / "t.json")
    back = SkeletonTopology.load(tmp_path / "t.json")
    assert back == topo
    np.testing.assert_array_equal(back.rest_offsets(), topo.rest_offsets())


def test_rest_offsets_have_bone_lengths():
    topo = build_h36m17()
    lengths = np.linalg.norm(topo.rest_offsets()[1:], axis=1)
    np.testing.assert_allclose(lengths, topo.bone_lengths_mm, rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_random_trees_validate_and_mask_counts(j, seed):
    rng = np.random.default_rng(seed)
    parent = [0] + [int(rng.integers(0, c)) for c in range(1, j)]
    topo = SkeletonTopology(j, tuple((parent[c], c) for c in range(1, j)), tuple(parent), tuple(map(str, range(j))))
    assert validate(topo) == []
    m = adjacency_mask(topo)
    assert int(m.sum()) == j + 2 * (j - 1)
