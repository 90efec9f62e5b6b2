import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lioforge.ikd_tree import IkdTree, voxel_filter


def oracle_knn(live, q, k, max_dist=np.inf):
    """Linear scan with the same (d, x, y, z) tie order as the tree."""
    if len(live) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    t = live - q
    d2 = t[:, 0] * t[:, 0] + t[:, 1] * t[:, 1] + t[:, 2] * t[:, 2]
    order = np.lexsort((live[:, 2], live[:, 1], live[:, 0], d2))
    order = order[d2[order] <= max_dist ** 2][:k]
    return live[order], d2[order]


def assert_knn_equal(tree, live, q, k, max_dist=np.inf):
    res = tree.knn(q, k, max_dist)
    pts, d2 = oracle_knn(live, q, k, max_dist)
    np.testing.assert_array_equal(res.points, pts)
    np.testing.assert_array_equal(res.sq_dists, d2)


def sorted_rows(a):
    a = np.asarray(a).reshape(-1, 3)
    return a[np.lexsort(a.T[::-1])]


def test_build_empty():
    t = IkdTree.build([])
    assert len(t) == 0 and t.depth() == 0
    assert len(t.knn([0, 0, 0], 3)) == 0


def test_build_unit_cube():
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    t = IkdTree.build(cube)
    assert len(t) == 8 and t.depth() <= 4
    t.check_invariants()


def test_build_deduplicates():
    t = IkdTree.build(np.array([[1.0, 2, 3], [1.0, 2, 3], [0.0, 0, 0]]))
    assert len(t) == 2


def test_build_10k_matches_oracle(rng):
    pts = rng.uniform(-10, 10, (10_000, 3))
    t = IkdTree.build(pts)
    q = rng.uniform(-12, 12, (1000, 3))
    idx, d2, cnt = t.knn_batch(q, 5)
    for i in range(len(q)):
        p, d = oracle_knn(pts, q[i], 5)
        np.testing.assert_array_equal(t.points_of(idx[i, :cnt[i]]), p)
        np.testing.assert_array_equal(d2[i, :cnt[i]], d)


def test_single_point_queries():
    t = IkdTree()
    assert t.insert([[1.0, 2.0, 3.0]]) == 1
    r = t.knn([0, 0, 0], 5)
    np.testing.assert_array_equal(r.points, [[1.0, 2.0, 3.0]])
    assert r.sq_dists[0] == 14.0
    assert len(t.knn([100, 0, 0], 1, max_dist=1.0)) == 0


def test_insert_and_interleaved_removals(rng):
    pts = rng.uniform(-5, 5, (1000, 3))
    t = IkdTree()
    live = []
    removed = 0
    for i, p in enumerate(pts):
        t.insert(p)
        live.append(p)
        if i % 3 == 2 and removed < 300:
            j = rng.integers(len(live))
            assert t.remove(live.pop(j)) == 1
            removed += 1
        if i % 50 == 0:
            q = rng.uniform(-6, 6, 3)
            assert_knn_equal(t, np.array(live), q, 5)
    t.check_invariants()
    L = np.array(live)
    for q in rng.uniform(-6, 6, (200, 3)):
        assert_knn_equal(t, L, q, 5)
    np.testing.assert_array_equal(sorted_rows(t.live_points()), sorted_rows(L))


def test_remove_missing_is_noop(rng):
    t = IkdTree.build(rng.uniform(0, 1, (100, 3)))
    assert t.remove([[5.0, 5.0, 5.0]]) == 0
    assert len(t) == 100


def test_remove_tolerance_per_axis():
    t = IkdTree.build([[0.0, 0, 0], [1.0, 0, 0]])
    assert t.remove([[5e-7, -5e-7, 0]]) == 1
    assert t.remove([[1.0 + 2e-6, 0, 0]]) == 0
    assert len(t) == 1


def test_remove_box_everything_and_half_open(rng):
    pts = rng.uniform(0, 1, (500, 3))
    t = IkdTree.build(pts)
    assert t.remove_box([-1, -1, -1], [2, 2, 2]) == 500
    assert len(t) == 0 and len(t.knn([0.5, 0.5, 0.5], 3)) == 0
    t = IkdTree.build([[0.0, 0, 0], [1.0, 0, 0]])
    assert t.remove_box([0, -1, -1], [1, 1, 1]) == 1
    np.testing.assert_array_equal(t.live_points(), [[1.0, 0, 0]])


def test_remove_outside(rng):
    pts = rng.uniform(-2, 2, (400, 3))
    t = IkdTree.build(pts)
    lo, hi = np.array([-1.0, -1, -1]), np.array([1.0, 1, 1])
    t.remove_outside(lo, hi)
    inside = pts[np.all((pts >= lo) & (pts < hi), axis=1)]
    np.testing.assert_array_equal(sorted_rows(t.live_points()), sorted_rows(inside))


def test_rebuild_preserves_live_set(rng):
    t = IkdTree(balance_alpha=0.6, deletion_alpha=0.5)
    # sorted insertion forces balance rebuilds, mass deletion forces deletion rebuilds
    pts = np.column_stack([np.arange(600.0), np.zeros(600), np.zeros(600)])
    t.insert(pts)
    assert t.rebuild_count > 0
    t.check_invariants()
    before = t.rebuild_count
    t.remove(pts[:400])
    assert t.rebuild_count > before
    t.check_invariants()
    np.testing.assert_array_equal(sorted_rows(t.live_points()), pts[400:])
    assert t.deleted_count / max(t.node_count, 1) <= 0.5


def test_voxel_dropping_on_insert():
    t = IkdTree(voxel_size=0.4)
    assert t.insert([[0.1, 0.1, 0.1]]) == 1
    assert t.insert([[0.2, 0.3, 0.1]]) == 0
    assert t.insert([[0.5, 0.1, 0.1]]) == 1
    assert len(t) == 2
    kept = voxel_filter(np.array([[0.1, 0, 0], [0.2, 0, 0], [0.5, 0, 0]]), 0.4)
    np.testing.assert_array_equal(kept, [[0.1, 0, 0], [0.5, 0, 0]])


def test_stats_json(rng):
    t = IkdTree.build(rng.uniform(0, 1, (64, 3)))
    t.remove(t.live_points()[:10])
    s = json.loads(t.stats_json())
    assert s["size"] == 54 and s["deleted"] + s["size"] == s["nodes"]
    assert set(s) == {"size", "nodes", "depth", "deleted", "rebuilds"}


def test_argument_validation():
    with pytest.raises(ValueError):
        IkdTree(balance_alpha=1.2)
    with pytest.raises(ValueError):
        IkdTree(balance_alpha=0.4)
    t = IkdTree.build([[0.0, 0, 0]])
    with pytest.raises(ValueError):
        t.knn([0, 0, 0], 0)
    with pytest.raises(ValueError):
        t.knn([0, 0, 0], 1, max_dist=0.0)


def test_duplicate_insert_dropped():
    # exact duplicates are dropped, matching the deduplicated build
    t = IkdTree()
    assert t.insert([[1.0, 1, 1]]) == 1
    assert t.insert([[1.0, 1, 1]]) == 0
    assert len(t) == 1
    assert t.remove([[1.0, 1, 1]]) == 1 and len(t) == 0


ops = st.lists(
    st.tuples(st.sampled_from(["insert", "remove", "box", "knn"]),
              st.integers(0, 2**31 - 1)),
    min_size=1, max_size=25)


def check_program(seed, n0, program):
    """Replay build/insert/remove/box/knn operations against a list oracle."""
    rng = np.random.default_rng(seed)
    # coarse grid makes ties and duplicates common
    grid = lambda n: np.round(rng.uniform(-3, 3, (n, 3)) * 2) / 2
    base = np.unique(grid(n0), axis=0)
    t = IkdTree.build(base)
    live = [tuple(p) for p in base]
    for op, s in program:
        r = np.random.default_rng(s)
        if op == "insert":
            new = np.round(r.uniform(-3, 3, (r.integers(1, 8), 3)) * 2) / 2
            new = [tuple(p) for p in np.unique(new, axis=0) if tuple(p) not in set(live)]
            t.insert(np.array(new).reshape(-1, 3))
            live += new
        elif op == "remove" and live:
            pick = [live[i] for i in r.choice(len(live), min(len(live), 3), replace=False)]
            assert t.remove(np.array(pick)) == len(pick)
            live = [p for p in live if p not in set(pick)]
        elif op == "box":
            lo = r.uniform(-3, 2, 3)
            hi = lo + r.uniform(0.2, 2, 3)
            inbox = [p for p in live if all(lo[a] <= p[a] < hi[a] for a in range(3))]
            assert t.remove_box(lo, hi) == len(inbox)
            live = [p for p in live if p not in set(inbox)]
        else:
            q = np.round(r.uniform(-3.5, 3.5, 3) * 4) / 4
            k = int(r.integers(1, 7))
            md = float(r.choice([np.inf, 1.0, 2.5]))
            assert_knn_equal(t, np.array(live).reshape(-1, 3), q, k, md)
    t.check_invariants()
    assert len(t) == len(live)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 60), ops)
def test_interleaving_matches_oracle(seed, n0, program):
    check_program(seed, n0, program)
