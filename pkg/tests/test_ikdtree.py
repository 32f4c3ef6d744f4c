import math

import numpy as np
import pytest

from liomap.geometry import AlignedCuboid
from liomap.ikdtree import (BalanceParams, IncrementalKdTree, TreeNode,
                            attribute_update, flatten, violates_criterion)
from reference import FlatPointMap


def height_bound(treesize, alpha_bal=0.6):
    if treesize <= 1:
        return 1.0
    return math.log(treesize) / math.log(1.0 / alpha_bal) + 1.0


# -- construction ------------------------------------------------------------

def test_build_empty():
    tree = IncrementalKdTree.build([])
    assert tree.size() == (0, 0)
    assert tree.height == 0
    assert tree.knn_search((0, 0, 0), 1) == []


def test_build_singleton():
    tree = IncrementalKdTree.build([(1.5, -2.0, 3.0)])
    assert tree.size() == (1, 1)
    root = tree._root
    assert root.axis == 0
    assert (root.min_x, root.min_y, root.min_z) == (1.5, -2.0, 3.0)
    assert (root.max_x, root.max_y, root.max_z) == (1.5, -2.0, 3.0)
    assert root.treesize == 1 and root.invalidnum == 0
    assert not root.deleted and not root.treedeleted


def test_build_rejects_nonfinite():
    with pytest.raises(ValueError):
        IncrementalKdTree.build([(0, 0, 0), (np.nan, 1, 1)])


def test_build_1000_height_and_membership():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-10, 10, (1000, 3))
    tree = IncrementalKdTree.build(pts)
    assert tree.size() == (1000, 1000)
    assert tree.height <= 11  # ceil(log2(1000)) + 1
    tree.check_consistency()
    for i in range(0, 1000, 17):
        res = tree.knn_search(pts[i], 1)
        assert len(res) == 1
        assert res[0][1] == 0.0


def test_build_perfectly_balanced_small_sizes():
    rng = np.random.default_rng(4)
    for n in (2, 3, 5, 7, 16, 33, 100):
        pts = rng.normal(size=(n, 3))
        tree = IncrementalKdTree.build(pts)
        assert tree.height <= math.ceil(math.log2(n)) + 1
        tree.check_consistency()


# -- point insertion ---------------------------------------------------------

def test_insert_into_empty():
    tree = IncrementalKdTree()
    tree.insert_point((1, 2, 3))
    assert tree.size() == (1, 1)
    assert tree._root.axis == 0


def test_insert_left_right_and_tie():
    tree = IncrementalKdTree()
    tree.insert_point((0, 0, 0))
    tree.insert_point((-1, 0, 0))
    assert tree._root.left is not None and tree._root.right is None
    tree2 = IncrementalKdTree()
    tree2.insert_point((0, 0, 0))
    tree2.insert_point((0, 5, 5))  # tie on the division axis goes right
    assert tree2._root.left is None and tree2._root.right is not None


def test_insert_child_axis_rotates():
    tree = IncrementalKdTree()
    tree.insert_point((0, 0, 0))
    tree.insert_point((1, 0, 0))
    assert tree._root.right.axis == (tree._root.axis + 1) % 3


def test_insert_many_keeps_balance():
    # sorted insertion order is the worst case for a plain k-d tree
    tree = IncrementalKdTree()
    for i in range(500):
        tree.insert_point((float(i), float(i) * 0.5, 0.25 * i))
        ts = tree.size()[0]
        assert tree.height <= height_bound(ts)
    tree.check_consistency()


# -- downsampling insertion --------------------------------------------------

def test_downsample_rejects_bad_resolution():
    tree = IncrementalKdTree()
    with pytest.raises(ValueError):
        tree.insert_with_downsample((0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        tree.insert_with_downsample((0, 0, 0), -1.0)


def test_downsample_first_insert():
    tree = IncrementalKdTree()
    assert tree.insert_with_downsample((0.2, 0.2, 0.2), 1.0) is True
    assert tree.size() == (1, 1)
    np.testing.assert_allclose(tree.flatten(), [[0.2, 0.2, 0.2]])


def test_downsample_keeps_point_nearest_to_cell_center():
    tree = IncrementalKdTree()
    tree.insert_with_downsample((0.2, 0.2, 0.2), 1.0)
    # cell [0,1)^3 has center (0.5,0.5,0.5); 0.1732 m beats 0.5196 m
    assert tree.insert_with_downsample((0.6, 0.6, 0.6), 1.0) is True
    valid = tree.flatten()
    np.testing.assert_allclose(valid, [[0.6, 0.6, 0.6]])
    total, alive = tree.size()
    assert alive == 1


def test_downsample_existing_occupant_wins():
    tree = IncrementalKdTree()
    tree.insert_with_downsample((0.6, 0.6, 0.6), 1.0)
    assert tree.insert_with_downsample((0.45, 0.45, 0.45), 1.0) is True
    assert tree.insert_with_downsample((0.7, 0.7, 0.7), 1.0) is False
    np.testing.assert_allclose(tree.flatten(), [[0.45, 0.45, 0.45]])


def test_downsample_center_tie_first_occupant_wins():
    tree = IncrementalKdTree()
    tree.insert_with_downsample((0.25, 0.25, 0.25), 1.0)
    # (0.75,0.75,0.75) is exactly as far from the center; the occupant stays
    assert tree.insert_with_downsample((0.75, 0.75, 0.75), 1.0) is False
    np.testing.assert_allclose(tree.flatten(), [[0.25, 0.25, 0.25]])


def test_downsample_negative_coordinates_use_floor_cells():
    tree = IncrementalKdTree()
    tree.insert_with_downsample((-0.1, -0.1, -0.1), 1.0)   # cell [-1, 0)^3
    tree.insert_with_downsample((0.1, 0.1, 0.1), 1.0)      # cell [0, 1)^3
    assert tree.size()[1] == 2


def test_downsample_grid_occupancy_oracle():
    rng = np.random.default_rng(5)
    tree = IncrementalKdTree()
    ref = FlatPointMap()
    l = 0.5
    pts = rng.uniform(0, 10, (10_000, 3))
    for p in pts:
        a = tree.insert_with_downsample(p, l)
        b = ref.insert_with_downsample(p, l)
        assert a == b
    census = ref.cell_census(l)
    assert all(c == 1 for c in census.values())
    got = tree.flatten()
    want = ref.valid_points()
    assert got.shape == want.shape
    assert np.array_equal(np.sort(got.view("f8,f8,f8"), axis=0),
                          np.sort(want.view("f8,f8,f8"), axis=0))
    tree.check_consistency()


# -- box delete --------------------------------------------------------------

def test_box_delete_disjoint_returns_zero():
    rng = np.random.default_rng(6)
    tree = IncrementalKdTree.build(rng.uniform(0, 1, (50, 3)))
    n = tree.box_delete(AlignedCuboid((5, 5, 5), (6, 6, 6)))
    assert n == 0
    assert tree.size() == (50, 50)


def test_box_delete_covering_everything():
    rng = np.random.default_rng(7)
    tree = IncrementalKdTree.build(rng.uniform(0, 1, (64, 3)))
    n = tree.box_delete(AlignedCuboid((-1, -1, -1), (2, 2, 2)))
    assert n == 64
    root = tree._root
    assert root.treedeleted and root.deleted
    assert root.invalidnum == root.treesize
    assert tree.size() == (64, 0)
    assert tree.knn_search((0.5, 0.5, 0.5), 3) == []
    assert tree.box_search(AlignedCuboid((-1, -1, -1), (2, 2, 2))).shape == (0, 3)


def test_box_delete_count_matches_linear_scan():
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 1, (100, 3))
    tree = IncrementalKdTree.build(pts)
    ref = FlatPointMap()
    for p in pts:
        ref.insert_point(p)
    lo, hi = (0, 0, 0), (0.5, 0.5, 0.5)
    got = tree.box_delete(AlignedCuboid(lo, hi))
    want = ref.box_delete(lo, hi)
    assert got == want
    assert tree.size()[1] == ref.valid_count()


def test_box_delete_twice_is_idempotent():
    rng = np.random.default_rng(9)
    tree = IncrementalKdTree.build(rng.uniform(0, 1, (100, 3)))
    box = AlignedCuboid((0, 0, 0), (0.5, 0.5, 0.5))
    first = tree.box_delete(box)
    assert first > 0
    assert tree.box_delete(box) == 0


def test_insert_through_treedeleted_subtree():
    # a subtree-wide lazy label must be pushed down before new points pass it
    tree = IncrementalKdTree.build([(i, 0, 0) for i in range(8)])
    tree.box_delete(AlignedCuboid((-1, -1, -1), (10, 10, 10)))
    assert tree.size()[1] == 0
    tree.insert_point((3.5, 0, 0))
    assert tree.size()[1] == 1
    np.testing.assert_allclose(tree.flatten(), [[3.5, 0, 0]])
    tree.check_consistency()
    res = tree.knn_search((3.4, 0, 0), 3)
    assert len(res) == 1
    np.testing.assert_allclose(res[0][0], [3.5, 0, 0])


# -- box search --------------------------------------------------------------

def test_box_search_empty_tree():
    tree = IncrementalKdTree()
    assert tree.box_search(AlignedCuboid((0, 0, 0), (1, 1, 1))).shape == (0, 3)


def test_box_search_singleton():
    tree = IncrementalKdTree.build([(0.25, 0.25, 0.25)])
    got = tree.box_search(AlignedCuboid((0, 0, 0), (1, 1, 1)))
    np.testing.assert_allclose(got, [[0.25, 0.25, 0.25]])


def test_box_search_matches_linear_scan():
    rng = np.random.default_rng(10)
    pts = rng.uniform(0, 1, (1000, 3))
    tree = IncrementalKdTree.build(pts)
    ref = FlatPointMap()
    for p in pts:
        ref.insert_point(p)
    for _ in range(20):
        lo = rng.uniform(0, 0.8, 3)
        hi = lo + rng.uniform(0, 0.5, 3)
        got = tree.box_search(AlignedCuboid(tuple(lo), tuple(hi)))
        want = ref.box_search(lo, hi)
        assert sorted(map(tuple, got)) == sorted(map(tuple, want))


# -- attributes and criteria -------------------------------------------------

def test_attribute_update_fresh_leaf():
    n = TreeNode(1.0, 2.0, 3.0, 0.0, 2)
    attribute_update(n)
    assert n.treesize == 1 and n.invalidnum == 0 and not n.treedeleted
    assert (n.min_x, n.max_x) == (1.0, 1.0)


def test_attribute_update_treedeleted_from_children():
    root = TreeNode(0, 0, 0, 0.0, 0)
    left = TreeNode(-1, 0, 0, 0.0, 1)
    right = TreeNode(1, 0, 0, 0.0, 1)
    for c in (left, right):
        c.deleted = True
        c.treedeleted = True
        c.invalidnum = 1
    root.left, root.right = left, right
    root.deleted = True
    attribute_update(root)
    assert root.treedeleted
    assert root.invalidnum == root.treesize == 3


def test_attribute_recount_after_random_ops():
    rng = np.random.default_rng(12)
    tree = IncrementalKdTree.build(rng.uniform(0, 4, (300, 3)))
    for _ in range(60):
        r = rng.random()
        if r < 0.5:
            tree.insert_with_downsample(rng.uniform(0, 4, 3), 0.25)
        elif r < 0.8:
            lo = rng.uniform(0, 3.5, 3)
            tree.box_delete(AlignedCuboid(tuple(lo), tuple(lo + 0.4)))
        else:
            tree.insert_point(rng.uniform(0, 4, 3))
    tree.check_consistency()


def _fake_node(treesize, left_size, right_size, invalid):
    n = TreeNode(0, 0, 0, 0.0, 0)
    n.treesize = treesize
    n.invalidnum = invalid
    if left_size:
        n.left = TreeNode(-1, 0, 0, 0.0, 1)
        n.left.treesize = left_size
    if right_size:
        n.right = TreeNode(1, 0, 0, 0.0, 1)
        n.right.treesize = right_size
    return n


def test_violates_criterion_examples():
    p = BalanceParams(alpha_bal=0.6, alpha_del=0.5)
    assert violates_criterion(_fake_node(3, 2, 0, 0), p)          # 2 >= 1.2
    assert not violates_criterion(_fake_node(3, 1, 1, 0), p)      # balanced
    assert violates_criterion(_fake_node(10, 4, 5, 5), p)         # 5 >= 5 boundary


def test_balance_params_validation():
    with pytest.raises(ValueError):
        BalanceParams(alpha_bal=0.5)
    with pytest.raises(ValueError):
        BalanceParams(alpha_del=0.0)
    with pytest.raises(ValueError):
        BalanceParams(n_max=0)


# -- flatten -----------------------------------------------------------------

def test_flatten_cases():
    rng = np.random.default_rng(13)
    pts = rng.uniform(0, 1, (40, 3))
    tree = IncrementalKdTree.build(pts)
    assert tree.flatten().shape == (40, 3)
    tree.box_delete(AlignedCuboid((0, 0, 0), (1, 0.5, 1)))
    ref = FlatPointMap()
    for p in pts:
        ref.insert_point(p)
    ref.box_delete((0, 0, 0), (1, 0.5, 1))
    got = sorted(map(tuple, tree.flatten()))
    want = sorted(map(tuple, ref.valid_points()))
    assert got == want
    tree.box_delete(AlignedCuboid((-1, -1, -1), (2, 2, 2)))
    assert tree.flatten().shape == (0, 3)
    assert flatten(tree._root) == []


# -- rebalancing -------------------------------------------------------------

def test_rebuild_purges_deleted_nodes():
    rng = np.random.default_rng(14)
    tree = IncrementalKdTree.build(rng.uniform(0, 1, (200, 3)))
    tree.box_delete(AlignedCuboid((0, 0, 0), (1, 1, 0.6)))
    # inserting touches the root path; the deleted-fraction criterion then
    # forces a rebuild which drops the lazily deleted nodes
    for _ in range(10):
        tree.insert_point(rng.uniform(0, 1, 3))
    total, alive = tree.size()
    assert total == alive  # everything stale was physically removed
    tree.check_consistency()


def test_rebuilt_subtree_height():
    rng = np.random.default_rng(15)
    pts = rng.uniform(0, 1, (100, 3))
    tree = IncrementalKdTree()
    for p in pts:
        tree.insert_point(p)
    assert tree.height <= height_bound(100)
    tree.check_consistency()


def test_no_rebuild_on_balanced_tree():
    rng = np.random.default_rng(16)
    tree = IncrementalKdTree.build(rng.uniform(0, 1, (1023, 3)))
    before = tree.stats["rebuilds"]
    tree.knn_search((0.5, 0.5, 0.5), 5)
    tree.box_search(AlignedCuboid((0, 0, 0), (0.2, 0.2, 0.2)))
    assert tree.stats["rebuilds"] == before  # queries never rebuild


# -- kNN ---------------------------------------------------------------------

def test_knn_rejects_zero_k():
    tree = IncrementalKdTree.build([(1, 0, 0)])
    with pytest.raises(ValueError):
        tree.knn_search((0, 0, 0), 0)


def test_knn_fewer_points_than_k():
    tree = IncrementalKdTree.build([(1, 0, 0)])
    res = tree.knn_search((0, 0, 0), 5)
    assert len(res) == 1
    np.testing.assert_allclose(res[0][0], [1, 0, 0])
    assert res[0][1] == 1.0


def test_knn_matches_brute_force_multiset():
    rng = np.random.default_rng(17)
    pts = rng.uniform(0, 10, (10_000, 3))
    tree = IncrementalKdTree.build(pts)
    ref = FlatPointMap()
    for p in pts:
        ref.insert_point(p)
    for _ in range(100):
        target = rng.uniform(0, 10, 3)
        got = np.array([d for _, d in tree.knn_search(target, 5)])
        want = ref.knn_distances(target, 5)
        assert np.array_equal(got, want)


def test_knn_ranged_search():
    rng = np.random.default_rng(18)
    pts = rng.uniform(0, 4, (2000, 3))
    tree = IncrementalKdTree.build(pts)
    ref = FlatPointMap()
    for p in pts:
        ref.insert_point(p)
    for _ in range(50):
        target = rng.uniform(0, 4, 3)
        got = np.array([d for _, d in tree.knn_search(target, 5, max_dist=0.3)])
        want = ref.knn_distances(target, 5, max_dist=0.3)
        assert np.array_equal(got, want)
        assert (got <= 0.3).all()


def test_knn_never_returns_deleted():
    rng = np.random.default_rng(19)
    pts = rng.uniform(0, 1, (500, 3))
    tree = IncrementalKdTree.build(pts)
    tree.box_delete(AlignedCuboid((0, 0, 0), (0.5, 1, 1)))
    for _ in range(50):
        target = rng.uniform(0, 1, 3)
        for q, _ in tree.knn_search(target, 5):
            assert q[0] > 0.5


def test_knn_ascending_order():
    rng = np.random.default_rng(20)
    tree = IncrementalKdTree.build(rng.uniform(0, 1, (300, 3)))
    res = tree.knn_search((0.5, 0.5, 0.5), 10)
    d = [r[1] for r in res]
    assert d == sorted(d)


# -- size, dump --------------------------------------------------------------

def test_size_cases():
    assert IncrementalKdTree().size() == (0, 0)
    rng = np.random.default_rng(21)
    pts = rng.uniform(0, 1, (128, 3))
    tree = IncrementalKdTree.build(pts)
    assert tree.size() == (128, 128)


def test_size_after_lazy_delete_without_rebuild():
    # deleting one leaf of a balanced 7-point tree trips no criterion, so
    # the node count must stay put while the valid count drops (lazy delete)
    tree = IncrementalKdTree.build([(float(i), 0, 0) for i in range(7)])
    m = tree.box_delete(AlignedCuboid((5.5, -1, -1), (6.5, 1, 1)))
    assert m == 1
    assert tree.size() == (7, 6)


def test_dump_golden():
    tree = IncrementalKdTree.build([(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    expected = "\n".join([
        "d=0 ax=0 p=(1 0 0) del=0 tdel=0 n=3 inv=0 r=[0 0 0; 2 0 0]",
        "d=1 ax=0 p=(0 0 0) del=0 tdel=0 n=1 inv=0 r=[0 0 0; 0 0 0]",
        "d=1 ax=0 p=(2 0 0) del=0 tdel=0 n=1 inv=0 r=[2 0 0; 2 0 0]",
    ])
    assert tree.dump() == expected


# -- mixed-operation oracle equivalence (small-scale) ------------------------

def test_mixed_ops_match_reference_model():
    rng = np.random.default_rng(22)
    tree = IncrementalKdTree()
    ref = FlatPointMap()
    l = 0.5
    for i in range(3000):
        r = rng.random()
        if r < 0.6:
            p = rng.uniform(0, 8, 3)
            assert tree.insert_with_downsample(p, l) == \
                ref.insert_with_downsample(p, l)
        elif r < 0.75:
            lo = rng.uniform(0, 7, 3)
            hi = lo + rng.uniform(0, 1.0, 3)
            assert tree.box_delete(AlignedCuboid(tuple(lo), tuple(hi))) == \
                ref.box_delete(lo, hi)
        elif r < 0.9:
            target = rng.uniform(0, 8, 3)
            got = np.array([d for _, d in tree.knn_search(target, 5)])
            assert np.array_equal(got, ref.knn_distances(target, 5))
        else:
            lo = rng.uniform(0, 7, 3)
            hi = lo + rng.uniform(0, 1.5, 3)
            got = tree.box_search(AlignedCuboid(tuple(lo), tuple(hi)))
            want = ref.box_search(lo, hi)
            assert sorted(map(tuple, got)) == sorted(map(tuple, want))
        ts = tree.size()[0]
        if ts:
            assert tree.height <= height_bound(ts)
        assert tree.size()[1] == ref.valid_count()
        if i % 500 == 499:
            tree.check_consistency()
            assert sorted(map(tuple, tree.flatten())) == \
                sorted(map(tuple, ref.valid_points()))
            census = ref.cell_census(l)
            # box deletes may empty cells, but never leave more than one point
            assert all(c == 1 for c in census.values())
