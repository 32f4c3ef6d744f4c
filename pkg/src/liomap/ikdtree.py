"""Incremental k-d tree over 3-D points.

Every node (internal and leaf) stores one point plus subtree bookkeeping:
size, invalid count, lazy deletion labels, and the circumscribed
axis-aligned cuboid of all subtree points. Deletion is lazy: nodes are
flagged and skipped by queries, then physically dropped when the
enclosing subtree is rebuilt. A subtree is rebuilt whenever it violates
either balance criterion (one child holding too large a fraction of the
subtree, or too many lazily deleted nodes). Large subtrees can be rebuilt
on a second thread while the writer keeps operating: updates arriving
mid-rebuild are applied to the old subtree and recorded in an operation
log, replayed onto the fresh subtree before an atomic pointer swap.
Queries never block and observe either the old or the new subtree.

Point insertion can be fused with grid downsampling: space is partitioned
into half-open cells ``[i*l, (i+1)*l)`` and each cell keeps at most one
valid point, the one nearest to the cell center.

Thread contract: one writer thread issues all updates; queries may run
from any thread concurrently with the second-thread rebuild. Without the
parallel switch the tree is single-writer/multi-reader with external
synchronization required between writes and concurrent reads.
"""

from __future__ import annotations

import heapq
import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from .geometry import AlignedCuboid, as_finite_xyz

__all__ = [
    "BalanceParams",
    "TreeNode",
    "IncrementalKdTree",
    "violates_criterion",
    "attribute_update",
    "flatten",
]

_PY_BUILD_MAX = 64  # below this, build on plain Python lists (numpy overhead dominates)


@dataclass(frozen=True)
class BalanceParams:
    """Rebalancing thresholds.

    alpha_bal: a subtree is unbalanced when either child holds at least
        ``alpha_bal * (treesize - 1)`` nodes.
    alpha_del: a subtree is stale when its lazily deleted nodes reach
        ``alpha_del * treesize``.
    n_max: violated subtrees at least this large go to the second-thread
        rebuild when the parallel switch is on; smaller ones are rebuilt
        synchronously.
    """

    alpha_bal: float = 0.6
    alpha_del: float = 0.5
    n_max: int = 1500

    def __post_init__(self):
        if not 0.5 < self.alpha_bal < 1.0:
            raise ValueError(f"alpha_bal must lie in (0.5, 1), got {self.alpha_bal}")
        if not 0.0 < self.alpha_del < 1.0:
            raise ValueError(f"alpha_del must lie in (0, 1), got {self.alpha_del}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be positive, got {self.n_max}")


class TreeNode:
    """One stored point plus cached subtree attributes."""

    __slots__ = (
        "x", "y", "z", "inten", "left", "right", "axis",
        "treesize", "invalidnum", "deleted", "treedeleted", "height",
        "min_x", "min_y", "min_z", "max_x", "max_y", "max_z", "rb_path",
        "__weakref__",
    )

    def __init__(self, x: float, y: float, z: float, inten: float, axis: int):
        self.x = x
        self.y = y
        self.z = z
        self.inten = inten
        self.left = None
        self.right = None
        self.axis = axis
        self.treesize = 1
        self.invalidnum = 0
        self.deleted = False
        self.treedeleted = False
        self.height = 1
        self.min_x = x
        self.min_y = y
        self.min_z = z
        self.max_x = x
        self.max_y = y
        self.max_z = z
        self.rb_path = False

    @property
    def point(self) -> np.ndarray:
        return np.array((self.x, self.y, self.z))

    @property
    def range(self) -> AlignedCuboid:
        return AlignedCuboid((self.min_x, self.min_y, self.min_z),
                             (self.max_x, self.max_y, self.max_z))


def violates_criterion(node: TreeNode, params: BalanceParams) -> bool:
    """True when a subtree breaks the balance or the deleted-fraction bound.

    Balance: some child holds at least ``alpha_bal * (treesize - 1)``
    nodes. Subtree sizes whose best possible split (``ceil((n-1)/2)``)
    already reaches that bound are exempt: no binary tree of that size can
    satisfy the inequality, so rebuilding cannot help (for alpha_bal 0.6
    these are sizes 1, 2, 4 and 6). The deleted-fraction bound applies to
    every size; it is what purges deleted leaves.
    """
    ts = node.treesize
    bal = params.alpha_bal * (ts - 1)
    if ts // 2 < bal:  # ceil((ts-1)/2), the best achievable child size
        left = node.left
        right = node.right
        if left is not None and left.treesize >= bal:
            return True
        if right is not None and right.treesize >= bal:
            return True
    return node.invalidnum >= params.alpha_del * ts


def attribute_update(node: TreeNode) -> None:
    """Recompute cached subtree attributes from the two children and self.

    Children's attributes must already be correct.
    """
    ts = 1
    inv = 1 if node.deleted else 0
    h = 0
    tdel = node.deleted
    mnx = node.x; mny = node.y; mnz = node.z
    mxx = node.x; mxy = node.y; mxz = node.z
    for c in (node.left, node.right):
        if c is None:
            continue
        ts += c.treesize
        inv += c.invalidnum
        if not c.treedeleted:
            tdel = False
        if c.height > h:
            h = c.height
        if c.min_x < mnx: mnx = c.min_x
        if c.min_y < mny: mny = c.min_y
        if c.min_z < mnz: mnz = c.min_z
        if c.max_x > mxx: mxx = c.max_x
        if c.max_y > mxy: mxy = c.max_y
        if c.max_z > mxz: mxz = c.max_z
    node.treesize = ts
    node.invalidnum = inv
    node.treedeleted = tdel
    node.height = h + 1
    node.min_x = mnx; node.min_y = mny; node.min_z = mnz
    node.max_x = mxx; node.max_y = mxy; node.max_z = mxz


def _push_down(node: TreeNode) -> None:
    # Propagate a subtree-wide deletion label one level before descending.
    for c in (node.left, node.right):
        if c is not None:
            c.deleted = True
            c.treedeleted = True
            c.invalidnum = c.treesize


def _flatten_into(node, out: list) -> None:
    # Preorder collection of valid points as (x, y, z, intensity).
    if node is None or node.treedeleted:
        return
    if not node.deleted:
        out.append((node.x, node.y, node.z, node.inten))
    _flatten_into(node.left, out)
    _flatten_into(node.right, out)


def flatten(node) -> list[tuple[float, float, float, float]]:
    """Valid (non-deleted) subtree points as (x, y, z, intensity) tuples."""
    out: list = []
    _flatten_into(node, out)
    return out


# -- construction -----------------------------------------------------------

def _build_py(items: list) -> TreeNode | None:
    # items: list of (x, y, z, intensity); consumed/reordered in place.
    n = len(items)
    if n == 0:
        return None
    if n == 1:
        x, y, z, it = items[0]
        return TreeNode(x, y, z, it, 0)
    xs = [p[0] for p in items]
    ys = [p[1] for p in items]
    zs = [p[2] for p in items]
    sx = max(xs) - min(xs)
    sy = max(ys) - min(ys)
    sz = max(zs) - min(zs)
    ax = 0 if (sx >= sy and sx >= sz) else (1 if sy >= sz else 2)
    items.sort(key=lambda p: p[ax])
    m = (n - 1) // 2
    v = items[m][ax]
    while m > 0 and items[m - 1][ax] == v:
        m -= 1  # equal coordinates must go to the right subtree
    px, py, pz, pi = items[m]
    node = TreeNode(px, py, pz, pi, ax)
    node.left = _build_py(items[:m])
    node.right = _build_py(items[m + 1:])
    attribute_update(node)
    return node


def _build_np(pts: np.ndarray, inten: np.ndarray, idx: np.ndarray) -> TreeNode | None:
    n = idx.shape[0]
    if n <= _PY_BUILD_MAX:
        items = [(pts[i, 0], pts[i, 1], pts[i, 2], inten[i]) for i in idx.tolist()]
        return _build_py(items)
    sub = pts[idx]
    spread = sub.max(axis=0) - sub.min(axis=0)
    ax = int(np.argmax(spread))
    coords = sub[:, ax]
    m = (n - 1) // 2
    part = np.argpartition(coords, m)
    node_local = part[m]
    med_val = coords[node_local]
    rest = np.concatenate((part[:m], part[m + 1:]))
    mask = coords[rest] < med_val
    left_idx = idx[rest[mask]]
    right_idx = idx[rest[~mask]]
    gi = idx[node_local]
    node = TreeNode(float(pts[gi, 0]), float(pts[gi, 1]), float(pts[gi, 2]),
                    float(inten[gi]), ax)
    node.left = _build_np(pts, inten, left_idx)
    node.right = _build_np(pts, inten, right_idx)
    attribute_update(node)
    return node


def _build_items(items: list) -> TreeNode | None:
    if len(items) <= _PY_BUILD_MAX:
        return _build_py(items)
    arr = np.array(items, dtype=float)
    return _build_np(arr[:, :3], arr[:, 3], np.arange(len(items)))


class _RebuildJob:
    __slots__ = ("root", "parent", "side", "ancestors", "log", "thread")

    def __init__(self, root, parent, side, ancestors):
        self.root = root
        self.parent = parent
        self.side = side
        self.ancestors = ancestors  # parent first, tree root last
        self.log = None             # None until the flatten snapshot is taken
        self.thread = None


class IncrementalKdTree:
    """Incrementally updatable k-d tree with dual-criterion rebalancing."""

    def __init__(self, params: BalanceParams | None = None, parallel: bool = False):
        self._params = params if params is not None else BalanceParams()
        self._parallel = bool(parallel)
        self._root: TreeNode | None = None
        self._lock = threading.Lock()
        self._rb: _RebuildJob | None = None
        self._rb_root: TreeNode | None = None
        self._crossed = False          # current op touched the in-flight subtree
        self._pending_path = None      # captured node->root path for a spawn request
        self._rebuilds = 0
        self._par_rebuilds = 0
        self._logged_ops = 0

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, points, intensities=None, params: BalanceParams | None = None,
              parallel: bool = False) -> "IncrementalKdTree":
        """Build a perfectly balanced tree by recursive median splits.

        Splits at the exact median along the longest-spread dimension of
        each point subset; an empty input gives an empty tree.
        """
        tree = cls(params=params, parallel=parallel)
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if pts.shape[0] and not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        if intensities is None:
            inten = np.zeros(pts.shape[0])
        else:
            inten = np.asarray(intensities, dtype=float).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise ValueError("intensities length mismatch")
        if pts.shape[0]:
            tree._root = _build_np(pts, inten, np.arange(pts.shape[0]))
        return tree

    # -- bookkeeping -------------------------------------------------------

    @property
    def params(self) -> BalanceParams:
        return self._params

    @property
    def height(self) -> int:
        root = self._root
        return 0 if root is None else root.height

    @property
    def rebuild_in_flight(self) -> bool:
        return self._rb is not None

    @property
    def stats(self) -> dict:
        return {"rebuilds": self._rebuilds,
                "parallel_rebuilds": self._par_rebuilds,
                "logged_ops": self._logged_ops}

    def size(self) -> tuple[int, int]:
        """(total stored nodes incl. lazily deleted, valid point count)."""
        root = self._root
        if root is None:
            return (0, 0)
        return root.treesize, root.treesize - root.invalidnum

    def wait_for_rebuild(self, timeout: float | None = None) -> None:
        """Block until no second-thread rebuild is in flight."""
        deadline = None if timeout is None else (time.monotonic() + timeout)
        while True:
            job = self._rb
            if job is None:
                return
            t = job.thread
            if t is None:
                return
            remain = None if deadline is None else max(0.0, deadline - time.monotonic())
            t.join(remain)
            if deadline is not None and time.monotonic() >= deadline:
                return

    # -- updates -----------------------------------------------------------

    def insert_point(self, p, intensity: float = 0.0, parallel: bool | None = None) -> None:
        """Append the point as a new leaf at its binary-search position."""
        x, y, z = as_finite_xyz(p)
        par = self._parallel if parallel is None else bool(parallel)
        with self._lock:
            job = self._rb
            logging = job is not None and job.log is not None
            self._crossed = False
            self._root = self._insert(self._root, x, y, z, float(intensity), 0, par)
            if logging and self._crossed:
                job.log.append(("insert", (x, y, z, float(intensity))))
            self._maybe_start_pending()

    def insert_with_downsample(self, p, resolution: float,
                               intensity: float = 0.0,
                               parallel: bool | None = None) -> bool:
        """Insert fused with grid downsampling at the given cell size.

        The half-open cell containing ``p`` afterwards holds exactly one
        valid point: the one nearest to the cell center among the previous
        occupants and ``p`` (previous occupants win ties). Returns True
        when the new point is the one retained.
        """
        lres = float(resolution)
        if not (lres > 0.0):
            raise ValueError(f"downsample resolution must be positive, got {resolution}")
        x, y, z = as_finite_xyz(p)
        par = self._parallel if parallel is None else bool(parallel)
        lx = math.floor(x / lres) * lres
        ly = math.floor(y / lres) * lres
        lz = math.floor(z / lres) * lres
        hx, hy, hz = lx + lres, ly + lres, lz + lres
        cx, cy, cz = lx + 0.5 * lres, ly + 0.5 * lres, lz + 0.5 * lres
        with self._lock:
            occupants: list = []
            self._box_search_node(self._root, lx, ly, lz, hx, hy, hz, True, occupants)
            best = None
            best_d = math.inf
            for o in occupants:
                dx = o[0] - cx; dy = o[1] - cy; dz = o[2] - cz
                d = dx * dx + dy * dy + dz * dz
                if d < best_d:
                    best_d = d
                    best = o
            dx = x - cx; dy = y - cy; dz = z - cz
            d_new = dx * dx + dy * dy + dz * dz
            new_wins = d_new < best_d
            if not new_wins and len(occupants) == 1:
                return False  # sole occupant stays; the new point is dropped
            job = self._rb
            logging = job is not None and job.log is not None
            self._crossed = False
            if occupants:
                self._root, _ = self._box_delete_node(
                    self._root, lx, ly, lz, hx, hy, hz, True, par)
                if logging and self._intersects_rb(lx, ly, lz, hx, hy, hz, True):
                    job.log.append(("boxdel", (lx, ly, lz, hx, hy, hz, True)))
            if new_wins:
                wx, wy, wz, wi = x, y, z, float(intensity)
            else:
                wx, wy, wz, wi = best
            self._crossed = False
            self._root = self._insert(self._root, wx, wy, wz, wi, 0, par)
            if logging and self._crossed:
                job.log.append(("insert", (wx, wy, wz, wi)))
            self._maybe_start_pending()
            return new_wins

    def box_delete(self, cuboid: AlignedCuboid, parallel: bool | None = None) -> int:
        """Lazily delete every valid point inside the closed cuboid.

        Returns the number of newly deleted valid points. Nothing is
        physically removed; fully covered subtrees get a subtree-wide
        label.
        """
        par = self._parallel if parallel is None else bool(parallel)
        (lx, ly, lz), (hx, hy, hz) = cuboid.min_vertex, cuboid.max_vertex
        with self._lock:
            job = self._rb
            logging = job is not None and job.log is not None
            self._crossed = False
            self._root, count = self._box_delete_node(
                self._root, lx, ly, lz, hx, hy, hz, False, par)
            if logging and self._intersects_rb(lx, ly, lz, hx, hy, hz, False):
                job.log.append(("boxdel", (lx, ly, lz, hx, hy, hz, False)))
            self._maybe_start_pending()
        return count

    # -- queries (lock-free; see thread contract in the module docstring) --

    def box_search(self, cuboid: AlignedCuboid) -> np.ndarray:
        """Valid points inside the closed cuboid as an (n, 3) array."""
        (lx, ly, lz), (hx, hy, hz) = cuboid.min_vertex, cuboid.max_vertex
        out: list = []
        self._box_search_node(self._root, lx, ly, lz, hx, hy, hz, False, out)
        if not out:
            return np.empty((0, 3))
        return np.array(out)[:, :3]

    def knn_search(self, target, k: int, max_dist: float | None = None
                   ) -> list[tuple[np.ndarray, float]]:
        """The k valid points nearest to the target, ascending by distance.

        Fewer are returned when the tree holds fewer valid points or the
        optional maximal search distance excludes them. Subtrees whose
        bounding cuboid cannot beat the current k-th best (or the search
        radius) are pruned.
        """
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        tx, ty, tz = as_finite_xyz(target)
        maxb = math.inf if max_dist is None else float(max_dist) ** 2
        heap: list = []  # entries (-d2, x, y, z, intensity)
        self._knn_node(self._root, tx, ty, tz, k, maxb, heap)
        heap.sort(reverse=True)
        return [(np.array((e[1], e[2], e[3])), math.sqrt(-e[0])) for e in heap]

    def flatten(self, with_intensity: bool = False) -> np.ndarray:
        """All valid points as an (n, 3) array ((n, 4) with intensity)."""
        out: list = []
        _flatten_into(self._root, out)
        if not out:
            return np.empty((0, 4 if with_intensity else 3))
        arr = np.array(out)
        return arr if with_intensity else arr[:, :3]

    def dump(self) -> str:
        """Line-oriented preorder dump of the tree structure (debugging)."""
        lines: list[str] = []
        self._dump_node(self._root, 0, lines)
        return "\n".join(lines)

    def check_consistency(self) -> None:
        """Recount every cached attribute recursively; raise on mismatch."""
        self._check_node(self._root, False)

    # -- internals ----------------------------------------------------------

    def _intersects_rb(self, lx, ly, lz, hx, hy, hz, half_open: bool) -> bool:
        r = self._rb_root
        if r is None:
            return False
        if half_open:
            return not (r.min_x >= hx or r.max_x < lx or r.min_y >= hy
                        or r.max_y < ly or r.min_z >= hz or r.max_z < lz)
        return not (r.min_x > hx or r.max_x < lx or r.min_y > hy
                    or r.max_y < ly or r.min_z > hz or r.max_z < lz)

    def _insert(self, node, x, y, z, inten, axis, par):
        if node is None:
            return TreeNode(x, y, z, inten, axis)
        if node is self._rb_root:
            self._crossed = True
        if node.treedeleted:
            _push_down(node)
        ax = node.axis
        if ax == 0:
            goes_left = x < node.x
        elif ax == 1:
            goes_left = y < node.y
        else:
            goes_left = z < node.z
        child_axis = ax + 1
        if child_axis == 3:
            child_axis = 0
        if goes_left:
            node.left = self._insert(node.left, x, y, z, inten, child_axis, par)
        else:
            node.right = self._insert(node.right, x, y, z, inten, child_axis, par)
        attribute_update(node)
        return self._rebalance(node, par)

    def _box_delete_node(self, node, lx, ly, lz, hx, hy, hz, half_open, par):
        if node is None:
            return None, 0
        if half_open:
            if (node.min_x >= hx or node.max_x < lx or node.min_y >= hy
                    or node.max_y < ly or node.min_z >= hz or node.max_z < lz):
                return node, 0
        else:
            if (node.min_x > hx or node.max_x < lx or node.min_y > hy
                    or node.max_y < ly or node.min_z > hz or node.max_z < lz):
                return node, 0
        if node.treedeleted:
            return node, 0
        if node is self._rb_root:
            self._crossed = True
        if half_open:
            contained = (node.min_x >= lx and node.max_x < hx
                         and node.min_y >= ly and node.max_y < hy
                         and node.min_z >= lz and node.max_z < hz)
        else:
            contained = (node.min_x >= lx and node.max_x <= hx
                         and node.min_y >= ly and node.max_y <= hy
                         and node.min_z >= lz and node.max_z <= hz)
        if contained:
            newly = node.treesize - node.invalidnum
            node.deleted = True
            node.treedeleted = True
            node.invalidnum = node.treesize
            return node, newly
        newly = 0
        if not node.deleted:
            x, y, z = node.x, node.y, node.z
            if half_open:
                inside = (lx <= x < hx and ly <= y < hy and lz <= z < hz)
            else:
                inside = (lx <= x <= hx and ly <= y <= hy and lz <= z <= hz)
            if inside:
                node.deleted = True
                newly = 1
        node.left, c = self._box_delete_node(node.left, lx, ly, lz, hx, hy, hz,
                                             half_open, par)
        newly += c
        node.right, c = self._box_delete_node(node.right, lx, ly, lz, hx, hy, hz,
                                              half_open, par)
        newly += c
        attribute_update(node)
        return self._rebalance(node, par), newly

    def _box_search_node(self, node, lx, ly, lz, hx, hy, hz, half_open, out):
        if node is None or node.treedeleted:
            return
        if half_open:
            if (node.min_x >= hx or node.max_x < lx or node.min_y >= hy
                    or node.max_y < ly or node.min_z >= hz or node.max_z < lz):
                return
            contained = (node.min_x >= lx and node.max_x < hx
                         and node.min_y >= ly and node.max_y < hy
                         and node.min_z >= lz and node.max_z < hz)
        else:
            if (node.min_x > hx or node.max_x < lx or node.min_y > hy
                    or node.max_y < ly or node.min_z > hz or node.max_z < lz):
                return
            contained = (node.min_x >= lx and node.max_x <= hx
                         and node.min_y >= ly and node.max_y <= hy
                         and node.min_z >= lz and node.max_z <= hz)
        if contained:
            self._collect_valid(node, out)
            return
        if not node.deleted:
            x, y, z = node.x, node.y, node.z
            if half_open:
                inside = (lx <= x < hx and ly <= y < hy and lz <= z < hz)
            else:
                inside = (lx <= x <= hx and ly <= y <= hy and lz <= z <= hz)
            if inside:
                out.append((x, y, z, node.inten))
        self._box_search_node(node.left, lx, ly, lz, hx, hy, hz, half_open, out)
        self._box_search_node(node.right, lx, ly, lz, hx, hy, hz, half_open, out)

    def _collect_valid(self, node, out):
        if node is None or node.treedeleted:
            return
        if not node.deleted:
            out.append((node.x, node.y, node.z, node.inten))
        self._collect_valid(node.left, out)
        self._collect_valid(node.right, out)

    def _knn_node(self, node, tx, ty, tz, k, maxb, heap):
        if node is None or node.treedeleted:
            return
        dx = (node.min_x - tx) if tx < node.min_x else (
            (tx - node.max_x) if tx > node.max_x else 0.0)
        dy = (node.min_y - ty) if ty < node.min_y else (
            (ty - node.max_y) if ty > node.max_y else 0.0)
        dz = (node.min_z - tz) if tz < node.min_z else (
            (tz - node.max_z) if tz > node.max_z else 0.0)
        d2c = dx * dx + dy * dy + dz * dz
        if len(heap) == k:
            bound = -heap[0][0]
            if maxb < bound:
                bound = maxb
        else:
            bound = maxb
        if d2c > bound:
            return
        if not node.deleted:
            dx = tx - node.x
            dy = ty - node.y
            dz = tz - node.z
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= maxb:
                if len(heap) < k:
                    heapq.heappush(heap, (-d2, node.x, node.y, node.z, node.inten))
                elif d2 < -heap[0][0]:
                    heapq.heapreplace(heap, (-d2, node.x, node.y, node.z, node.inten))
        ax = node.axis
        if ax == 0:
            near_left = tx < node.x
        elif ax == 1:
            near_left = ty < node.y
        else:
            near_left = tz < node.z
        if near_left:
            self._knn_node(node.left, tx, ty, tz, k, maxb, heap)
            self._knn_node(node.right, tx, ty, tz, k, maxb, heap)
        else:
            self._knn_node(node.right, tx, ty, tz, k, maxb, heap)
            self._knn_node(node.left, tx, ty, tz, k, maxb, heap)

    # -- rebalancing ---------------------------------------------------------

    def _rebalance(self, node, par):
        pp = self._pending_path
        if pp is not None and (node.left is pp[-1] or node.right is pp[-1]):
            pp.append(node)
            node.rb_path = True
        if not violates_criterion(node, self._params):
            return node
        if node.rb_path or (self._crossed and self._rb is not None):
            return node  # overlaps an in-flight or requested second-thread rebuild
        if node.treesize < self._params.n_max or not par:
            return self._rebuild_subtree(node)
        if self._rb is not None or self._pending_path is not None:
            return node  # one second-thread rebuild at a time; defer
        self._pending_path = [node]
        node.rb_path = True
        return node

    def _rebuild_subtree(self, node):
        items: list = []
        _flatten_into(node, items)
        self._rebuilds += 1
        return _build_items(items)

    def _maybe_start_pending(self):
        pp = self._pending_path
        if pp is None:
            return
        self._pending_path = None
        node = pp[0]
        ancestors = pp[1:]
        parent = ancestors[0] if ancestors else None
        side = None
        if parent is not None:
            side = "left" if parent.left is node else "right"
        job = _RebuildJob(node, parent, side, ancestors)
        self._rb = job
        self._rb_root = node
        job.thread = threading.Thread(target=self._par_rebuild, args=(job,),
                                      daemon=True)
        job.thread.start()

    def _par_rebuild(self, job):
        # Second-thread rebuild: snapshot under the update lock, build
        # outside it, then replay logged updates and swap atomically.
        with self._lock:
            job.log = []
            items: list = []
            _flatten_into(job.root, items)
        new_root = _build_items(items)
        with self._lock:
            self._crossed = False
            self._logged_ops += len(job.log)
            for op, args in job.log:
                if op == "insert":
                    x, y, z, inten = args
                    new_root = self._insert(new_root, x, y, z, inten, 0, False)
                else:
                    lx, ly, lz, hx, hy, hz, half_open = args
                    new_root, _ = self._box_delete_node(
                        new_root, lx, ly, lz, hx, hy, hz, half_open, False)
            job.log = None
            if job.parent is None:
                self._root = new_root
            elif job.side == "left":
                job.parent.left = new_root
            else:
                job.parent.right = new_root
            job.root.rb_path = False
            for a in job.ancestors:
                attribute_update(a)
                a.rb_path = False
            self._rb = None
            self._rb_root = None
            self._rebuilds += 1
            self._par_rebuilds += 1

    # -- diagnostics ----------------------------------------------------------

    def _dump_node(self, node, depth, lines):
        if node is None:
            return
        lines.append(
            "d=%d ax=%d p=(%.17g %.17g %.17g) del=%d tdel=%d n=%d inv=%d "
            "r=[%.17g %.17g %.17g; %.17g %.17g %.17g]" % (
                depth, node.axis, node.x, node.y, node.z,
                int(node.deleted), int(node.treedeleted),
                node.treesize, node.invalidnum,
                node.min_x, node.min_y, node.min_z,
                node.max_x, node.max_y, node.max_z))
        self._dump_node(node.left, depth + 1, lines)
        self._dump_node(node.right, depth + 1, lines)

    def _check_node(self, node, masked):
        # Returns (treesize, height, min..., max...). `masked` means an
        # ancestor carries a subtree-deletion label, so this node's own
        # deletion flags/invalid counts may legitimately be stale.
        if node is None:
            return 0, 0, None
        l = self._check_node(node.left, masked or node.treedeleted)
        r = self._check_node(node.right, masked or node.treedeleted)
        ts = 1 + l[0] + r[0]
        h = 1 + max(l[1], r[1])
        if node.treesize != ts:
            raise AssertionError(f"treesize {node.treesize} != recount {ts}")
        if node.height != h:
            raise AssertionError(f"height {node.height} != recount {h}")
        mnx, mny, mnz = node.x, node.y, node.z
        mxx, mxy, mxz = node.x, node.y, node.z
        for sub in (l[2], r[2]):
            if sub is None:
                continue
            mnx = min(mnx, sub[0]); mny = min(mny, sub[1]); mnz = min(mnz, sub[2])
            mxx = max(mxx, sub[3]); mxy = max(mxy, sub[4]); mxz = max(mxz, sub[5])
        if (node.min_x, node.min_y, node.min_z) != (mnx, mny, mnz) or \
           (node.max_x, node.max_y, node.max_z) != (mxx, mxy, mxz):
            raise AssertionError("range does not match recount")
        ax = node.axis
        if node.left is not None:
            lmax = (node.left.max_x, node.left.max_y, node.left.max_z)[ax]
            if not lmax < (node.x, node.y, node.z)[ax]:
                raise AssertionError("left subtree violates the split order")
        if node.right is not None:
            rmin = (node.right.min_x, node.right.min_y, node.right.min_z)[ax]
            if not (node.x, node.y, node.z)[ax] <= rmin:
                raise AssertionError("right subtree violates the split order")
        if not masked:
            if node.treedeleted:
                # descendants may hold stale flags under a subtree label;
                # the label itself must account for every node
                if node.invalidnum != node.treesize:
                    raise AssertionError("treedeleted subtree with valid points")
            else:
                inv = (1 if node.deleted else 0)
                for c in (node.left, node.right):
                    if c is not None:
                        inv += c.invalidnum
                if node.invalidnum != inv:
                    raise AssertionError(
                        f"invalidnum {node.invalidnum} != recount {inv}")
            if not 0 <= node.invalidnum <= node.treesize:
                raise AssertionError("invalidnum out of range")
        return ts, h, (mnx, mny, mnz, mxx, mxy, mxz)
