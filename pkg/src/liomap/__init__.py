"""Incremental k-d tree mapping and LiDAR-inertial odometry toolkit."""

from .geometry import AlignedCuboid, BoxRelation, cuboid_relate, dist_sq, \
    min_dist_sq_to_cuboid
from .ikdtree import BalanceParams, IncrementalKdTree, TreeNode, \
    attribute_update, violates_criterion

__all__ = [
    "AlignedCuboid",
    "BoxRelation",
    "cuboid_relate",
    "dist_sq",
    "min_dist_sq_to_cuboid",
    "BalanceParams",
    "IncrementalKdTree",
    "TreeNode",
    "attribute_update",
    "violates_criterion",
]

__version__ = "0.1.0"
