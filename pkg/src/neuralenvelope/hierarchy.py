"""k-means clustering of sites and the routing tree built from it."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Box, SiteSet
from .rng import derive_seed, make_rng

KMEANS_TOL = 1e-9
KMEANS_MAX_ITER = 100


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        u = rng.random()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), u * total, side="right"))
            idx = min(idx, n - 1)
        else:
            # all remaining mass is zero: pick uniformly among unchosen points
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[min(int(u * len(free)), len(free) - 1)])
        chosen.append(idx)
        closest = np.minimum(closest, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _repair_empty(points, centroids, labels, sq):
    k = len(centroids)
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if len(empty) == 0:
            return
        donor = int(np.argmax(counts))
        members = np.flatnonzero(labels == donor)
        far = int(members[np.argmax(sq[members, donor])])
        j = int(empty[0])
        labels[far] = j
        centroids[j] = points[far]
        sq[:, j] = np.sum((points - points[far]) ** 2, axis=1)


def kmeans(points: np.ndarray, k: int, seed: int) -> KMeansResult:
    """Lloyd's algorithm from a k-means++ start.

    Stops once no centroid moves by more than ``KMEANS_TOL`` or after
    ``KMEANS_MAX_ITER`` iterations. An empty cluster takes over the point of
    the largest cluster that lies farthest from its centroid.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or not np.all(np.isfinite(points)):
        raise ValueError("points must be a finite (n, d) array")
    if not 1 <= k <= len(points):
        raise ValueError(f"k={k} must lie in [1, {len(points)}]")
    rng = make_rng(seed)
    centroids = _kmeanspp(points, k, rng)
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, KMEANS_MAX_ITER + 1):
        sq = _sq_dists(points, centroids)
        labels = np.argmin(sq, axis=1)
        _repair_empty(points, centroids, labels, sq)
        history.append(float(sq[np.arange(len(points)), labels].sum()))
        new = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        centroids = new
        if shift < KMEANS_TOL:
            break
    sq = _sq_dists(points, centroids)
    labels = np.argmin(sq, axis=1)
    _repair_empty(points, centroids, labels, sq)
    inertia = float(sq[np.arange(len(points)), labels].sum())
    history.append(inertia)
    return KMeansResult(centroids, labels, inertia, history, n_iter)


def _capacity_split(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray, cap: int) -> np.ndarray:
    """Reassign points so no cluster exceeds ``cap``, nearest feasible centroid first."""
    k = len(centroids)
    if np.bincount(labels, minlength=k).max() <= cap:
        return labels
    sq = _sq_dists(points, centroids)
    n = len(points)
    flat = np.argsort(sq.ravel(), kind="stable")
    out = np.full(n, -1)
    room = np.full(k, cap)
    left = n
    for f in flat:
        p, c = divmod(int(f), k)
        if out[p] < 0 and room[c] > 0:
            out[p] = c
            room[c] -= 1
            left -= 1
            if left == 0:
                break
    return out


@dataclass
class TreeNode:
    id: int
    parent: Optional[int]
    site_subset: tuple[int, ...]
    region: Box
    depth: int
    centroids: Optional[np.ndarray] = None
    children: list[int] = field(default_factory=list)
    model: object = None  # neural.Mlp once trained
    # class id of each entry of site_subset: child position for internal nodes, own position for leaves
    site_class: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.site_class is None:
            self.site_class = np.arange(len(self.site_subset))

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def n_classes(self) -> int:
        return len(self.site_subset) if self.is_leaf else len(self.children)


@dataclass(frozen=True)
class TreeParams:
    k: int = 16
    leaf_capacity: int = 64
    margin: float = 0.1

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.leaf_capacity < 1:
            raise ValueError("leaf_capacity must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


@dataclass
class SiteTree:
    nodes: list[TreeNode]
    params: TreeParams
    domain: Box
    root: int = 0

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def bfs(self) -> list[TreeNode]:
        order, queue = [], deque([self.root])
        while queue:
            node = self.nodes[queue.popleft()]
            order.append(node)
            queue.extend(node.children)
        return order

    def to_json(self, model_refs: dict[int, str] | None = None) -> dict:
        model_refs = model_refs or {}
        return {
            "params": {"k": self.params.k, "leaf_capacity": self.params.leaf_capacity,
                       "margin": self.params.margin},
            "domain": self.domain.to_json(),
            "nodes": [
                {
                    "id": n.id,
                    "parent": n.parent,
                    "children": list(n.children),
                    "site_subset": list(n.site_subset),
                    "region": n.region.to_json(),
                    "centroids": None if n.centroids is None else n.centroids.tolist(),
                    "model_ref": model_refs.get(n.id),
                }
                for n in self.nodes
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SiteTree":
        nodes = []
        depth: dict[int, int] = {}
        for item in doc["nodes"]:
            parent = item["parent"]
            depth[item["id"]] = 1 if parent is None else depth[parent] + 1
            cents = item["centroids"]
            nodes.append(TreeNode(
                id=item["id"], parent=parent, site_subset=tuple(item["site_subset"]),
                region=Box.from_json(item["region"]), depth=depth[item["id"]],
                centroids=None if cents is None else np.asarray(cents, dtype=float),
                children=list(item["children"]),
            ))
        by_id = {n.id: n for n in nodes}
        for node in nodes:
            if node.children:
                pos = {e: i for i, e in enumerate(node.site_subset)}
                cls_of = np.empty(len(node.site_subset), dtype=np.int64)
                for j, cid in enumerate(node.children):
                    for e in by_id[cid].site_subset:
                        cls_of[pos[e]] = j
                node.site_class = cls_of
        params = TreeParams(**doc["params"])
        return cls(nodes, params, Box.from_json(doc["domain"]))

    def dumps(self, model_refs: dict[int, str] | None = None) -> str:
        return json.dumps(self.to_json(model_refs), indent=1) + "\n"


def levels_needed(m: int, k: int, cap: int) -> int:
    """Smallest L with ``cap * k**L >= m``."""
    levels, reach = 0, cap
    while reach < m:
        reach *= k
        levels += 1
    return levels


def _site_region(ss: SiteSet, subset, margin: float) -> Box:
    return Box.union(ss.bboxes(subset)).dilate(margin).clip_to(ss.domain)


def build_tree(ss: SiteSet, k: int = 16, leaf_capacity: int = 64, seed: int = 0,
               margin: float = 0.1) -> SiteTree:
    """Recursively split the sites by k-means until every leaf holds at most ``leaf_capacity``.

    Node ``v``'s region is the bounding box of its sites' bounding boxes,
    dilated by ``margin`` times the parent region's diagonal and clipped to
    the domain. Child clusters are additionally capped at
    ``leaf_capacity * k**(L - 1)`` sites, where ``L`` is the number of levels
    the node still needs, which keeps the depth at
    ``ceil(log_k(n / leaf_capacity)) + 1``.
    """
    params = TreeParams(k, leaf_capacity, margin)
    params.validate()
    reps = ss.representative_points
    root = TreeNode(0, None, tuple(range(len(ss))),
                    _site_region(ss, range(len(ss)), margin * ss.domain.diagonal), 1)
    nodes = [root]
    queue = deque([root])
    while queue:
        node = queue.popleft()
        m = len(node.site_subset)
        if m <= leaf_capacity:
            continue
        subset = np.asarray(node.site_subset)
        k_eff = min(k, m)
        pts = reps[subset]
        km = kmeans(pts, k_eff, derive_seed(seed, "kmeans", node.id))
        cap = leaf_capacity * k ** (levels_needed(m, k, leaf_capacity) - 1)
        labels = _capacity_split(pts, km.centroids, km.assignment, cap)
        node.centroids = np.array([pts[labels == j].mean(axis=0) for j in range(k_eff)])
        node.site_class = np.asarray(labels, dtype=np.int64)
        for j in range(k_eff):
            members = tuple(int(e) for e in subset[labels == j])
            child = TreeNode(len(nodes), node.id, members,
                             _site_region(ss, members, margin * node.region.diagonal), node.depth + 1)
            nodes.append(child)
            node.children.append(child.id)
            queue.append(child)
    return SiteTree(nodes, params, ss.domain)
