"""Per-node training sets: uniform samples plus rejection samples near class boundaries."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .geometry import Box, SiteSet, distance_matrix, norm
from .hierarchy import TreeNode
from .oracle import fat_bisector_mask, two_nearest
from .rng import derive_seed, make_rng

DATASET_MAGIC = b"GVDS"


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplePlan:
    n_uniform: int = 6000
    n_boundary: int = 6000
    # absolute eps; when None, eps = epsilon_frac * node region diagonal
    epsilon: Optional[float] = None
    epsilon_frac: float = 0.05
    max_rejection_factor: int = 1000
    leaf_true_distances: bool = True

    def validate(self) -> None:
        if self.n_uniform < 0 or self.n_boundary < 0:
            raise ValueError("sample counts must be >= 0")
        if (self.epsilon is not None and self.epsilon < 0) or self.epsilon_frac < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_rejection_factor < 1:
            raise ValueError("max_rejection_factor must be >= 1")

    def eps_for(self, region: Box) -> float:
        return self.epsilon if self.epsilon is not None else self.epsilon_frac * region.diagonal


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    label: int
    gap: float


@dataclass
class LabeledSamples:
    """Struct-of-arrays training set: coordinates, class labels and oracle gaps."""

    x: np.ndarray
    label: np.ndarray
    gap: np.ndarray

    def __len__(self) -> int:
        return len(self.label)

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.x[i], int(self.label[i]), float(self.gap[i]))

    def __iter__(self) -> Iterator[LabeledSample]:
        return (self[i] for i in range(len(self)))

    def _dtype(self) -> np.dtype:
        d = self.x.shape[1]
        return np.dtype([("x", "<f8", (d,)), ("label", "<u4"), ("gap", "<f8")])

    def to_bytes(self) -> bytes:
        d = self.x.shape[1]
        rec = np.empty(len(self), dtype=self._dtype())
        rec["x"], rec["label"], rec["gap"] = self.x, self.label, self.gap
        return DATASET_MAGIC + struct.pack("<IQ", d, len(self)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "LabeledSamples":
        if raw[:4] != DATASET_MAGIC:
            raise ValueError("not a dataset file")
        d, count = struct.unpack("<IQ", raw[4:16])
        dtype = np.dtype([("x", "<f8", (d,)), ("label", "<u4"), ("gap", "<f8")])
        rec = np.frombuffer(raw, dtype=dtype, count=count, offset=16)
        return cls(rec["x"].astype(np.float64).reshape(count, d),
                   rec["label"].astype(np.int64), rec["gap"].astype(np.float64))

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path: str | Path) -> "LabeledSamples":
        return cls.from_bytes(Path(path).read_bytes())


def sample_uniform(region: Box, n: int, seed: int) -> np.ndarray:
    lo, hi = np.asarray(region.lo), np.asarray(region.hi)
    return lo + (hi - lo) * make_rng(seed).random((n, region.dim))


def class_distances(node: TreeNode, ss: SiteSet, x: np.ndarray) -> np.ndarray:
    """True distance from each query to each class of ``node`` (min over the class's sites)."""
    d = distance_matrix(ss, x, node.site_subset)
    if node.is_leaf:
        return d
    out = np.empty((len(x), node.n_classes))
    for c in range(node.n_classes):
        out[:, c] = d[:, node.site_class == c].min(axis=1)
    return out


def surrogate_distances(node: TreeNode, ss: SiteSet, x: np.ndarray) -> np.ndarray:
    """Distances to child centroids (internal) or site representative points (leaf)."""
    anchors = node.centroids if not node.is_leaf else ss.representative_points[list(node.site_subset)]
    return norm(x[:, None, :] - anchors[None, :, :], ss.metric)


def sample_fat_bisector(node: TreeNode, n: int, eps: float, seed: int, use_surrogate: bool,
                        ss: SiteSet, max_rejection_factor: int = 1000) -> np.ndarray:
    """Rejection-sample ``n`` points of the node region lying in the eps-thickened boundary.

    Membership requires the two smallest class distances to be within ``eps``
    of each other; with ``use_surrogate`` the distances are to the class
    anchors (see ``surrogate_distances``) instead of the true sites.
    """
    if node.n_classes < 2:
        raise ValueError("fat-bisector sampling needs at least two classes")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if n == 0:
        return np.empty((0, node.region.dim))
    rng = make_rng(seed)
    lo, hi = np.asarray(node.region.lo), np.asarray(node.region.hi)
    dist_fn = surrogate_distances if use_surrogate else class_distances
    batch = max(2 * n, 4 * max_rejection_factor)
    accepted: list[np.ndarray] = []
    have = drawn = 0
    while have < n:
        cand = lo + (hi - lo) * rng.random((batch, len(lo)))
        keep = cand[fat_bisector_mask(dist_fn(node, ss, cand), eps)]
        drawn += batch
        if drawn == batch and len(keep) * max_rejection_factor < batch:
            raise SamplingError(
                f"fat bisector too thin at node {node.id}: acceptance {len(keep)}/{batch} "
                f"with eps={eps:.3g}; increase eps")
        if drawn > n * max_rejection_factor + batch:
            raise SamplingError(f"fat bisector sampling at node {node.id} exceeded the draw budget; "
                                "increase eps")
        accepted.append(keep)
        have += len(keep)
    return np.concatenate(accepted)[:n]


def label_points(node: TreeNode, ss: SiteSet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class label (argmin over the node's sites, mapped to its class) and class gap."""
    d = distance_matrix(ss, x, node.site_subset)
    label = node.site_class[np.argmin(d, axis=1)]
    if node.n_classes < 2:
        return label, np.full(len(x), np.inf)
    _, d1, _, d2 = two_nearest(class_distances(node, ss, x) if not node.is_leaf else d)
    return label, d2 - d1


def make_dataset(node: TreeNode, ss: SiteSet, plan: SamplePlan, seed: int) -> LabeledSamples:
    plan.validate()
    parts = [sample_uniform(node.region, plan.n_uniform, derive_seed(seed, "uniform"))]
    if node.n_classes >= 2 and plan.n_boundary > 0:
        use_surrogate = not (node.is_leaf and plan.leaf_true_distances)
        parts.append(sample_fat_bisector(node, plan.n_boundary, plan.eps_for(node.region),
                                         derive_seed(seed, "boundary"), use_surrogate, ss,
                                         plan.max_rejection_factor))
    x = np.concatenate(parts)
    perm = make_rng(derive_seed(seed, "shuffle")).permutation(len(x))
    x = x[perm]
    label, gap = label_points(node, ss, x)
    return LabeledSamples(x, label.astype(np.int64), gap)
