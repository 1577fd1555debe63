"""Exact brute-force lower envelope, argmin labels and k-th order neighbours.

Every query is answered by evaluating all site distances; there is no
spatial index. Ties are broken by the smallest site index, both for the
argmin label and inside ``order_k`` rankings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import SiteSet, distance_matrix


@dataclass(frozen=True)
class OrderedNeighbors:
    indices: tuple[int, ...]
    distances: tuple[float, ...]

    def tie_group(self, tol: float = 0.0) -> tuple[int, ...]:
        """Indices attaining the minimum (the set T of the stratum containing x)."""
        d0 = self.distances[0]
        return tuple(i for i, d in zip(self.indices, self.distances) if d <= d0 + tol)


def envelope(ss: SiteSet, x: Sequence[float]) -> tuple[float, int]:
    d = distance_matrix(ss, np.asarray(x, dtype=float)[None])[0]
    label = int(np.argmin(d))
    return float(d[label]), label


def envelope_batch(ss: SiteSet, x: np.ndarray, subset: Sequence[int] | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``envelope``; with ``subset`` the label is a position in ``subset``."""
    d = distance_matrix(ss, x, subset)
    label = np.argmin(d, axis=1)  # first occurrence == smallest index
    return d[np.arange(len(d)), label], label


def order_k(ss: SiteSet, x: Sequence[float], k: int) -> OrderedNeighbors:
    if not 1 <= k <= len(ss):
        raise ValueError(f"k must lie in [1, {len(ss)}], got {k}")
    d = distance_matrix(ss, np.asarray(x, dtype=float)[None])[0]
    order = np.argsort(d, kind="stable")[:k]
    return OrderedNeighbors(tuple(int(i) for i in order), tuple(float(v) for v in d[order]))


def two_nearest(dist: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Indices and values of the smallest and second-smallest column per row.

    Ties resolve to the lower column index. With a single column the second
    index is -1 and the second distance is +inf.
    """
    n_rows, n_cols = dist.shape
    rows = np.arange(n_rows)
    i1 = np.argmin(dist, axis=1)
    d1 = dist[rows, i1]
    if n_cols < 2:
        return i1, d1, np.full(n_rows, -1), np.full(n_rows, np.inf)
    masked = dist.copy()
    masked[rows, i1] = np.inf
    i2 = np.argmin(masked, axis=1)
    return i1, d1, i2, masked[rows, i2]


def order2_batch(ss: SiteSet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(label, d1, second, d2)`` for every query row."""
    if len(ss) < 2:
        raise ValueError("order-2 neighbours need at least two sites")
    return two_nearest(distance_matrix(ss, x))


def fat_bisector_mask(dist: np.ndarray, eps: float) -> np.ndarray:
    """Rows where at least two columns lie within ``eps`` of the row minimum."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if dist.shape[1] < 2:
        return np.zeros(dist.shape[0], dtype=bool)
    part = np.partition(dist, 1, axis=1)
    return part[:, 1] <= part[:, 0] + eps


def in_fat_bisector(ss: SiteSet, subset: Sequence[int], x: Sequence[float], eps: float) -> bool:
    if len(subset) == 0:
        raise ValueError("subset must be nonempty")
    d = distance_matrix(ss, np.asarray(x, dtype=float)[None], subset)
    return bool(fat_bisector_mask(d, eps)[0])


def write_labels_csv(path: str | Path, ss: SiteSet, x: np.ndarray) -> None:
    """Batch labelling file: one row ``x_1..x_d, label, d1, d2`` per query."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    label, d1, _, d2 = two_nearest(distance_matrix(ss, x))
    header = [f"x{i + 1}" for i in range(ss.dim)] + ["label", "d1", "d2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, lab, a, b in zip(x, label, d1, d2):
            w.writerow([repr(float(v)) for v in row] + [int(lab), repr(float(a)), repr(float(b))])


def read_labels_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    d = len(rows[0]) - 3
    return body[:, :d], body[:, d].astype(np.int64), body[:, d + 1], body[:, d + 2]
