"""Accuracy and ordering metrics against the exact oracle, plus PPM rasters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import SiteSet, distance_matrix
from .hierarchy import SiteTree
from .oracle import two_nearest
from .rng import splitmix64
from .runtime import OraclePredictor, Ranking, TreePredictor

_EVAL_CHUNK = 8192


def as_predictor(predictor, beam: int = 1):
    if isinstance(predictor, SiteTree):
        return TreePredictor(predictor, beam)
    if isinstance(predictor, SiteSet):
        return OraclePredictor(predictor)
    return predictor


def _check_queries(queries) -> np.ndarray:
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    if q.shape[0] == 0 or q.size == 0:
        raise ValueError("empty query set")
    return q


# --- Kendall tau -------------------------------------------------------------

def kendall_tau(scores: Sequence[float], distances: Sequence[float]) -> float:
    """Agreement between descending ``scores`` and ascending ``distances``.

    ``(concordant - discordant) / untied pairs``; a pair tied in either list
    counts toward neither the numerator nor the denominator. Returns nan when
    every pair is tied.
    """
    s = np.asarray(scores, dtype=float)
    d = np.asarray(distances, dtype=float)
    if s.shape != d.shape or s.ndim != 1:
        raise ValueError("scores and distances must be 1D of equal length")
    if len(s) < 2:
        raise ValueError("kendall_tau needs at least two items")
    return float(kendall_tau_rows(s[None], d[None])[0])


def kendall_tau_rows(scores: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """Row-wise ``kendall_tau``; entries with non-finite score are padding and ignored."""
    n, c = scores.shape
    if c < 2:
        return np.full(n, np.nan)
    iu, ju = np.triu_indices(c, 1)
    out = np.empty(n)
    step = max(1, 4_000_000 // len(iu))
    for start in range(0, n, step):
        s = scores[start:start + step]
        d = distances[start:start + step]
        valid = np.isfinite(s)
        ok = valid[:, iu] & valid[:, ju]
        with np.errstate(invalid="ignore"):
            prod = np.sign(s[:, iu] - s[:, ju]) * np.sign(d[:, ju] - d[:, iu])
        prod = np.where(ok, prod, 0.0)
        untied = np.count_nonzero(prod, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[start:start + step] = np.where(untied > 0, prod.sum(axis=1) / untied, np.nan)
    return out


# --- reports -------------------------------------------------------------------

@dataclass
class Oracle2:
    """Oracle nearest / second-nearest labels and distances for a query set."""

    label: np.ndarray
    d1: np.ndarray
    second: np.ndarray
    d2: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.d2 - self.d1

    @classmethod
    def compute(cls, ss: SiteSet, queries: np.ndarray) -> "Oracle2":
        return cls(*two_nearest(distance_matrix(ss, queries)))


@dataclass
class ProfileBin:
    lo: float
    hi: float
    n: int
    errors: int
    rate: Optional[float]


@dataclass
class EvalReport:
    top1: float
    top2: float
    kendall_tau: float
    order2: float
    n_queries: int
    beam: int
    boundary_gap: float
    top1_boundary: Optional[float]
    top2_boundary: Optional[float]
    n_boundary: int
    boundary_profile: list[ProfileBin] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, allow_nan=False) + "\n"


def _rank_chunks(predictor, queries: np.ndarray):
    for start in range(0, len(queries), _EVAL_CHUNK):
        yield start, predictor.rank(queries[start:start + _EVAL_CHUNK])


def _top2(predictor, queries) -> np.ndarray:
    return np.concatenate([r.top(2) for _, r in _rank_chunks(predictor, queries)])


def top_k_accuracy(predictor, ss: SiteSet, queries, k: int = 1, beam: int = 1) -> float:
    """Fraction of queries whose oracle label is among the top-k predicted sites."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    queries = _check_queries(queries)
    predictor = as_predictor(predictor, beam)
    label = Oracle2.compute(ss, queries).label if len(ss) > 1 else np.zeros(len(queries), int)
    top = _top2(predictor, queries)[:, :k]
    return float(np.mean(np.any(top == label[:, None], axis=1)))


def order2_accuracy(predictor, ss: SiteSet, queries, beam: int = 1) -> float:
    """Fraction of queries whose second-ranked candidate is the true second-nearest site."""
    queries = _check_queries(queries)
    predictor = as_predictor(predictor, beam)
    truth = Oracle2.compute(ss, queries)
    top = _top2(predictor, queries)
    return float(np.mean(top[:, 1] == truth.second))


def mean_kendall_tau(predictor, ss: SiteSet, queries, beam: int = 1) -> float:
    """Per-query tau over the candidate pool, averaged over queries with a defined tau."""
    queries = _check_queries(queries)
    predictor = as_predictor(predictor, beam)
    taus = []
    for start, r in _rank_chunks(predictor, queries):
        taus.append(_ranking_tau(ss, queries[start:start + len(r.scores)], r))
    taus = np.concatenate(taus)
    return float(np.nanmean(taus)) if np.any(np.isfinite(taus)) else float("nan")


def _ranking_tau(ss: SiteSet, queries: np.ndarray, r: Ranking) -> np.ndarray:
    d = distance_matrix(ss, queries)
    cand_d = np.take_along_axis(d, np.maximum(r.candidates, 0), axis=1)
    return kendall_tau_rows(r.scores, cand_d)


def boundary_profile(predictor, ss: SiteSet, queries, bins: int = 10, beam: int = 1,
                     gap_max: Optional[float] = None) -> list[ProfileBin]:
    """Top-1 error rate per equal-width oracle-gap bin over ``[0, P95(gap)]``.

    Gaps above the upper edge fall into the last bin. Empty bins report
    ``rate=None``.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    queries = _check_queries(queries)
    predictor = as_predictor(predictor, beam)
    truth = Oracle2.compute(ss, queries)
    wrong = _top2(predictor, queries)[:, 0] != truth.label
    return _profile(truth.gap, wrong, bins, gap_max)


def _profile(gap: np.ndarray, wrong: np.ndarray, bins: int, gap_max: Optional[float]) -> list[ProfileBin]:
    finite = gap[np.isfinite(gap)]
    top = gap_max if gap_max is not None else (float(np.percentile(finite, 95)) if len(finite) else 1.0)
    top = top if top > 0 else 1.0
    edges = np.linspace(0.0, top, bins + 1)
    which = np.clip(np.searchsorted(edges, gap, side="right") - 1, 0, bins - 1)
    out = []
    for b in range(bins):
        sel = which == b
        n = int(sel.sum())
        err = int(wrong[sel].sum())
        out.append(ProfileBin(float(edges[b]), float(edges[b + 1]), n, err, err / n if n else None))
    return out


def evaluate(predictor, ss: SiteSet, queries, beam: int = 1, bins: int = 10,
             boundary_gap: Optional[float] = None, config: Optional[dict] = None) -> EvalReport:
    """All metrics in one pass over the queries.

    ``boundary_gap`` (default 2% of the domain diagonal) selects the
    boundary-weighted subset: queries whose oracle gap is at most that value.
    """
    queries = _check_queries(queries)
    predictor = as_predictor(predictor, beam)
    boundary_gap = 0.02 * ss.domain.diagonal if boundary_gap is None else boundary_gap
    tops, taus, truths = [], [], []
    for start, r in _rank_chunks(predictor, queries):
        q = queries[start:start + len(r.scores)]
        d = distance_matrix(ss, q)
        truths.append(two_nearest(d))
        tops.append(r.top(2))
        cand_d = np.take_along_axis(d, np.maximum(r.candidates, 0), axis=1)
        taus.append(kendall_tau_rows(r.scores, cand_d))
    truth = Oracle2(*(np.concatenate(parts) for parts in zip(*truths)))
    top = np.concatenate(tops)
    tau = np.concatenate(taus)
    hit1 = top[:, 0] == truth.label
    hit2 = hit1 | (top[:, 1] == truth.label)
    near = truth.gap <= boundary_gap
    return EvalReport(
        top1=float(hit1.mean()),
        top2=float(hit2.mean()),
        kendall_tau=float(np.nanmean(tau)) if np.any(np.isfinite(tau)) else 0.0,
        order2=float(np.mean(top[:, 1] == truth.second)) if len(ss) > 1 else 0.0,
        n_queries=len(queries),
        beam=getattr(predictor, "beam", 1),
        boundary_gap=float(boundary_gap),
        top1_boundary=float(hit1[near].mean()) if near.any() else None,
        top2_boundary=float(hit2[near].mean()) if near.any() else None,
        n_boundary=int(near.sum()),
        boundary_profile=_profile(truth.gap, ~hit1, bins, None),
        config=dict(config or {}),
    )


def profile_csv(profile: Sequence[ProfileBin]) -> str:
    lines = ["bin_lo,bin_hi,n,errors"]
    lines += [f"{b.lo!r},{b.hi!r},{b.n},{b.errors}" for b in profile]
    return "\n".join(lines) + "\n"


# --- rasters -------------------------------------------------------------------

def palette(index: np.ndarray) -> np.ndarray:
    """Fixed hash colour per site index, shape ``(..., 3)`` uint8."""
    index = np.asarray(index)
    flat = index.ravel()
    cache = {int(i): splitmix64(int(i) + 1) for i in np.unique(flat)}
    rgb = np.array([[(cache[int(i)] >> s) & 0xFF for s in (0, 8, 16)] for i in flat], dtype=np.uint8)
    return rgb.reshape(index.shape + (3,))


def pixel_grid(ss: SiteSet, resolution: int, slice_axis: int = 2, slice_value: Optional[float] = None
               ) -> np.ndarray:
    """Pixel-centre query points, row 0 at the top (max y); shape ``(res*res, d)``."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    lo, hi = np.asarray(ss.domain.lo), np.asarray(ss.domain.hi)
    t = (np.arange(resolution) + 0.5) / resolution
    axes = [0, 1] if ss.dim == 2 else [a for a in range(3) if a != slice_axis]
    xs = lo[axes[0]] + t * (hi[axes[0]] - lo[axes[0]])
    ys = hi[axes[1]] - t * (hi[axes[1]] - lo[axes[1]])
    gx, gy = np.meshgrid(xs, ys)
    pts = np.empty((resolution * resolution, ss.dim))
    pts[:, axes[0]], pts[:, axes[1]] = gx.ravel(), gy.ravel()
    if ss.dim == 3:
        pts[:, slice_axis] = 0.5 * (lo[slice_axis] + hi[slice_axis]) if slice_value is None else slice_value
    return pts


def rasterize(predictor, ss: SiteSet, resolution: int, mode: str = "labels", beam: int = 1,
              slice_axis: int = 2, slice_value: Optional[float] = None) -> np.ndarray:
    """Render labels, errors against the oracle, or the envelope as an RGB image.

    ``predictor`` is a trained ``SiteTree`` or the ``SiteSet`` itself (oracle).
    """
    if mode not in ("labels", "error", "envelope"):
        raise ValueError(f"unknown raster mode {mode!r}")
    pts = pixel_grid(ss, resolution, slice_axis, slice_value)
    is_oracle = isinstance(predictor, (SiteSet, OraclePredictor))
    predictor = as_predictor(predictor, beam)
    top, best = [], []
    for _, r in _rank_chunks(predictor, pts):
        top.append(r.top(1)[:, 0])
        best.append(r.winning_logit())
    top, best = np.concatenate(top), np.concatenate(best)
    shape = (resolution, resolution)
    if mode == "labels":
        img = palette(top.reshape(shape))
    elif mode == "error":
        truth = np.argmin(distance_matrix(ss, pts), axis=1)
        img = np.full(shape + (3,), 255, dtype=np.uint8)
        bad = (top != truth).reshape(shape)
        img[bad] = (255, 0, 0)
    else:
        val = -best if is_oracle else best
        span = val.max() - val.min()
        gray = np.zeros_like(val) if span <= 0 else (val - val.min()) / span
        g = np.round(gray * 255).astype(np.uint8).reshape(shape)
        img = np.repeat(g[:, :, None], 3, axis=2)
    return img


def ppm_bytes(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(img))


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
