"""Parametric sites and their point-to-site distance functions.

Four site families are supported: points, segments, axis-aligned ellipses
(2D, distance to the boundary curve) and axis-aligned solid cuboids. All
distances are evaluated in batch with numpy; ``distance`` is a thin scalar
wrapper around ``distance_matrix``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

from .rng import make_rng

ELLIPSE_TOL = 1e-10
ELLIPSE_MAX_ITER = 100
# root tolerance on the dimensionless boundary parameter; keeps distances well inside ELLIPSE_TOL
_S_TOL = 1e-14
_CHUNK = 4096


class Metric(str, Enum):
    L1 = "L1"
    L2 = "L2"
    LINF = "Linf"


def norm(v: np.ndarray, metric: Metric | str, axis: int = -1) -> np.ndarray:
    metric = Metric(metric)
    if metric is Metric.L2:
        return np.sqrt(np.sum(v * v, axis=axis))
    if metric is Metric.L1:
        return np.sum(np.abs(v), axis=axis)
    return np.max(np.abs(v), axis=axis)


def _vec(values: Iterable[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]``; used for the domain and node regions."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec(self.lo))
        object.__setattr__(self, "hi", _vec(self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("box corners differ in dimension")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box has hi < lo: {self.lo} {self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def diagonal(self) -> float:
        return math.dist(self.lo, self.hi)

    def intersects(self, other: "Box") -> bool:
        return all(a_lo <= b_hi and b_lo <= a_hi
                   for a_lo, a_hi, b_lo, b_hi in zip(self.lo, self.hi, other.lo, other.hi))

    def contains(self, other: "Box", tol: float = 0.0) -> bool:
        return all(o_lo >= s_lo - tol and o_hi <= s_hi + tol
                   for s_lo, s_hi, o_lo, o_hi in zip(self.lo, self.hi, other.lo, other.hi))

    def dilate(self, margin: float) -> "Box":
        return Box([v - margin for v in self.lo], [v + margin for v in self.hi])

    def clip_to(self, other: "Box") -> "Box":
        lo = [min(max(v, o), oh) for v, o, oh in zip(self.lo, other.lo, other.hi)]
        hi = [max(min(v, oh), o) for v, o, oh in zip(self.hi, other.lo, other.hi)]
        return Box(lo, hi)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, np.asarray(self.lo), np.asarray(self.hi))

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_json(cls, doc: dict) -> "Box":
        return cls(doc["lo"], doc["hi"])

    @classmethod
    def union(cls, boxes: Iterable["Box"]) -> "Box":
        boxes = list(boxes)
        lo = np.min([b.lo for b in boxes], axis=0)
        hi = np.max([b.hi for b in boxes], axis=0)
        return cls(lo, hi)


@dataclass(frozen=True)
class Point:
    p: tuple[float, ...]
    kind = "point"

    def __post_init__(self):
        object.__setattr__(self, "p", _vec(self.p))

    @property
    def dim(self) -> int:
        return len(self.p)

    def bbox(self) -> Box:
        return Box(self.p, self.p)

    def params(self) -> dict:
        return {"p": list(self.p)}


@dataclass(frozen=True)
class Segment:
    a: tuple[float, ...]
    b: tuple[float, ...]
    kind = "segment"

    def __post_init__(self):
        object.__setattr__(self, "a", _vec(self.a))
        object.__setattr__(self, "b", _vec(self.b))
        if len(self.a) != len(self.b):
            raise ValueError("segment endpoints differ in dimension")
        if self.a == self.b:
            raise ValueError("segment endpoints coincide")

    @property
    def dim(self) -> int:
        return len(self.a)

    def bbox(self) -> Box:
        return Box(np.minimum(self.a, self.b), np.maximum(self.a, self.b))

    def params(self) -> dict:
        return {"a": list(self.a), "b": list(self.b)}


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    radii: tuple[float, float]
    kind = "ellipse"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radii", _vec(self.radii))
        if len(self.center) != 2 or len(self.radii) != 2:
            raise ValueError("ellipses are 2D only")
        if min(self.radii) <= 0:
            raise ValueError(f"ellipse radii must be positive, got {self.radii}")

    @property
    def dim(self) -> int:
        return 2

    def bbox(self) -> Box:
        c, r = np.asarray(self.center), np.asarray(self.radii)
        return Box(c - r, c + r)

    def params(self) -> dict:
        return {"center": list(self.center), "radii": list(self.radii)}


@dataclass(frozen=True)
class Cuboid:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    kind = "cuboid"

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec(self.lo))
        object.__setattr__(self, "hi", _vec(self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("cuboid corners differ in dimension")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("cuboid requires lo < hi componentwise")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def bbox(self) -> Box:
        return Box(self.lo, self.hi)

    def params(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


Site = Union[Point, Segment, Ellipse, Cuboid]
SITE_TYPES = {cls.kind: cls for cls in (Point, Segment, Ellipse, Cuboid)}

# Segments and ellipses only have exact closed forms / iterations under L2.
_L2_ONLY = ("segment", "ellipse")


def representative_point(site: Site) -> np.ndarray:
    """Single point standing in for a site during clustering."""
    if isinstance(site, Point):
        return np.array(site.p)
    if isinstance(site, Segment):
        return 0.5 * (np.array(site.a) + np.array(site.b))
    if isinstance(site, Ellipse):
        return np.array(site.center)
    if isinstance(site, Cuboid):
        return 0.5 * (np.array(site.lo) + np.array(site.hi))
    raise TypeError(f"not a site: {site!r}")


def check_supported(site: Site, metric: Metric | str) -> None:
    metric = Metric(metric)
    if site.kind in _L2_ONLY and metric is not Metric.L2:
        raise ValueError(f"{site.kind} sites support only the L2 metric, got {metric.value}")


@dataclass(frozen=True)
class SiteSet:
    sites: tuple[Site, ...]
    domain: Box
    metric: Metric = Metric.L2
    dim: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "metric", Metric(self.metric))
        if not self.sites:
            raise ValueError("a site set needs at least one site")
        dim = self.dim or self.domain.dim
        object.__setattr__(self, "dim", dim)
        if dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {dim}")
        if self.domain.dim != dim:
            raise ValueError("domain dimension does not match the site set")
        for e, site in enumerate(self.sites):
            if site.dim != dim:
                raise ValueError(f"site {e} has dimension {site.dim}, expected {dim}")
            check_supported(site, self.metric)
            if not site.bbox().intersects(self.domain):
                raise ValueError(f"site {e} lies outside the domain")

    def __len__(self) -> int:
        return len(self.sites)

    @cached_property
    def _packed(self) -> dict[str, tuple[np.ndarray, ...]]:
        groups: dict[str, list[int]] = {}
        for e, site in enumerate(self.sites):
            groups.setdefault(site.kind, []).append(e)
        packed = {}
        for kind, idx in groups.items():
            sites = [self.sites[e] for e in idx]
            idx_arr = np.asarray(idx, dtype=np.int64)
            if kind == "point":
                packed[kind] = (idx_arr, np.array([s.p for s in sites]))
            elif kind == "segment":
                packed[kind] = (idx_arr, np.array([s.a for s in sites]), np.array([s.b for s in sites]))
            elif kind == "ellipse":
                packed[kind] = (idx_arr, np.array([s.center for s in sites]), np.array([s.radii for s in sites]))
            else:
                packed[kind] = (idx_arr, np.array([s.lo for s in sites]), np.array([s.hi for s in sites]))
        return packed

    @cached_property
    def representative_points(self) -> np.ndarray:
        return np.array([representative_point(s) for s in self.sites])

    def bboxes(self, subset: Sequence[int] | None = None) -> list[Box]:
        idx = range(len(self.sites)) if subset is None else subset
        return [self.sites[e].bbox() for e in idx]

    def subset(self, indices: Sequence[int]) -> "SiteSet":
        return SiteSet([self.sites[e] for e in indices], self.domain, self.metric, self.dim)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "metric": self.metric.value,
            "domain": self.domain.to_json(),
            "sites": [{"type": s.kind, **s.params()} for s in self.sites],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "SiteSet":
        sites = []
        for item in doc["sites"]:
            item = dict(item)
            kind = item.pop("type")
            if kind not in SITE_TYPES:
                raise ValueError(f"unknown site type {kind!r}")
            sites.append(SITE_TYPES[kind](**item))
        return cls(sites, Box.from_json(doc["domain"]), Metric(doc["metric"]), int(doc["dim"]))

    @classmethod
    def loads(cls, text: str) -> "SiteSet":
        return cls.from_json(json.loads(text))


# --- distances -------------------------------------------------------------

def _point_dist(x, p, metric):
    return norm(x[:, None, :] - p[None, :, :], metric)


def _cuboid_dist(x, lo, hi, metric):
    xe = x[:, None, :]
    gap = np.maximum(np.maximum(lo[None] - xe, xe - hi[None]), 0.0)
    return norm(gap, metric)


def _segment_dist(x, a, b):
    ab = b - a
    denom = np.sum(ab * ab, axis=1)
    ax = x[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nmd,md->nm", ax, ab) / denom, 0.0, 1.0)
    diff = ax - t[:, :, None] * ab[None]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def ellipse_distance(y0: np.ndarray, y1: np.ndarray, e0: np.ndarray, e1: np.ndarray) -> np.ndarray:
    """Distance from points ``(y0, y1)`` to the ellipse ``(x/e0)^2 + (y/e1)^2 = 1``.

    Inputs broadcast against each other; any sign of the query coordinates
    and any ordering of the semi-axes is accepted. The boundary parameter is
    found by safeguarded Newton iteration on the secular function of the
    closest-point condition, falling back to bisection whenever a step leaves
    the bracket.
    """
    y0, y1, e0, e1 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y0, y1, e0, e1)))
    y0, y1 = np.abs(y0), np.abs(y1)
    swap = e0 < e1
    y0, y1 = np.where(swap, y1, y0), np.where(swap, y0, y1)
    e0, e1 = np.where(swap, e1, e0), np.where(swap, e0, e1)

    dist = np.empty(y0.shape)

    # On the minor axis: nearest boundary point is the co-vertex.
    on_minor = (y1 > 0) & (y0 == 0)
    dist[on_minor] = np.abs(y1[on_minor] - e1[on_minor])

    # On the major axis (y1 == 0): closed form.
    axis = y1 == 0
    numer = e0 * y0
    denom = e0 * e0 - e1 * e1
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = axis & (numer < denom)
        xde0 = np.where(inner, numer / np.where(denom > 0, denom, 1.0), 0.0)
    x0 = e0 * xde0
    x1 = e1 * np.sqrt(np.clip(1.0 - xde0 * xde0, 0.0, None))
    dist[inner] = np.hypot(x0 - y0, x1)[inner]
    outer = axis & ~inner
    dist[outer] = np.abs(y0 - e0)[outer]

    general = (y0 > 0) & (y1 > 0)
    if np.any(general):
        a0, a1, r0_e, r1_e = y0[general], y1[general], e0[general], e1[general]
        z0, z1 = a0 / r0_e, a1 / r1_e
        g = z0 * z0 + z1 * z1 - 1.0
        r0 = (r0_e / r1_e) ** 2
        n0 = r0 * z0
        lo = z1 - 1.0
        hi = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
        s = 0.5 * (lo + hi)
        step_old = hi - lo
        active = g != 0
        s[~active] = 0.0
        for _ in range(ELLIPSE_MAX_ITER):
            if not np.any(active):
                break
            sa, lo_a, hi_a = s[active], lo[active], hi[active]
            q0 = n0[active] / (sa + r0[active])
            q1 = z1[active] / (sa + 1.0)
            val = q0 * q0 + q1 * q1 - 1.0
            deriv = -2.0 * (q0 * q0 / (sa + r0[active]) + q1 * q1 / (sa + 1.0))
            # secular function is decreasing in s
            lo_a = np.where(val > 0, sa, lo_a)
            hi_a = np.where(val < 0, sa, hi_a)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                newton = sa - val / deriv
            bisect = (~np.isfinite(newton) | (newton <= lo_a) | (newton >= hi_a)
                      | (np.abs(2.0 * val) > np.abs(step_old[active] * deriv)))
            nxt = np.where(bisect, 0.5 * (lo_a + hi_a), newton)
            nxt = np.where(val == 0, sa, nxt)
            moved = np.abs(nxt - sa)
            done = (val == 0) | (moved <= _S_TOL * (1.0 + np.abs(sa))) \
                | (hi_a - lo_a <= _S_TOL * (1.0 + np.abs(sa)))
            idx = np.flatnonzero(active)
            s[idx], lo[idx], hi[idx], step_old[idx] = nxt, lo_a, hi_a, moved
            active[idx[done]] = False
        x0 = r0 * a0 / (s + r0)
        x1 = a1 / (s + 1.0)
        d = np.hypot(x0 - a0, x1 - a1)
        d[g == 0] = 0.0
        dist[general] = d
    return dist


def _ellipse_dist(x, center, radii):
    rel = x[:, None, :] - center[None, :, :]
    return ellipse_distance(rel[..., 0], rel[..., 1], radii[None, :, 0], radii[None, :, 1])


def distance_matrix(ss: SiteSet, x: np.ndarray, subset: Sequence[int] | None = None) -> np.ndarray:
    """Distances ``f_e(x)`` for all query rows and sites; shape ``(N, n)``.

    With ``subset``, only those sites are evaluated and columns follow the
    order of ``subset``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != ss.dim:
        raise ValueError(f"queries have dimension {x.shape[1]}, site set has {ss.dim}")
    target = ss if subset is None else ss.subset(subset)
    out = np.empty((x.shape[0], len(target)))
    for start in range(0, x.shape[0], _CHUNK):
        xc = x[start:start + _CHUNK]
        block = out[start:start + _CHUNK]
        for kind, packed in target._packed.items():
            idx = packed[0]
            if kind == "point":
                block[:, idx] = _point_dist(xc, packed[1], target.metric)
            elif kind == "segment":
                block[:, idx] = _segment_dist(xc, packed[1], packed[2])
            elif kind == "ellipse":
                block[:, idx] = _ellipse_dist(xc, packed[1], packed[2])
            else:
                block[:, idx] = _cuboid_dist(xc, packed[1], packed[2], target.metric)
    return out


def distance(site: Site, x: Sequence[float], metric: Metric | str = Metric.L2) -> float:
    check_supported(site, metric)
    x = np.asarray(x, dtype=float)
    ss = SiteSet([site], Box(np.minimum(x, site.bbox().lo), np.maximum(x, site.bbox().hi)), metric)
    return float(distance_matrix(ss, x[None])[0, 0])


# --- random generation -------------------------------------------------------

FAMILIES = ("points", "segments", "ellipses", "cuboids", "mixed")


@dataclass(frozen=True)
class SiteSpec:
    dim: int = 2
    n: int = 200
    family: str = "segments"
    size_range: tuple[float, float] = (0.02, 0.08)
    domain: Box = field(default_factory=lambda: Box((0.0, 0.0), (1.0, 1.0)))
    metric: Metric = Metric.L2

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.domain.dim != self.dim:
            raise ValueError("domain dimension does not match dim")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        lo, hi = self.size_range
        if not lo <= hi:
            raise ValueError(f"empty size_range {self.size_range}")
        if lo <= 0 or hi >= self.domain.diagonal:
            raise ValueError("size_range must lie inside (0, diam(D))")
        if self.family == "ellipses" and self.dim != 2:
            raise ValueError("ellipses are only available in 2D")
        metric = Metric(self.metric)
        if self.family in ("segments", "ellipses") and metric is not Metric.L2:
            raise ValueError(f"{self.family} require the L2 metric")


def _mixed_kinds(spec: SiteSpec) -> list[str]:
    kinds = ["point", "cuboid"]
    if Metric(spec.metric) is Metric.L2:
        kinds.append("segment")
        if spec.dim == 2:
            kinds.append("ellipse")
    return sorted(kinds)


def random_site_set(spec: SiteSpec, seed: int) -> SiteSet:
    """Draw ``spec.n`` sites whose representative points are uniform in the domain.

    All random variates are drawn up front in a fixed order, so the result
    depends only on ``(spec, seed)``.
    """
    spec.validate()
    rng = make_rng(seed)
    n, d = spec.n, spec.dim
    lo, hi = np.asarray(spec.domain.lo), np.asarray(spec.domain.hi)
    centers = lo + (hi - lo) * rng.random((n, d))
    sizes = rng.uniform(spec.size_range[0], spec.size_range[1], n)
    directions = rng.standard_normal((n, d))
    aspects = rng.uniform(0.25, 1.0, n)
    flips = rng.random(n) < 0.5
    sides = rng.uniform(spec.size_range[0], spec.size_range[1], (n, d))
    kind_draw = rng.random(n)

    if spec.family == "mixed":
        options = _mixed_kinds(spec)
        kinds = [options[min(int(u * len(options)), len(options) - 1)] for u in kind_draw]
    else:
        kinds = [spec.family[:-1]] * n

    sites: list[Site] = []
    for e in range(n):
        c = centers[e]
        kind = kinds[e]
        if kind == "point":
            sites.append(Point(c))
        elif kind == "segment":
            u = directions[e]
            nrm = np.linalg.norm(u)
            u = u / nrm if nrm > 0 else np.eye(d)[0]
            half = 0.5 * sizes[e] * u
            sites.append(Segment(c - half, c + half))
        elif kind == "ellipse":
            major, minor = 0.5 * sizes[e], 0.5 * sizes[e] * aspects[e]
            radii = (minor, major) if flips[e] else (major, minor)
            sites.append(Ellipse(c, radii))
        else:
            half = 0.5 * sides[e]
            sites.append(Cuboid(c - half, c + half))
    return SiteSet(sites, spec.domain, spec.metric, d)
