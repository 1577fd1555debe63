import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralenvelope.geometry import (
    Box, Cuboid, Ellipse, Metric, Point, Segment, SiteSet, SiteSpec, distance, distance_matrix,
    ellipse_distance, norm, random_site_set, representative_point,
)

UNIT = Box((0, 0), (1, 1))


def sweep_ellipse(x, rx, ry, n=1_000_000):
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.min(np.hypot(x[0] - rx * np.cos(t), x[1] - ry * np.sin(t)))


def test_distance_examples():
    assert distance(Point((0, 0)), (3, 4)) == 5.0
    assert distance(Segment((0, 0), (1, 0)), (2, 0)) == 1.0
    for metric in Metric:
        assert distance(Cuboid((0, 0), (1, 1)), (0.5, 0.5), metric) == 0.0
    assert distance(Ellipse((0, 0), (2, 1)), (4, 0)) == pytest.approx(2.0, abs=1e-12)


def test_ellipse_matches_dense_sweep_at_1_1():
    expected = sweep_ellipse((1.0, 1.0), 2.0, 1.0)
    # frozen from the 10^6-point sweep: 0.128942678619...
    assert expected == pytest.approx(0.12894267862, abs=1e-10)
    assert distance(Ellipse((0, 0), (2, 1)), (1, 1)) == pytest.approx(expected, abs=1e-9)


def test_ellipse_against_sweep_random():
    rng = np.random.default_rng(0)
    t = np.linspace(0.0, 2 * np.pi, 200_000, endpoint=False)
    for _ in range(1000):
        rx, ry = rng.uniform(0.2, 2.0, 2)
        x = rng.uniform(-3, 3, 2)
        # refine the coarse sweep locally to reach well below 1e-6
        d = np.hypot(x[0] - rx * np.cos(t), x[1] - ry * np.sin(t))
        t0 = t[np.argmin(d)]
        tt = np.linspace(t0 - 1e-4, t0 + 1e-4, 2001)
        ref = np.min(np.hypot(x[0] - rx * np.cos(tt), x[1] - ry * np.sin(tt)))
        got = float(ellipse_distance(x[0], x[1], rx, ry))
        assert got == pytest.approx(ref, abs=1e-6)


def test_ellipse_degenerate_positions():
    # centre of an ellipse and of a circle, points on the axes, interior points
    assert float(ellipse_distance(0.0, 0.0, 2.0, 1.0)) == pytest.approx(1.0)
    assert float(ellipse_distance(0.0, 0.0, 1.0, 1.0)) == pytest.approx(1.0)
    assert float(ellipse_distance(0.0, 3.0, 2.0, 1.0)) == pytest.approx(2.0)
    assert float(ellipse_distance(0.5, 0.0, 2.0, 1.0)) == pytest.approx(sweep_ellipse((0.5, 0.0), 2, 1), abs=1e-9)
    assert float(ellipse_distance(0.3, 0.2, 1.0, 2.0)) == pytest.approx(sweep_ellipse((0.3, 0.2), 1, 2), abs=1e-9)


def test_representative_point():
    np.testing.assert_array_equal(representative_point(Segment((0, 0), (2, 0))), [1, 0])
    np.testing.assert_array_equal(representative_point(Cuboid((0, 0, 0), (2, 4, 6))), [1, 2, 3])
    np.testing.assert_array_equal(representative_point(Point((5, 5))), [5, 5])
    np.testing.assert_array_equal(representative_point(Ellipse((1, 2), (3, 1))), [1, 2])


def test_metric_axioms_random_triples():
    rng = np.random.default_rng(1)
    for metric in Metric:
        for d in (2, 3):
            a, b, c = (rng.normal(size=(10_000, d)) for _ in range(3))
            nab, nbc, nac = norm(a - b, metric), norm(b - c, metric), norm(a - c, metric)
            assert np.all(nab >= 0)
            assert np.all(nac <= nab + nbc + 1e-12)
            assert np.all(norm(np.zeros((1, d)), metric) == 0)
            assert np.all(norm(a, metric) > 0)


def _on_site_samples(site, rng, count):
    u = rng.random(count)
    if isinstance(site, Segment):
        a, b = np.array(site.a), np.array(site.b)
        return a + u[:, None] * (b - a)
    if isinstance(site, Ellipse):
        t = 2 * np.pi * u
        return np.c_[site.center[0] + site.radii[0] * np.cos(t), site.center[1] + site.radii[1] * np.sin(t)]
    lo, hi = np.array(site.lo), np.array(site.hi)
    return lo + rng.random((count, len(lo))) * (hi - lo)


@pytest.mark.parametrize("site, tol", [
    (Segment((0.1, 0.2), (0.7, 0.9)), 1e-12),
    (Segment((0.1, 0.2, 0.3), (0.7, 0.9, 0.2)), 1e-12),
    (Ellipse((0.5, 0.5), (0.3, 0.1)), 1e-9),
    (Cuboid((0.2, 0.3), (0.6, 0.5)), 0.0),
    (Cuboid((0.2, 0.3, 0.1), (0.6, 0.5, 0.9)), 0.0),
])
def test_zero_distance_on_site(site, tol):
    rng = np.random.default_rng(2)
    pts = _on_site_samples(site, rng, 1000)
    metrics = [Metric.L2] if site.kind in ("segment", "ellipse") else list(Metric)
    for metric in metrics:
        ss = SiteSet([site], Box([-1] * site.dim, [2] * site.dim), metric)
        assert np.max(distance_matrix(ss, pts)) <= tol


@pytest.mark.parametrize("site, metric", [
    (Point((0.3, 0.4)), Metric.L1), (Point((0.3, 0.4, 0.1)), Metric.LINF),
    (Segment((0.1, 0.2), (0.7, 0.9)), Metric.L2), (Ellipse((0.5, 0.5), (0.3, 0.1)), Metric.L2),
    (Cuboid((0.2, 0.3), (0.6, 0.5)), Metric.L1), (Cuboid((0.2, 0.3), (0.6, 0.5)), Metric.LINF),
    (Cuboid((0.2, 0.3, 0.1), (0.6, 0.5, 0.9)), Metric.L2),
])
def test_distance_is_1_lipschitz(site, metric):
    rng = np.random.default_rng(3)
    ss = SiteSet([site], Box([-1] * site.dim, [2] * site.dim), metric)
    x = rng.uniform(-1, 2, (2000, site.dim))
    y = x + rng.normal(scale=0.2, size=x.shape)
    fx, fy = distance_matrix(ss, x)[:, 0], distance_matrix(ss, y)[:, 0]
    assert np.all(np.abs(fx - fy) <= norm(x - y, metric) + 1e-9)


def test_unsupported_pairs_rejected_at_construction():
    with pytest.raises(ValueError):
        SiteSet([Segment((0, 0), (1, 1))], UNIT, Metric.L1)
    with pytest.raises(ValueError):
        SiteSet([Ellipse((0.5, 0.5), (0.1, 0.2))], UNIT, Metric.LINF)
    with pytest.raises(ValueError):
        Ellipse((0, 0), (0.0, 1.0))
    with pytest.raises(ValueError):
        Segment((0, 0), (0, 0))
    with pytest.raises(ValueError):
        Cuboid((0, 0), (1, 0))


def test_site_set_invariants():
    with pytest.raises(ValueError):
        SiteSet([], UNIT)
    with pytest.raises(ValueError):
        SiteSet([Point((5, 5))], UNIT)
    with pytest.raises(ValueError):
        SiteSet([Point((0.5, 0.5, 0.5))], UNIT)


def test_random_site_set_single_point():
    ss = random_site_set(SiteSpec(dim=2, n=1, family="points", domain=UNIT), 7)
    assert len(ss) == 1
    p = np.array(ss.sites[0].p)
    assert np.all((p >= 0) & (p <= 1))


def test_random_site_set_deterministic():
    spec = SiteSpec(dim=2, n=200, family="segments")
    assert random_site_set(spec, 1).dumps() == random_site_set(spec, 1).dumps()
    assert random_site_set(spec, 1).dumps() != random_site_set(spec, 2).dumps()


def test_random_cuboids_3d_invariants():
    dom = Box((0, 0, 0), (1, 1, 1))
    ss = random_site_set(SiteSpec(dim=3, n=50, family="cuboids", domain=dom, size_range=(0.05, 0.2)), 3)
    assert len(ss) == 50
    for s in ss.sites:
        assert all(l < h for l, h in zip(s.lo, s.hi))
        assert s.bbox().intersects(dom)


def test_random_sizes_in_range():
    ss = random_site_set(SiteSpec(n=300, family="segments", size_range=(0.02, 0.08)), 4)
    lengths = [np.linalg.norm(np.subtract(s.b, s.a)) for s in ss.sites]
    assert min(lengths) >= 0.02 - 1e-12 and max(lengths) <= 0.08 + 1e-12


@pytest.mark.parametrize("kwargs", [
    dict(n=0), dict(size_range=(0.1, 0.05)), dict(family="ellipses", dim=3, domain=Box((0,) * 3, (1,) * 3)),
    dict(family="segments", metric=Metric.L1), dict(family="blobs"), dict(size_range=(0.0, 0.1)),
])
def test_random_site_set_rejects(kwargs):
    with pytest.raises(ValueError):
        random_site_set(SiteSpec(**kwargs), 0)


def test_mixed_family_respects_metric():
    ss = random_site_set(SiteSpec(n=100, family="mixed", metric=Metric.L1), 5)
    assert {s.kind for s in ss.sites} <= {"point", "cuboid"}
    ss = random_site_set(SiteSpec(n=100, family="mixed"), 5)
    assert {s.kind for s in ss.sites} == {"point", "cuboid", "segment", "ellipse"}


def test_serialization_round_trip():
    ss = random_site_set(SiteSpec(n=40, family="mixed"), 9)
    text = ss.dumps()
    doc = json.loads(text)
    assert list(doc) == ["dim", "metric", "domain", "sites"]
    again = SiteSet.loads(text)
    assert again == ss
    assert again.dumps() == text


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.floats(0.05, 1.5), st.floats(0.05, 1.5))
def test_ellipse_distance_nonnegative_and_symmetric(x, rx, ry):
    d = float(ellipse_distance(x[0], x[1], rx, ry))
    assert d >= 0
    assert d == pytest.approx(float(ellipse_distance(-x[0], x[1], rx, ry)))
    assert d == pytest.approx(float(ellipse_distance(x[1], x[0], ry, rx)))
