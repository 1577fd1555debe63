import numpy as np
import pytest

from neuralenvelope.geometry import Box, Point, SiteSet, SiteSpec, distance, random_site_set
from neuralenvelope.oracle import (
    envelope, envelope_batch, fat_bisector_mask, in_fat_bisector, order_k, read_labels_csv,
    write_labels_csv,
)

BOX = Box((-1, -1), (6, 1))


def full_sort_labels(ss, x):
    """Independent oracle: compute every distance one site at a time and sort."""
    out = []
    for q in x:
        ds = [(distance(s, q, ss.metric), e) for e, s in enumerate(ss.sites)]
        out.append(sorted(ds))
    return out


def test_envelope_nearer_site_and_tie():
    ss = SiteSet([Point((0, 0)), Point((4, 0))], BOX)
    assert envelope(ss, (1, 0)) == (1.0, 0)
    assert envelope(ss, (2, 0))[1] == 0
    ss_rev = SiteSet([Point((4, 0)), Point((0, 0))], BOX)
    assert envelope(ss_rev, (2, 0))[1] == 0


def test_envelope_matches_full_sort_segments():
    ss = random_site_set(SiteSpec(n=20, family="segments"), 11)
    x = np.random.default_rng(0).random((1000, 2))
    _, labels = envelope_batch(ss, x)
    expected = [row[0][1] for row in full_sort_labels(ss, x)]
    assert labels.tolist() == expected


def test_order_k_examples():
    ss = SiteSet([Point((0, 0)), Point((1, 0)), Point((5, 0))], BOX)
    assert order_k(ss, (0.4, 0), 2).indices == (0, 1)
    full = order_k(ss, (3.5, 0), 3)
    assert sorted(full.indices) == [0, 1, 2]
    assert list(full.distances) == sorted(full.distances)
    with pytest.raises(ValueError):
        order_k(ss, (0, 0), 4)


def test_order_k_matches_full_sort():
    ss = random_site_set(SiteSpec(n=50, family="mixed"), 12)
    x = np.random.default_rng(1).random((100, 2))
    for q, row in zip(x, full_sort_labels(ss, x)):
        got = order_k(ss, q, 5)
        assert list(got.indices) == [e for _, e in row[:5]]
        np.testing.assert_allclose(got.distances, [d for d, _ in row[:5]], atol=1e-12)
        assert got.indices[0] == envelope(ss, q)[1]


def test_order_k_tie_group():
    ss = SiteSet([Point((0, 0)), Point((2, 0)), Point((5, 0))], BOX)
    assert order_k(ss, (1, 0), 3).tie_group() == (0, 1)


def test_fat_bisector_examples():
    ss = SiteSet([Point((0, 0)), Point((2, 0))], BOX)
    assert in_fat_bisector(ss, [0, 1], (1, 0), 0.0)
    assert not in_fat_bisector(ss, [0, 1], (0, 0), 0.5)
    # f1 = 0.8, f2 = 1.2
    assert in_fat_bisector(ss, [0, 1], (0.8, 0), 0.4 + 1e-12)
    assert not in_fat_bisector(ss, [0, 1], (0.8, 0), 0.39)
    assert not in_fat_bisector(ss, [0], (1, 0), 10.0)


def test_fat_bisector_eps_monotone():
    ss = random_site_set(SiteSpec(n=30, family="segments"), 3)
    rng = np.random.default_rng(4)
    x = rng.random((10_000, 2))
    from neuralenvelope.geometry import distance_matrix
    d = distance_matrix(ss, x)
    eps = rng.uniform(0, 0.05, 10_000)
    more = eps + rng.uniform(0, 0.05, 10_000)
    part = np.sort(d, axis=1)
    a = part[:, 1] <= part[:, 0] + eps
    b = part[:, 1] <= part[:, 0] + more
    assert np.all(~a | b)
    # order-2 characterisation
    for e in (0.0, 0.01, 0.05):
        np.testing.assert_array_equal(fat_bisector_mask(d, e), part[:, 1] - part[:, 0] <= e)


def test_envelope_lipschitz_and_label_constancy():
    ss = random_site_set(SiteSpec(n=25, family="segments"), 5)
    rng = np.random.default_rng(6)
    x = rng.random((2000, 2))
    y = np.clip(x + rng.normal(scale=0.05, size=x.shape), 0, 1)
    lx, _ = envelope_batch(ss, x)
    ly, _ = envelope_batch(ss, y)
    assert np.all(np.abs(lx - ly) <= np.linalg.norm(x - y, axis=1) + 1e-12)
    # segments whose every point keeps a gap > 0 away from the bisector keep one label
    from neuralenvelope.geometry import distance_matrix
    d = np.sort(distance_matrix(ss, x), axis=1)
    deep = x[d[:, 1] - d[:, 0] > 0.05][:50]
    for p in deep:
        walk = p + np.linspace(0, 1, 20)[:, None] * 0.01
        dw = np.sort(distance_matrix(ss, walk), axis=1)
        if np.all(dw[:, 1] - dw[:, 0] > 0.01):
            assert len(set(envelope_batch(ss, walk)[1].tolist())) == 1


def test_labels_csv_round_trip(tmp_path):
    ss = random_site_set(SiteSpec(n=10, family="points"), 2)
    x = np.random.default_rng(0).random((50, 2))
    path = tmp_path / "labels.csv"
    write_labels_csv(path, ss, x)
    xr, label, d1, d2 = read_labels_csv(path)
    np.testing.assert_array_equal(xr, x)
    np.testing.assert_array_equal(label, envelope_batch(ss, x)[1])
    assert np.all(d2 >= d1)
