import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from walknet.geo import (
    GridIndex,
    InvalidCoordinateError,
    UtmkPoint,
    Wgs84Point,
    grid_query,
    haversine_m,
    utmk_to_wgs84,
    wgs84_to_utmk,
)

# value pinned beforehand with an independent projection oracle
# (Redfearn forward series inverted numerically)
PINNED_INVERSE = (960_000.0, 1_820_000.0, 36.3766224, 127.0540562)


class TestProjection:
    def test_false_origin_maps_to_projection_origin(self):
        p = utmk_to_wgs84(UtmkPoint(1_000_000, 2_000_000))
        assert p.lat == pytest.approx(38.0, abs=1e-9)
        assert p.lon == pytest.approx(127.5, abs=1e-9)

    def test_due_north_on_central_meridian(self):
        p = utmk_to_wgs84(UtmkPoint(1_000_000, 2_000_000 + 500.0))
        assert p.lat > 38.0
        assert p.lon == pytest.approx(127.5, abs=1e-9)

    def test_pinned_inverse_value(self):
        x, y, lat, lon = PINNED_INVERSE
        p = utmk_to_wgs84(UtmkPoint(x, y))
        assert p.lat == pytest.approx(lat, abs=1e-4)
        assert p.lon == pytest.approx(lon, abs=1e-4)

    def test_round_trip_over_korea_extent(self):
        for lat in (33.2, 34.5, 36.0, 37.5, 38.6):
            for lon in (125.0, 126.0, 127.5, 129.0, 130.5):
                q = wgs84_to_utmk(Wgs84Point(lat, lon))
                back = utmk_to_wgs84(q)
                assert abs(back.lat - lat) < 1e-6
                assert abs(back.lon - lon) < 1e-6

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidCoordinateError):
            UtmkPoint(float("nan"), 2_000_000)
        with pytest.raises(InvalidCoordinateError):
            Wgs84Point(91.0, 0.0)

    def test_outside_korea_extent_warns_but_constructs(self):
        with pytest.warns(UserWarning):
            p = UtmkPoint(0.0, 2_000_000.0)
        assert p.x == 0.0


class TestHaversine:
    def test_identity(self):
        p = Wgs84Point(36.28, 127.41)
        assert haversine_m(p, p) == 0.0

    def test_one_hundredth_degree_latitude(self):
        d = haversine_m(Wgs84Point(36.28, 127.41), Wgs84Point(36.29, 127.41))
        assert d == pytest.approx(1111.95, abs=0.1)

    def test_one_hundredth_degree_longitude(self):
        d = haversine_m(Wgs84Point(36.28, 127.41), Wgs84Point(36.28, 127.42))
        # R * dlon * cos(lat)
        expect = 6_371_000 * math.radians(0.01) * math.cos(math.radians(36.28))
        assert d == pytest.approx(expect, abs=1.0)
        assert d == pytest.approx(896.0, abs=1.0)

    @settings(max_examples=200)
    @given(
        lat1=st.floats(-89, 89), lon1=st.floats(-179, 179),
        lat2=st.floats(-89, 89), lon2=st.floats(-179, 179),
    )
    def test_symmetry(self, lat1, lon1, lat2, lon2):
        a, b = Wgs84Point(lat1, lon1), Wgs84Point(lat2, lon2)
        assert haversine_m(a, b) == pytest.approx(haversine_m(b, a), rel=1e-12)

    def test_symmetry_bulk(self):
        rng = random.Random(7)
        for _ in range(10_000):
            a = Wgs84Point(rng.uniform(-89, 89), rng.uniform(-179, 179))
            b = Wgs84Point(rng.uniform(-89, 89), rng.uniform(-179, 179))
            assert haversine_m(a, b) == haversine_m(b, a)

    def test_triangle_inequality(self):
        rng = random.Random(11)
        for _ in range(2_000):
            pts = [Wgs84Point(rng.uniform(-80, 80), rng.uniform(-179, 179))
                   for _ in range(3)]
            ab = haversine_m(pts[0], pts[1])
            bc = haversine_m(pts[1], pts[2])
            ac = haversine_m(pts[0], pts[2])
            assert ac <= ab + bc + 1e-6 * max(ab + bc, 1.0)

    def test_non_negative(self):
        rng = random.Random(3)
        for _ in range(1_000):
            a = Wgs84Point(rng.uniform(-89, 89), rng.uniform(-179, 179))
            b = Wgs84Point(rng.uniform(-89, 89), rng.uniform(-179, 179))
            assert haversine_m(a, b) >= 0


def _random_city_points(rng, n, lat0=36.3, lon0=127.4, spread=0.05):
    return {
        f"pt{i}": Wgs84Point(lat0 + rng.uniform(-spread, spread),
                             lon0 + rng.uniform(-spread, spread))
        for i in range(n)
    }


class TestGridIndex:
    def test_indexed_point_found_at_tiny_radius(self):
        pts = {"a": Wgs84Point(36.3, 127.4), "b": Wgs84Point(36.31, 127.41)}
        index = GridIndex(pts)
        assert "a" in grid_query(index, pts["a"], 1.0)

    def test_empty_index(self):
        index = GridIndex({})
        assert grid_query(index, Wgs84Point(36.3, 127.4), 1000.0) == []

    def test_every_point_in_exactly_one_bucket(self):
        rng = random.Random(23)
        pts = _random_city_points(rng, 500)
        index = GridIndex(pts)
        placed = [pid for bucket in index._buckets.values() for pid in bucket]
        assert sorted(placed) == sorted(pts)

    def test_superset_of_brute_force(self):
        rng = random.Random(42)
        pts = _random_city_points(rng, 1000)
        index = GridIndex(pts)
        for _ in range(50):
            center = Wgs84Point(36.3 + rng.uniform(-0.05, 0.05),
                                127.4 + rng.uniform(-0.05, 0.05))
            radius = 1000.0
            within = {pid for pid, p in pts.items()
                      if haversine_m(center, p) <= radius}
            result = set(grid_query(index, center, radius))
            assert within <= result

    def test_refined_query_equals_brute_force(self):
        rng = random.Random(4)
        pts = _random_city_points(rng, 1000)
        index = GridIndex(pts)
        for _ in range(20):
            center = pts[f"pt{rng.randrange(1000)}"]
            radius = rng.uniform(200, 2000)
            brute = {pid for pid, p in pts.items()
                     if haversine_m(center, p) <= radius}
            refined = {pid for pid in grid_query(index, center, radius)
                       if haversine_m(center, pts[pid]) <= radius}
            assert refined == brute

    def test_invalid_radius(self):
        index = GridIndex({"a": Wgs84Point(36.3, 127.4)})
        with pytest.raises(ValueError):
            index.query(Wgs84Point(36.3, 127.4), 0.0)
