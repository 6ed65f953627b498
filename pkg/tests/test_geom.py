import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from lanemap.errors import ValidationError
from lanemap.geom import (
    EARTH_RADIUS_M,
    GeoPoint,
    GeoTransform,
    Lane,
    LaneAttributes,
    LaneMap,
    PixelPoint,
    geo_to_pixel,
    haversine_m,
    lane_length_m,
    map_stats,
    pixel_to_geo,
    project_lane,
)


def _lane(points, lane_id="l1", road_id="r1"):
    return Lane(lane_id, road_id, LaneAttributes(), tuple(GeoPoint(x, y) for x, y in points))


class TestTypes:
    def test_geo_point_range(self):
        with pytest.raises(ValidationError):
            GeoPoint(181.0, 0.0)
        with pytest.raises(ValidationError):
            GeoPoint(0.0, -91.0)
        with pytest.raises(ValidationError):
            GeoPoint(float("nan"), 0.0)

    def test_singular_transform_rejected(self):
        with pytest.raises(ValidationError):
            GeoTransform(1.0, 2.0, 0.0, 2.0, 4.0, 0.0)

    def test_lane_needs_two_distinct_vertices(self):
        with pytest.raises(ValidationError):
            _lane([(0.0, 0.0)])
        with pytest.raises(ValidationError):
            _lane([(0.0, 0.0), (0.0, 0.0)])

    def test_lane_repeated_consecutive_vertex_rejected(self):
        with pytest.raises(ValidationError):
            _lane([(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (2.0, 0.0)])

    def test_duplicate_lane_id_rejected(self):
        a = _lane([(0.0, 0.0), (1.0, 0.0)], lane_id="x")
        b = _lane([(0.0, 1.0), (1.0, 1.0)], lane_id="x")
        with pytest.raises(ValidationError):
            LaneMap("region", (a, b))


class TestAffine:
    def test_identity_geo_to_pixel(self):
        t = GeoTransform.identity()
        p = geo_to_pixel(t, GeoPoint(2.0, 3.0))
        assert (p.x, p.y) == (2.0, 3.0)

    def test_geo_to_pixel_solves_linear_system(self):
        # lon = 0.5*x + 10, lat = 0.5*y + 20; (11, 21) -> (2, 2) by hand.
        t = GeoTransform(0.5, 0.0, 10.0, 0.0, 0.5, 20.0)
        p = geo_to_pixel(t, GeoPoint(11.0, 21.0))
        assert p.x == pytest.approx(2.0, abs=1e-12)
        assert p.y == pytest.approx(2.0, abs=1e-12)

    def test_pixel_to_geo_direct_evaluation(self):
        t = GeoTransform(0.001, 0.0, 31.0, 0.0, -0.001, 30.0)
        g = pixel_to_geo(t, PixelPoint(100.0, 100.0))
        assert g.lon == pytest.approx(31.1, abs=1e-12)
        assert g.lat == pytest.approx(29.9, abs=1e-12)

    def test_identity_pixel_to_geo(self):
        g = pixel_to_geo(GeoTransform.identity(), PixelPoint(5.0, 5.0))
        assert (g.lon, g.lat) == (5.0, 5.0)

    def test_round_trip_many_random_transforms(self):
        import random

        rng = random.Random(1234)
        worst = 0.0
        for _ in range(1000):
            while True:
                a, b, d, e = (rng.uniform(-2, 2) for _ in range(4))
                if abs(a * e - b * d) > 1e-6:
                    break
            c, f = rng.uniform(-50, 50), rng.uniform(-50, 50)
            t = GeoTransform(a, b, c, d, e, f)
            g = GeoPoint(rng.uniform(-90, 90), rng.uniform(-45, 45))
            g2 = pixel_to_geo(t, geo_to_pixel(t, g))
            worst = max(worst, abs(g2.lon - g.lon), abs(g2.lat - g.lat))
        assert worst < 1e-9

    @given(
        st.floats(-0.05, 0.05),
        st.floats(-0.05, 0.05),
        st.floats(-0.05, 0.05),
        st.floats(-0.05, 0.05),
        st.floats(-100, 100),
        st.floats(-80, 80),
        st.floats(0, 1280),
        st.floats(0, 1280),
    )
    @settings(max_examples=150, deadline=None)
    def test_pixel_round_trip_property(self, a, b, d, e, c, f, x, y):
        assume(abs(a * e - b * d) > 1e-6)
        lon = a * x + b * y + c
        lat = d * x + e * y + f
        assume(-180 <= lon <= 180 and -90 <= lat <= 90)
        t = GeoTransform(a, b, c, d, e, f)
        p2 = geo_to_pixel(t, pixel_to_geo(t, PixelPoint(x, y)))
        scale = max(1.0, abs(x), abs(y))
        assert abs(p2.x - x) / scale < 1e-6
        assert abs(p2.y - y) / scale < 1e-6


class TestLength:
    def test_equator_degree(self):
        lane = _lane([(0.0, 0.0), (1.0, 0.0)])
        expected = EARTH_RADIUS_M * math.pi / 180.0  # closed-form arc at the equator
        got = lane_length_m(lane)
        assert got == pytest.approx(expected, abs=1e-6)
        assert got == pytest.approx(111194.9, abs=1.0)

    def test_zero_for_coincident_endpoints(self):
        assert haversine_m(GeoPoint(10.0, 10.0), GeoPoint(10.0, 10.0)) == 0.0

    def test_reversal_invariance(self):
        pts = [(0.0, 0.0), (0.3, 0.1), (0.7, -0.2), (1.0, 0.4)]
        fwd = lane_length_m(_lane(pts))
        rev = lane_length_m(_lane(list(reversed(pts))))
        assert fwd == pytest.approx(rev, rel=1e-12)


class TestMapStats:
    def test_empty_map(self):
        s = map_stats(LaneMap("empty"))
        assert (s.lane_count, s.vertex_count, s.total_length_km) == (0, 0, 0.0)

    def test_three_two_vertex_lanes_hand_sum(self):
        lanes = [
            _lane([(0.0, 0.0), (0.001, 0.0)], lane_id="a"),
            _lane([(0.0, 0.01), (0.002, 0.01)], lane_id="b"),
            _lane([(0.0, 0.02), (0.003, 0.02)], lane_id="c"),
        ]
        s = map_stats(LaneMap("m", tuple(lanes)))
        assert s.lane_count == 3
        assert s.vertex_count == 6
        expected_m = sum(lane_length_m(l) for l in lanes)
        assert s.total_length_km == pytest.approx(expected_m / 1000.0, rel=1e-12)

    def test_additive_over_disjoint_unions(self):
        a = _lane([(0.0, 0.0), (0.5, 0.0)], lane_id="a")
        b = _lane([(0.0, 1.0), (0.5, 1.0)], lane_id="b")
        s_ab = map_stats(LaneMap("u", (a, b)))
        s_a = map_stats(LaneMap("a", (a,)))
        s_b = map_stats(LaneMap("b", (b,)))
        assert s_ab.lane_count == s_a.lane_count + s_b.lane_count
        assert s_ab.vertex_count == s_a.vertex_count + s_b.vertex_count
        assert s_ab.total_length_km == pytest.approx(s_a.total_length_km + s_b.total_length_km, rel=1e-12)


class TestProjectLane:
    def test_fully_inside(self):
        lane = _lane([(1.0, 1.0), (5.0, 5.0), (8.0, 2.0)])
        polys = project_lane(GeoTransform.identity(), lane, 10, 10)
        assert len(polys) == 1
        assert len(polys[0]) == 3
        assert [(p.x, p.y) for p in polys[0]] == [(1.0, 1.0), (5.0, 5.0), (8.0, 2.0)]

    def test_fully_outside(self):
        lane = _lane([(20.0, 20.0), (30.0, 30.0)])
        assert project_lane(GeoTransform.identity(), lane, 10, 10) == []

    def test_crosses_right_border_once(self):
        # Segment (5,5) -> (15,5): crosses x=10 at (10,5) exactly.
        lane = _lane([(5.0, 5.0), (15.0, 5.0)])
        polys = project_lane(GeoTransform.identity(), lane, 10, 10)
        assert len(polys) == 1
        assert [(p.x, p.y) for p in polys[0]] == [(5.0, 5.0), (10.0, 5.0)]

    def test_split_into_two_pieces(self):
        # Exits through the top and re-enters: two polylines, direction kept.
        lane = _lane([(2.0, 2.0), (2.0, -5.0), (8.0, -5.0), (8.0, 2.0)])
        polys = project_lane(GeoTransform.identity(), lane, 10, 10)
        assert len(polys) == 2
        assert [(p.x, p.y) for p in polys[0]] == [(2.0, 2.0), (2.0, 0.0)]
        assert [(p.x, p.y) for p in polys[1]] == [(8.0, 0.0), (8.0, 2.0)]

    def test_outputs_within_bounds(self):
        import random

        rng = random.Random(7)
        for _ in range(200):
            pts = []
            x, y = rng.uniform(-20, 30), rng.uniform(-20, 30)
            pts.append((x, y))
            for _ in range(rng.randint(1, 6)):
                x += rng.uniform(-15, 15)
                y += rng.uniform(-15, 15)
                if (x, y) == pts[-1]:
                    x += 1.0
                pts.append((x, y))
            lane = _lane([(px / 10.0, py / 10.0) for px, py in pts])
            t = GeoTransform(0.1, 0.0, 0.0, 0.0, 0.1, 0.0)
            for poly in project_lane(t, lane, 10, 10):
                assert len(poly) >= 2
                for p in poly:
                    assert -1e-9 <= p.x <= 10 + 1e-9
                    assert -1e-9 <= p.y <= 10 + 1e-9

    def test_invalid_patch_size(self):
        lane = _lane([(0.0, 0.0), (1.0, 1.0)])
        with pytest.raises(ValidationError):
            project_lane(GeoTransform.identity(), lane, 0, 10)
