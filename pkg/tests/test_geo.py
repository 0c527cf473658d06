import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridepolicy.geo import (
    ConvexPolygon,
    HexGrid,
    PointHull,
    SegmentHull,
    clip_segment_to_polygon,
    convex_hull,
    hull_within_buffer,
    point_in_convex_polygon,
    signed_distance,
    signed_distance_batch,
)


def ray_casting_inside(px, py, vertices):
    """Odd-crossings test, independent of the cross-product implementation."""
    n = len(vertices)
    inside = False
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            x_hit = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_hit:
                inside = not inside
    return inside


def brute_min_edge_distance(px, py, vertices):
    n = len(vertices)
    best = math.inf
    for i in range(n):
        ax, ay = vertices[i]
        bx, by = vertices[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
        t = min(1.0, max(0.0, t))
        best = min(best, math.hypot(px - ax - t * dx, py - ay - t * dy))
    return best


SQUARE = ConvexPolygon([(0, 0), (2, 0), (2, 2), (0, 2)])


class TestConvexHull:
    def test_square_with_interior_points(self):
        pts = [(0, 0), (2, 0), (2, 2), (0, 2), (1, 1), (0.5, 1.5)]
        hull = convex_hull(pts)
        assert isinstance(hull, ConvexPolygon)
        assert [tuple(v) for v in hull.vertices] == [(0, 0), (2, 0), (2, 2), (0, 2)]

    def test_collinear_boundary_points_dropped(self):
        pts = [(0, 0), (1, 0), (2, 0), (2, 2), (0, 2)]
        hull = convex_hull(pts)
        assert (1, 0) not in {tuple(v) for v in hull.vertices}

    def test_starts_at_lexicographic_minimum_ccw(self):
        hull = convex_hull([(3, 1), (1, 3), (1, 1), (3, 3)])
        v = hull.vertices
        assert tuple(v[0]) == (1, 1)
        x, y = v[:, 0], v[:, 1]
        area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area2 > 0  # CCW orientation

    def test_degenerate_point(self):
        hull = convex_hull([(1.5, 2.5), (1.5, 2.5), (1.5, 2.5)])
        assert isinstance(hull, PointHull)
        assert hull.x == 1.5 and hull.y == 2.5

    def test_degenerate_segment(self):
        hull = convex_hull([(0, 0), (1, 1), (2, 2), (0.5, 0.5)])
        assert isinstance(hull, SegmentHull)
        assert tuple(hull.vertices[0]) == (0, 0)
        assert tuple(hull.vertices[1]) == (2, 2)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            convex_hull(np.empty((0, 2)))

    def test_random_sets_contain_all_inputs(self):
        # brute-force cross-product containment oracle, pure python
        rng = np.random.default_rng(7)
        for _ in range(50):
            pts = rng.normal(size=(60, 2)) * 10
            hull = convex_hull(pts)
            v = [tuple(p) for p in hull.vertices]
            n = len(v)
            for px, py in pts:
                for i in range(n):
                    ax, ay = v[i]
                    bx, by = v[(i + 1) % n]
                    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                    assert cross >= -1e-9 * max(1.0, abs(cross))

    @given(
        st.lists(
            st.tuples(
                st.floats(-1e3, 1e3, allow_nan=False),
                st.floats(-1e3, 1e3, allow_nan=False),
            ),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_hull_idempotent_and_contains_inputs(self, pts):
        hull = convex_hull(pts)
        again = convex_hull(hull.vertices)
        assert np.allclose(np.asarray(again.vertices), np.asarray(hull.vertices))
        if isinstance(hull, ConvexPolygon):
            xs = np.array([p[0] for p in pts])
            ys = np.array([p[1] for p in pts])
            assert hull.contains(xs, ys, eps=1e-6 * (1 + np.abs(xs).max())).all()


class TestContainmentAndDistance:
    def test_boundary_counts_as_inside(self):
        assert point_in_convex_polygon((0, 0), SQUARE)
        assert point_in_convex_polygon((1, 0), SQUARE)
        assert point_in_convex_polygon((1, 1), SQUARE)
        assert not point_in_convex_polygon((2.1, 1), SQUARE)

    def test_signed_distance_signs_and_magnitudes(self):
        assert signed_distance((1, 1), SQUARE) == pytest.approx(-1.0)
        assert signed_distance((3, 1), SQUARE) == pytest.approx(1.0)
        assert signed_distance((1, 0), SQUARE) == pytest.approx(0.0, abs=1e-12)
        # outside a corner: euclidean distance to the vertex
        assert signed_distance((3, 3), SQUARE) == pytest.approx(math.sqrt(2))

    def test_against_ray_casting_oracle(self):
        rng = np.random.default_rng(11)
        poly = convex_hull(rng.normal(size=(30, 2)) * 5)
        verts = [tuple(p) for p in poly.vertices]
        pts = rng.normal(size=(300, 2)) * 6
        d = signed_distance_batch(pts[:, 0], pts[:, 1], poly)
        for (px, py), di in zip(pts, d):
            inside = ray_casting_inside(px, py, verts)
            if abs(di) > 1e-9:  # boundary sign is a tie either way
                assert (di < 0) == inside
            assert abs(di) == pytest.approx(
                brute_min_edge_distance(px, py, verts), abs=1e-9
            )

    def test_hull_within_buffer(self):
        near = convex_hull([(2.5, 0.5), (3.0, 1.0), (2.5, 1.5)])
        assert hull_within_buffer(near, SQUARE, 1.0)
        assert not hull_within_buffer(near, SQUARE, 0.9)
        inside = convex_hull([(0.5, 0.5), (1.5, 0.5), (1.0, 1.5)])
        assert hull_within_buffer(inside, SQUARE, 0.0)
        # vertex exactly on the buffer edge still counts (closed region)
        at_edge = convex_hull([(3.0, 1.0), (2.5, 1.0), (2.75, 1.2)])
        assert hull_within_buffer(at_edge, SQUARE, 1.0)

    def test_clip_segment_entry_point(self):
        got = clip_segment_to_polygon(-1.0, 1.0, 1.0, 1.0, SQUARE)
        assert got is not None
        t0, t1 = got
        assert t0 == pytest.approx(0.5)
        assert t1 == pytest.approx(1.0)
        assert clip_segment_to_polygon(-1, -1, -3, -5, SQUARE) is None


class TestHexGrid:
    def test_edge_length_from_area(self):
        grid = HexGrid(36.0)
        assert grid.size == pytest.approx(math.sqrt(72.0 / (3 * math.sqrt(3))))
        assert 3 * math.sqrt(3) / 2 * grid.size**2 == pytest.approx(36.0)

    def test_center_roundtrip(self):
        grid = HexGrid(5.16)
        rng = np.random.default_rng(3)
        q = rng.integers(-50, 50, size=500)
        r = rng.integers(-50, 50, size=500)
        x, y = grid.center(q, r)
        q2, r2 = grid.hex_of(x, y)
        assert (q2 == q).all() and (r2 == r).all()

    @given(st.floats(-200, 200), st.floats(-200, 200))
    @settings(max_examples=300, deadline=None)
    def test_every_point_lands_in_nearest_center(self, x, y):
        grid = HexGrid(36.0)
        q, r = grid.hex_of(x, y)
        cx, cy = grid.center(int(q), int(r))
        d_own = math.hypot(x - cx, y - cy)
        for dq, dr in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]:
            nx, ny = grid.center(int(q) + dq, int(r) + dr)
            assert d_own <= math.hypot(x - nx, y - ny) + 1e-9

    def test_ring_sizes(self):
        grid = HexGrid(36.0)
        assert len(grid.ring(0, 0, 0)) == 1
        assert len(grid.ring(2, -1, 1)) == 7
        assert len(grid.ring(2, -1, 2)) == 19
        assert len(grid.ring(0, 0, 3)) == 37

    def test_ring_is_hop_distance_ball(self):
        grid = HexGrid(36.0)
        cells = grid.ring(3, -2, 2)
        assert cells == sorted(cells)
        for q, r in cells:
            assert grid.distance(3, -2, q, r) <= 2
        assert (3, -2) in cells

    def test_hop_distance(self):
        grid = HexGrid(36.0)
        assert grid.distance(0, 0, 0, 0) == 0
        assert grid.distance(0, 0, 1, 0) == 1
        assert grid.distance(0, 0, 2, -1) == 2
        assert grid.distance(-1, 2, 1, -1) == 3

    def test_rejects_nonpositive_area(self):
        with pytest.raises(ValueError):
            HexGrid(0.0)
