import io
import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gardentrack.exceptions import EmptySeries, InsufficientData, MalformedGeometry, TooFewVertices
from gardentrack.geodesy import geodetic_to_projected, get_projection, projected_to_geodetic
from gardentrack.survey import ProjectedTrack, project_fixes
from gardentrack.track import (
    ReferencePolyline,
    SegmentLine,
    accuracy_stats,
    closest_point_on_polyline,
    confidence_scale,
    load_polyline,
    project_onto_polyline,
    residual_series,
)

from oracles import brute_force_closest, chi2_2dof_quantile

SQUARE = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
coord = st.floats(-50, 50, allow_nan=False)
point = st.tuples(coord, coord)


def track_from(points, t0="2021-02-03T11:31:00"):
    pts = np.asarray(points, dtype=float)
    times = np.datetime64(t0, "s") + np.arange(len(pts)).astype("timedelta64[s]")
    return ProjectedTrack(times, pts[:, 0], pts[:, 1])


# -- polyline ------------------------------------------------------------------


def test_polyline_basic_properties():
    poly = ReferencePolyline(SQUARE, closed=True)
    assert poly.n_segments == 4
    assert poly.length == 40.0
    assert np.all(np.diff(poly.cumulative_length) > 0)
    np.testing.assert_allclose(poly.point_at(45.0), [5.0, 0.0])
    assert poly.survey_error_bound == 0.19


def test_polyline_validation():
    with pytest.raises(TooFewVertices):
        ReferencePolyline([[0, 0], [1, 1]], closed=True)
    with pytest.raises(TooFewVertices):
        ReferencePolyline([[0, 0]])
    with pytest.raises(MalformedGeometry):
        ReferencePolyline([[0, 0], [1, 1], [1, 1], [2, 0]])
    with pytest.raises(MalformedGeometry):
        ReferencePolyline([[0, 0, 0], [1, 1, 1]])


@given(point, point)
def test_segment_line_endpoints_on_line(p, q):
    assume(math.hypot(q[0] - p[0], q[1] - p[1]) > 1e-3)
    line = SegmentLine.through(p, q)
    assert (line.a, line.b) != (0, 0)
    scale = math.hypot(line.a, line.b) * (1 + max(map(abs, p + q)))
    assert abs(line.residual(*p)) <= 1e-9 * scale
    assert abs(line.residual(*q)) <= 1e-9 * scale


@given(point, point, point)
def test_segment_line_foot_is_perpendicular_foot(p, q, x):
    assume(math.hypot(q[0] - p[0], q[1] - p[1]) > 1e-2)
    line = SegmentLine.through(p, q)
    foot = np.array(line.foot(*x))
    d = np.subtract(q, p)
    # foot lies on the line and the offset is perpendicular to it
    assert abs(line.residual(*foot)) <= 1e-7 * math.hypot(line.a, line.b) * 100
    assert abs(np.dot(np.subtract(x, foot), d)) <= 1e-7 * np.dot(d, d) * 100


def test_segment_line_coincident_endpoints():
    with pytest.raises(MalformedGeometry):
        SegmentLine.through((1, 1), (1, 1))


# -- closest point --------------------------------------------------------------


def test_fix_on_vertex():
    poly = ReferencePolyline(SQUARE, closed=True)
    r = closest_point_on_polyline((10.0, 10.0), poly)
    assert r.distance == 0.0
    assert tuple(r.foot) == (10.0, 10.0)


def test_perpendicular_offset_from_midpoint():
    poly = ReferencePolyline([[0.0, 0.0], [1000.0, 0.0]])
    r = closest_point_on_polyline((500.0, 3.5), poly)
    assert r.distance == pytest.approx(3.5)
    assert r.foot == pytest.approx((500.0, 0.0))
    assert r.along_track == pytest.approx(500.0)
    assert (r.residual_east, r.residual_north) == pytest.approx((0.0, 3.5))


def test_endpoint_clamping():
    poly = ReferencePolyline([[0.0, 0.0], [10.0, 0.0]])
    r = closest_point_on_polyline((13.0, 4.0), poly)
    assert r.foot == (10.0, 0.0)
    assert r.distance == pytest.approx(5.0)


def test_tie_breaks_to_lowest_segment():
    poly = ReferencePolyline(SQUARE, closed=True)
    # centre of the square is 5 m from all four sides
    assert closest_point_on_polyline((5.0, 5.0), poly).segment_index == 0


def test_large_coordinates_do_not_lose_precision(params):
    e0, n0 = geodetic_to_projected(45.672, 11.928, params)
    poly = ReferencePolyline([[e0, n0], [e0 + 100.0, n0]])
    r = closest_point_on_polyline((e0 + 50.0, n0 + 1e-4), poly)
    assert r.distance == pytest.approx(1e-4, abs=1e-9)


def test_agrees_with_dense_sampling_oracle():
    rng = np.random.default_rng(11)
    for _ in range(5):
        v = rng.uniform(0, 2, (int(rng.integers(2, 7)), 2))
        closed = len(v) >= 3 and bool(rng.integers(0, 2))
        poly = ReferencePolyline(v, closed)
        pts = rng.uniform(-1, 3, (300, 2))
        d, foot, seg, per_seg = brute_force_closest(pts, v, closed)
        r = project_onto_polyline(pts, poly)
        np.testing.assert_allclose(r["distance"], d, atol=1e-6)
        # the foot is unique unless two segments tie
        second = np.sort(per_seg, axis=1)[:, 1] if per_seg.shape[1] > 1 else np.full(len(pts), np.inf)
        unique = second - d > 1e-6
        np.testing.assert_allclose(r["foot"][unique], foot[unique], atol=1e-6)


@settings(max_examples=100)
@given(st.lists(point, min_size=2, max_size=8, unique=True), point)
def test_projection_invariants(vertices, fix):
    v = np.array(vertices)
    assume(np.all(np.hypot(*np.diff(v, axis=0).T) > 1e-3))
    poly = ReferencePolyline(v)
    r = closest_point_on_polyline(fix, poly)
    assert r.distance ** 2 == pytest.approx(r.residual_east ** 2 + r.residual_north ** 2, abs=1e-9)
    assert (r.residual_east, r.residual_north) == pytest.approx(
        (fix[0] - r.foot[0], fix[1] - r.foot[1]), abs=1e-9)
    # idempotence
    again = closest_point_on_polyline(r.foot, poly)
    assert again.distance <= 1e-9
    assert again.foot == pytest.approx(r.foot, abs=1e-9)
    assert 0 <= r.along_track <= poly.length + 1e-9


@settings(max_examples=100)
@given(st.lists(point, min_size=2, max_size=8, unique=True), point, point)
def test_distance_is_1_lipschitz(vertices, p, q):
    v = np.array(vertices)
    assume(np.all(np.hypot(*np.diff(v, axis=0).T) > 1e-3))
    poly = ReferencePolyline(v)
    dp = closest_point_on_polyline(p, poly).distance
    dq = closest_point_on_polyline(q, poly).distance
    assert abs(dp - dq) <= math.hypot(p[0] - q[0], p[1] - q[1]) + 1e-9


@given(st.floats(0.2, 0.8), st.floats(-5, 5), st.floats(1e-4, 1e-2), st.floats(0, 2 * math.pi))
def test_blind_to_along_track_error(frac, offset, eps, angle):
    # long straight segment; translating a fix along it barely moves the distance
    d = np.array([math.cos(angle), math.sin(angle)])
    poly = ReferencePolyline([[0.0, 0.0], list(100.0 * d)])
    normal = np.array([-d[1], d[0]])
    fix = 100.0 * frac * d + offset * normal
    base = closest_point_on_polyline(fix, poly).distance
    moved = closest_point_on_polyline(fix + eps * d, poly).distance
    assert abs(moved - base) <= eps ** 2 + 1e-9


# -- residual series ----------------------------------------------------------------


def test_on_track_fixes_have_zero_residual(loop):
    along = np.arange(0.0, loop.length, 1.4)
    rs = residual_series(track_from(loop.point_at(along)), loop)
    assert np.max(rs.distance) < 1e-6


def test_constant_east_offset_on_north_south_segment():
    poly = ReferencePolyline([[0.0, 0.0], [0.0, 500.0]])
    pts = np.column_stack([np.full(100, 2.0), np.linspace(10, 490, 100)])
    rs = residual_series(track_from(pts), poly)
    np.testing.assert_allclose(rs.east, 2.0)
    np.testing.assert_allclose(rs.north, 0.0, atol=1e-12)


def test_residual_series_empty():
    poly = ReferencePolyline([[0.0, 0.0], [0.0, 500.0]])
    with pytest.raises(EmptySeries):
        residual_series(track_from(np.zeros((0, 2))), poly)


def test_residual_series_excluding_windows():
    poly = ReferencePolyline([[0.0, 0.0], [0.0, 500.0]])
    rs = residual_series(track_from(np.column_stack([np.ones(20), np.arange(20.0)])), poly)
    kept = rs.excluding([(rs.times[0], rs.times[4]), (rs.times[15], rs.times[19])])
    assert len(kept) == 10
    assert kept.times[0] == rs.times[5]


def test_simulated_rmse_near_sigma(sim, params):
    # on a smooth loop only the cross-track component is seen, so the
    # per-distance RMSE estimates the per-axis sigma
    rmse = []
    for seed in range(10):
        sv = sim("field", seed)
        track = project_fixes(sv.fixes, get_projection())
        rmse.append(accuracy_stats(residual_series(track, sv.scenario.polyline)).rmse)
    assert abs(np.mean(rmse) - 1.2) <= 0.12


# -- accuracy statistics ---------------------------------------------------------------


def test_confidence_scale_matches_closed_form():
    for level, printed in [(0.68, 2.2789), (0.95, 5.9915), (0.99, 9.2103)]:
        assert confidence_scale(level) ** 2 == pytest.approx(chi2_2dof_quantile(level), rel=1e-12)
        assert confidence_scale(level) ** 2 == pytest.approx(printed, abs=1e-4)


def test_zero_residuals():
    stats = accuracy_stats(np.zeros((10, 2)))
    assert stats.rmse == 0.0
    for e in stats.ellipses.values():
        assert e.semi_major == 0.0 and e.semi_minor == 0.0


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        accuracy_stats(np.zeros((1, 2)))


def test_isotropic_ellipse():
    r = np.random.default_rng(1).standard_normal((10_000, 2))
    e = accuracy_stats(r).ellipses[0.95]
    assert e.semi_major == pytest.approx(2.448, rel=0.05)
    assert e.semi_minor == pytest.approx(2.448, rel=0.05)


def test_anisotropic_ellipse():
    r = np.random.default_rng(2).standard_normal((20_000, 2)) * [2.0, 1.0]
    e = accuracy_stats(r).ellipses[0.95]
    assert e.semi_major / e.semi_minor == pytest.approx(2.0, rel=0.05)
    assert abs(e.orientation_deg) < 3.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-170, 170))
def test_rotation_equivariance(seed, theta):
    r = np.random.default_rng(seed).standard_normal((200, 2)) * [3.0, 1.0]
    c, s = math.cos(math.radians(theta)), math.sin(math.radians(theta))
    rotated = r @ np.array([[c, s], [-s, c]])
    a = accuracy_stats(r).ellipses[0.95]
    b = accuracy_stats(rotated).ellipses[0.95]
    assert b.semi_major == pytest.approx(a.semi_major, rel=1e-9)
    assert b.semi_minor == pytest.approx(a.semi_minor, rel=1e-9)
    diff = (b.orientation_deg - a.orientation_deg - theta) % 180.0
    assert min(diff, 180.0 - diff) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stats_invariants(seed):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((50, 2)) * rng.uniform(0.1, 3, 2) + rng.uniform(-2, 2, 2)
    a = accuracy_stats(r)
    b = accuracy_stats(r[rng.permutation(50)])
    assert a.rmse == pytest.approx(b.rmse)
    np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(a.covariance) >= -1e-12)
    assert a.rmse >= math.hypot(a.mean_east, a.mean_north) - 1e-12
    for e in a.ellipses.values():
        assert e.semi_major >= e.semi_minor
        assert -90 < e.orientation_deg <= 90
        assert e.mean_radius == pytest.approx(math.sqrt(e.semi_major * e.semi_minor))


# -- loading ------------------------------------------------------------------------


def test_csv_square_closed(tmp_path, params):
    f = tmp_path / "sq.csv"
    f.write_text("".join(f"{x + 700000},{y + 5000000}\n" for x, y in np.vstack([SQUARE, SQUARE[:1]])))
    poly = load_polyline(f, params)
    assert poly.closed and poly.n_segments == 4


def test_geojson_linestring_open(params):
    obj = {"type": "LineString", "coordinates": [[11.928, 45.672], [11.929, 45.673]]}
    poly = load_polyline(io.StringIO(json.dumps(obj)), params)
    assert not poly.closed and poly.n_segments == 1
    np.testing.assert_allclose(poly.vertices[0], geodetic_to_projected(45.672, 11.928, params))


def test_geojson_polygon_and_feature(params):
    ring = [[11.928, 45.672], [11.929, 45.672], [11.929, 45.673], [11.928, 45.672]]
    fc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {}, "geometry": {"type": "Polygon", "coordinates": [ring]}}]}
    poly = load_polyline(io.StringIO(json.dumps(fc)), params)
    assert poly.closed and poly.n_segments == 3


def test_csv_latlon(tmp_path, params):
    f = tmp_path / "ll.csv"
    f.write_text("# lat,lon\n45.672,11.928\n45.673,11.928\n")
    poly = load_polyline(f, params)
    lat, lon = projected_to_geodetic(*poly.vertices[1], params)
    assert (lat, lon) == pytest.approx((45.673, 11.928), abs=1e-9)


@pytest.mark.parametrize("text", [
    '{"type": "LineString", "coordinates": [[11.9, 45.6], [11.9, 45.6], [11.8, 45.6]]}',
    '{"type": "Point", "coordinates": [11.9, 45.6]}',
    '{"type": "FeatureCollection", "features": []}',
    '{"type": "LineString", "coordinates": [[11.9, 45.6]]}',
    "{not json",
    "1,2\nx,y\n",
])
def test_bad_geometry(text):
    with pytest.raises(MalformedGeometry):
        load_polyline(io.StringIO(text))
