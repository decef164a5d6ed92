"""Track geometry: construction, projection, contouring errors, file I/O."""

import math

import numpy as np
import pytest

from racestack.track import (
    MIN_POINTS,
    OffTrackError,
    PathProgress,
    Track,
    TrackError,
    contouring_errors,
    load_track,
    save_track,
    wrap_angle,
)


def unit_square(half_width=0.5):
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return Track(pts, half_width)


# -------------------------------------------------------------- construction

def test_square_arc_length_and_headings():
    t = unit_square()
    assert t.total_length == pytest.approx(4.0)
    np.testing.assert_allclose(t.s, [0.0, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(t.phi, [0.0, math.pi / 2, math.pi, -math.pi / 2])
    # corner turn rate: pi/2 over a 1 m segment
    np.testing.assert_allclose(t.curvature, math.pi / 2)
    assert t.n_points == 4
    np.testing.assert_allclose(t.half_width, 0.5)


def test_wrap_and_progress_delta():
    t = unit_square()
    assert t.wrap(4.2) == pytest.approx(0.2)
    assert t.wrap(-0.5) == pytest.approx(3.5)
    assert t.progress_delta(0.2, 3.8) == pytest.approx(0.4)   # across the seam
    assert t.progress_delta(3.8, 0.2) == pytest.approx(-0.4)
    assert t.progress_delta(1.0, 1.0) == 0.0
    # half-lap ties break to +L/2
    assert t.progress_delta(2.0, 0.0) == pytest.approx(2.0)


def test_ref_pose_wraps_and_interpolates():
    t = unit_square()
    x, y, phi, kappa = t.ref_pose(0.5)
    assert (x, y) == (pytest.approx(0.5), pytest.approx(0.0))
    x2, y2, _, _ = t.ref_pose(0.5 + 4.0)       # one lap later
    assert (x2, y2) == (pytest.approx(0.5), pytest.approx(0.0))
    # heading at a segment start is that segment's heading exactly
    assert t.ref_pose(1.0)[2] == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("pts,msg", [
    (np.zeros((2, 2)), "at least 3 points"),
    (np.array([[0, 0], [3, 0], [1.5, 1.0]]), "spacing"),
    (np.column_stack([np.arange(9.0), np.zeros(9)]), "does not close"),
    (np.array([[0, 0], [0, 0], [1, 0], [0, 1]]), "duplicate"),
])
def test_construction_errors(pts, msg):
    with pytest.raises(TrackError, match=msg):
        Track(np.asarray(pts, dtype=float), 1.0)


def test_construction_rejects_bad_widths_and_nan():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(TrackError, match="half-width"):
        Track(pts, 0.0)
    bad = pts.copy()
    bad[1, 0] = math.nan
    with pytest.raises(TrackError, match="non-finite"):
        Track(bad, 1.0)
    with pytest.raises(TrackError, match="\\(n, 2\\)"):
        Track(np.zeros((4, 3)), 1.0)


# ---------------------------------------------------------- contouring errors

def test_contouring_error_hand_values():
    t = unit_square()
    # bottom edge heading +x: right of the path is -y
    e_c, e_l = t.contouring_errors(0.3, -0.2, 0.0)
    assert e_c == pytest.approx(0.2)
    assert e_l == pytest.approx(-0.3)
    e_c, e_l = t.contouring_errors(-0.4, 0.3, 0.0)
    assert e_c == pytest.approx(-0.3)
    assert e_l == pytest.approx(0.4)
    # free function mirrors the method
    assert contouring_errors(t, 0.3, -0.2, 0.0) == t.contouring_errors(0.3, -0.2, 0.0)


def test_contouring_error_rotated_edge():
    t = unit_square()
    # right edge (1, y) heading +y: right of the path is +x
    e_c, _ = t.contouring_errors(1.25, 0.0, 1.0)
    assert e_c == pytest.approx(0.25)
    e_c, _ = t.contouring_errors(0.8, 0.0, 1.0)
    assert e_c == pytest.approx(-0.2)


# ------------------------------------------------------------------ projection

def test_project_round_trip_on_oval(oval, rng):
    """Points built from a known progress project back to it."""
    for _ in range(60):
        theta = rng.uniform(0.0, oval.total_length)
        off = rng.uniform(-4.0, 4.0)
        x, y, phi, _ = oval.ref_pose(theta)
        px = x + off * math.sin(phi)
        py = y - off * math.cos(phi)
        got = oval.project(px, py)
        assert abs(oval.progress_delta(got, theta)) < 2.5
        with_guess = oval.project(px, py, theta_guess=theta - 20.0)
        assert abs(oval.progress_delta(with_guess, theta)) < 2.5
        e_c, _ = oval.contouring_errors(px, py, got)
        assert e_c == pytest.approx(off, abs=0.05)


def test_project_straight_segment_is_exact(oval):
    x, y, phi, kappa = oval.ref_pose(100.0)
    assert kappa == pytest.approx(0.0, abs=1e-9)
    got = oval.project(x + 2.0 * math.sin(phi), y - 2.0 * math.cos(phi))
    assert abs(oval.progress_delta(got, 100.0)) < 1e-6


def test_project_far_point_raises(oval):
    cx, cy = oval.xy.mean(axis=0)
    with pytest.raises(OffTrackError, match="m from the path"):
        oval.project(cx, cy)   # oval center is far inside


def test_project_ignores_nonfinite_guess(oval):
    x, y, _, _ = oval.ref_pose(500.0)
    assert abs(oval.progress_delta(
        oval.project(x, y, theta_guess=math.nan), 500.0)) < 1e-6


# ------------------------------------------------------------------- offset

def test_offset_lane_holds_constant_contouring_error(oval):
    for dist in (-2.8, 2.8):
        lane = oval.offset(dist)
        for theta in np.linspace(0.0, lane.total_length, 25, endpoint=False):
            x, y, _, _ = lane.ref_pose(float(theta))
            e_c, _ = oval.contouring_errors(x, y, oval.project(x, y))
            assert e_c == pytest.approx(dist, abs=0.02)
    # inner lane is shorter, outer longer (counterclockwise oval)
    assert oval.offset(-2.8).total_length != oval.offset(2.8).total_length


def test_offset_validation(oval):
    with pytest.raises(TrackError, match="finite"):
        oval.offset(math.nan)
    with pytest.raises(TrackError, match="outside the narrowest"):
        oval.offset(oval.half_width.min())


# ------------------------------------------------------------------ file I/O

def test_demo_oval_shape(oval):
    assert oval.total_length == pytest.approx(4002.2, abs=0.5)
    # straight near the start, arc mid-lap
    assert oval.ref_pose(50.0)[3] == pytest.approx(0.0, abs=1e-9)
    assert abs(oval.ref_pose(1600.0)[3]) == pytest.approx(1.0 / 255.0, rel=0.05)
    np.testing.assert_allclose(oval.half_width, 6.0)


def test_save_load_round_trip(oval, tmp_path):
    path = tmp_path / "t.csv"
    save_track(oval, path)
    back = load_track(path)
    np.testing.assert_allclose(back.xy, oval.xy)
    np.testing.assert_allclose(back.half_width, oval.half_width)
    assert back.total_length == pytest.approx(oval.total_length)


@pytest.mark.parametrize("text,msg", [
    ("", "empty file"),
    ("a,b,c\n1,2,3\n", "header must start with s,x,y"),
    ("s,x,y\n0,0\n", "expected 3 columns"),
    ("s,x,y\n0,0,zero\n", "could not convert"),
    ("s,x,y\n0,0,nan\n", "non-finite"),
])
def test_load_track_malformed(tmp_path, text, msg):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(TrackError, match=msg):
        load_track(p)


def test_load_track_needs_min_points(tmp_path):
    p = tmp_path / "short.csv"
    rows = ["s,x,y"] + [f"{i},{i},0" for i in range(MIN_POINTS - 1)]
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(TrackError, match=f"need >= {MIN_POINTS}"):
        load_track(p)


def test_load_track_monotone_s(tmp_path):
    p = tmp_path / "mono.csv"
    rows = ["s,x,y"] + [f"{i},{i},0" for i in range(12)]
    rows[5] = "2,4,0"   # s goes backwards here
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(TrackError, match="not strictly increasing"):
        load_track(p)


def test_load_track_tolerates_duplicate_closing_row(tmp_path, oval):
    path = tmp_path / "dup.csv"
    save_track(oval, path)
    lines = path.read_text().rstrip("\n").split("\n")
    first = lines[1].split(",")
    closing = ",".join([repr(oval.total_length), first[1], first[2], first[3]])
    path.write_text("\n".join(lines + [closing]) + "\n")
    back = load_track(path)
    assert back.n_points == oval.n_points


# ----------------------------------------------------------------- utilities

def test_wrap_angle_branch_points():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(math.pi / 3) == pytest.approx(math.pi / 3)


def test_path_progress_unwrap():
    p = PathProgress(theta=12.0, lap_count=3)
    assert p.unwrapped(100.0) == pytest.approx(312.0)
