"""Closed race tracks parameterized by arc length.

A Track is a closed polyline of (x, y) points with recomputed cumulative arc
length, per-point tangent headings (forward differences with wraparound) and a
half-width per point.  Progress theta lives on [0, total_length) and wraps.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_SPACING = 2.0       # m, consecutive point spacing bound
CLOSURE_TOL = 5.0       # m, max gap between last and first point of a loop
MIN_POINTS = 10         # minimum rows for a loadable track file
PROJECT_WINDOW = 50.0   # m, local search window around the projection guess
OFFTRACK_FACTOR = 3.0   # times half-width before projection errors out


class TrackError(ValueError):
    """Malformed or unusable track data."""


class OffTrackError(ValueError):
    """Queried point is too far from the path for a meaningful projection."""


@dataclass(frozen=True)
class PathProgress:
    theta: float        # m along the path, in [0, total_length)
    lap_count: int = 0

    def unwrapped(self, total_length: float) -> float:
        return self.lap_count * total_length + self.theta


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


class Track:
    def __init__(self, xy: np.ndarray, half_width):
        """Build a closed track from (n,2) points; the loop closes last->first.

        half_width is a scalar or an (n,) array of lateral half-widths.
        """
        xy = np.asarray(xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise TrackError("expected an (n, 2) array of points")
        n = xy.shape[0]
        if n < 3:
            raise TrackError("a closed track needs at least 3 points")
        if not np.isfinite(xy).all():
            raise TrackError("non-finite coordinates in track points")
        seg = np.roll(xy, -1, axis=0) - xy          # segment i: point i -> i+1 (wrap)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if (seg_len[:-1] > MAX_SPACING + 1e-9).any():
            i = int(np.argmax(seg_len[:-1] > MAX_SPACING + 1e-9))
            raise TrackError(
                f"consecutive point spacing {seg_len[i]:.3f} m at index {i} "
                f"exceeds {MAX_SPACING} m")
        if seg_len[-1] > CLOSURE_TOL:
            raise TrackError(
                f"loop does not close: endpoint gap {seg_len[-1]:.3f} m "
                f"exceeds {CLOSURE_TOL} m")
        if (seg_len < 1e-9).any():
            i = int(np.argmax(seg_len < 1e-9))
            raise TrackError(f"duplicate consecutive points at index {i}")
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (n,)).copy()
        if not (hw > 0).all():
            raise TrackError("half-widths must be positive")

        self.xy = xy
        self.half_width = hw
        self.phi = np.arctan2(seg[:, 1], seg[:, 0])  # heading of segment leaving i
        self.s = np.concatenate(([0.0], np.cumsum(seg_len)[:-1]))
        self.total_length = float(seg_len.sum())
        self._seg_len = seg_len
        self._xy_next = np.roll(xy, -1, axis=0)
        dphi = np.array([wrap_angle(b - a)
                         for a, b in zip(self.phi, np.roll(self.phi, -1))])
        self._dphi = dphi
        self.curvature = dphi / seg_len              # per segment
        self._s_end = np.concatenate((self.s[1:], [self.total_length]))

    @property
    def n_points(self) -> int:
        return self.xy.shape[0]

    def wrap(self, theta: float) -> float:
        return float(np.mod(theta, self.total_length))

    def progress_delta(self, a: float, b: float) -> float:
        """Signed circular difference a - b in (-L/2, L/2]."""
        L = self.total_length
        d = math.fmod(a - b, L)
        if d > L / 2:
            d -= L
        elif d <= -L / 2:
            d += L
        return d

    def _segment_of(self, theta):
        th = np.mod(np.asarray(theta, dtype=float), self.total_length)
        idx = np.searchsorted(self.s, th, side="right") - 1
        return th, np.clip(idx, 0, self.n_points - 1)

    def ref_pose_batch(self, theta):
        """(x, y, phi, kappa) arrays at each theta (wrapping allowed)."""
        th, idx = self._segment_of(theta)
        t = (th - self.s[idx]) / self._seg_len[idx]
        p0 = self.xy[idx]
        p1 = self._xy_next[idx]
        x = p0[:, 0] + t * (p1[:, 0] - p0[:, 0])
        y = p0[:, 1] + t * (p1[:, 1] - p0[:, 1])
        phi = self.phi[idx] + t * self._dphi[idx]
        phi = np.mod(phi + math.pi, 2.0 * math.pi) - math.pi
        return x, y, phi, self.curvature[idx]

    def ref_pose(self, theta: float):
        """Reference pose (x, y, phi, kappa) at progress theta."""
        x, y, phi, kappa = self.ref_pose_batch(np.array([theta]))
        return float(x[0]), float(y[0]), float(phi[0]), float(kappa[0])

    def half_width_at(self, theta: float) -> float:
        _, idx = self._segment_of(np.array([theta]))
        return float(self.half_width[idx[0]])

    def offset(self, dist: float, spacing: float = 1.5) -> "Track":
        """Parallel path a signed lateral distance from this one.

        Positive dist is to the right of the travel direction (the side where
        contouring error is positive), so a vehicle tracking the offset path
        holds that lane of the original.  Half-widths carry over, keeping the
        lane's tube identical to the parent track's.
        """
        if not math.isfinite(dist):
            raise TrackError("offset distance must be finite")
        if abs(dist) >= self.half_width.min():
            raise TrackError(
                f"offset {dist:.2f} m reaches outside the narrowest "
                f"half-width {self.half_width.min():.2f} m")
        n = max(int(math.ceil(self.total_length / spacing)), MIN_POINTS)
        s = np.linspace(0.0, self.total_length, n, endpoint=False)
        x, y, phi, _ = self.ref_pose_batch(s)
        pts = np.stack((x + dist * np.sin(phi), y - dist * np.cos(phi)),
                       axis=1)
        _, idx = self._segment_of(s)
        return Track(pts, self.half_width[idx])

    def project(self, x: float, y: float, theta_guess: float | None = None) -> float:
        """Arc-length of the closest path point to (x, y).

        Searches segments within +-PROJECT_WINDOW of the guess, or the whole
        loop when no valid guess is given.
        """
        if theta_guess is not None and not math.isfinite(theta_guess):
            theta_guess = None
        n = self.n_points
        if theta_guess is None:
            cand = np.arange(n)
        else:
            _, i0 = self._segment_of(np.array([theta_guess]))
            span = int(math.ceil(PROJECT_WINDOW / max(self._seg_len.min(), 1e-6))) + 1
            span = min(span, n // 2)
            cand = np.mod(np.arange(i0[0] - span, i0[0] + span + 1), n)
        p0 = self.xy[cand]
        d = self._xy_next[cand] - p0
        rel = np.array([x, y]) - p0
        tt = np.clip((rel * d).sum(axis=1) / (d * d).sum(axis=1), 0.0, 1.0)
        close = p0 + tt[:, None] * d
        dist2 = ((np.array([x, y]) - close) ** 2).sum(axis=1)
        j = int(np.argmin(dist2))
        theta = self.wrap(self.s[cand[j]] + tt[j] * self._seg_len[cand[j]])
        dist = math.sqrt(float(dist2[j]))
        if dist > OFFTRACK_FACTOR * self.half_width_at(theta):
            raise OffTrackError(
                f"point ({x:.1f}, {y:.1f}) is {dist:.1f} m from the path "
                f"(limit {OFFTRACK_FACTOR * self.half_width_at(theta):.1f} m)")
        return theta

    def contouring_errors(self, x: float, y: float, theta: float):
        """(e_c, e_l) of point (x, y) against the reference pose at theta.

        e_c > 0 means right of the path; e_l > 0 means the reference point is
        behind the query point's projection onto the tangent.
        """
        xr, yr, phi, _ = self.ref_pose(theta)
        dx = x - xr
        dy = y - yr
        sp, cp = math.sin(phi), math.cos(phi)
        e_c = sp * dx - cp * dy
        e_l = -cp * dx - sp * dy
        return e_c, e_l


def contouring_errors(track: Track, x: float, y: float, theta: float):
    return track.contouring_errors(x, y, theta)


def load_track(path, default_half_width: float = 6.0) -> Track:
    """Load a closed track from CSV with header s,x,y and optional w column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TrackError(f"{path}: empty file") from None
        header = [h.strip().lower() for h in header]
        if header[:3] != ["s", "x", "y"]:
            raise TrackError(f"{path}: header must start with s,x,y (got {header})")
        has_w = len(header) > 3 and header[3] == "w"
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            want = 4 if has_w else 3
            if len(row) < want:
                raise TrackError(f"{path}: row {lineno}: expected {want} columns")
            try:
                vals = [float(c) for c in row[:want]]
            except ValueError as exc:
                raise TrackError(f"{path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise TrackError(f"{path}: row {lineno}: non-finite value")
            rows.append(vals)
    if len(rows) < MIN_POINTS:
        raise TrackError(f"{path}: only {len(rows)} points, need >= {MIN_POINTS}")
    arr = np.asarray(rows)
    s_col = arr[:, 0]
    if (np.diff(s_col) <= 0).any():
        i = int(np.argmax(np.diff(s_col) <= 0)) + 2  # +2: header + 1-based
        raise TrackError(f"{path}: s column not strictly increasing at row {i}")
    xy = arr[:, 1:3]
    # tolerate a duplicated closing point (last row == first row)
    if np.hypot(*(xy[-1] - xy[0])) < 1e-9:
        arr = arr[:-1]
        xy = xy[:-1]
    hw = arr[:, 3] if has_w else default_half_width
    try:
        return Track(xy, hw)
    except TrackError as exc:
        raise TrackError(f"{path}: {exc}") from None


def save_track(track: Track, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "x", "y", "w"])
        for s, (x, y), w in zip(track.s, track.xy, track.half_width):
            writer.writerow([repr(float(s)), repr(float(x)), repr(float(y)),
                             repr(float(w))])
