"""Generators for the demo oval: centerline and a precomputed racing line.

The oval is a stadium: two straights of length STRAIGHT joined by two
constant-radius half turns of radius RADIUS, traversed counterclockwise.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from racestack.track import Track, save_track

STRAIGHT = 1200.0   # m
RADIUS = 255.0      # m
HALF_WIDTH = 6.0    # m
SPACING = 1.0       # m, sample spacing along the centerline
LINE_OFFSET = 3.5   # m, racing-line swing amplitude


def analytic_circumference() -> float:
    return 2.0 * STRAIGHT + 2.0 * math.pi * RADIUS


def centerline_xy(spacing: float = SPACING) -> np.ndarray:
    """Sampled centerline points, loop order: bottom straight (+x), right turn,
    top straight (-x), left turn."""
    L = analytic_circumference()
    n = int(round(L / spacing))
    s = np.arange(n) * (L / n)
    pts = np.empty((n, 2))
    arc = math.pi * RADIUS
    for i, si in enumerate(s):
        if si < STRAIGHT:                               # bottom straight
            pts[i] = (-STRAIGHT / 2 + si, -RADIUS)
        elif si < STRAIGHT + arc:                       # right turn
            a = (si - STRAIGHT) / RADIUS - math.pi / 2
            pts[i] = (STRAIGHT / 2 + RADIUS * math.cos(a), RADIUS * math.sin(a))
        elif si < 2 * STRAIGHT + arc:                   # top straight
            pts[i] = (STRAIGHT / 2 - (si - STRAIGHT - arc), RADIUS)
        else:                                           # left turn
            a = (si - 2 * STRAIGHT - arc) / RADIUS + math.pi / 2
            pts[i] = (-STRAIGHT / 2 + RADIUS * math.cos(a), RADIUS * math.sin(a))
    return pts


def _lateral_profile(s: np.ndarray, L: float) -> np.ndarray:
    """Racing-line lateral offset (+ is track-left = inside of this loop).

    Knots: outside at each straight midpoint, inside at each turn apex,
    cosine-smoothed in between.
    """
    arc = math.pi * RADIUS
    knots = np.array([
        0.5 * STRAIGHT,                       # mid bottom straight: outside
        STRAIGHT + 0.5 * arc,                 # right apex: inside
        1.5 * STRAIGHT + arc,                 # mid top straight: outside
        2.0 * STRAIGHT + 1.5 * arc,           # left apex: inside
    ])
    vals = np.array([-LINE_OFFSET, LINE_OFFSET, -LINE_OFFSET, LINE_OFFSET])
    out = np.empty_like(s)
    for i, si in enumerate(s):
        # the knot just behind si has the smallest forward distance (mod L)
        fwd = np.mod(si - knots, L)
        a = int(np.argmin(fwd))
        b = (a + 1) % len(knots)
        span = np.mod(knots[b] - knots[a], L)
        t = fwd[a] / span
        out[i] = vals[a] + (vals[b] - vals[a]) * 0.5 * (1 - math.cos(math.pi * t))
    return out


def racing_line_xy(spacing: float = SPACING) -> np.ndarray:
    center = centerline_xy(spacing)
    seg = np.roll(center, -1, axis=0) - center
    phi = np.arctan2(seg[:, 1], seg[:, 0])
    L = analytic_circumference()
    n = center.shape[0]
    s = np.arange(n) * (L / n)
    off = _lateral_profile(s, L)
    normal = np.stack([-np.sin(phi), np.cos(phi)], axis=1)  # track-left
    return center + off[:, None] * normal


def demo_centerline() -> Track:
    return Track(centerline_xy(), HALF_WIDTH)


def demo_racing_line() -> Track:
    return Track(racing_line_xy(), HALF_WIDTH)


def write_demo_tracks(out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, track in (("demo_oval_centerline.csv", demo_centerline()),
                        ("demo_oval_racing_line.csv", demo_racing_line())):
        p = out_dir / name
        save_track(track, p)
        paths.append(p)
    return paths


if __name__ == "__main__":
    import sys

    dest = sys.argv[1] if len(sys.argv) > 1 else "."
    for p in write_demo_tracks(dest):
        print(p)
