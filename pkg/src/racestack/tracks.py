"""Synthetic track builders used by tests, scenarios, and the CLI.

Tracks are built from straight/arc centerline segments, then bounds are
offset along the local normals. All builders return (RawBounds, centerline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .track import RawBounds, ReferenceLine, build_reference_line


@dataclass
class Straight:
    length: float


@dataclass
class Arc:
    radius: float
    angle: float  # rad, positive = left turn


def centerline_from_segments(segments, step: float = 1.0,
                             start=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Integrate segments into (N, 3) centerline points (z = 0)."""
    x, y, heading = start
    pts = [(x, y)]
    for seg in segments:
        if isinstance(seg, Straight):
            n = max(1, int(math.ceil(seg.length / step)))
            ds = seg.length / n
            for _ in range(n):
                x += ds * math.cos(heading)
                y += ds * math.sin(heading)
                pts.append((x, y))
        elif isinstance(seg, Arc):
            arc_len = abs(seg.radius * seg.angle)
            n = max(1, int(math.ceil(arc_len / step)))
            dth = seg.angle / n
            # chord stepping at the mid-angle keeps endpoints on the arc
            chord = 2.0 * abs(seg.radius) * math.sin(abs(dth) / 2.0)
            for _ in range(n):
                heading_mid = heading + 0.5 * dth
                x += chord * math.cos(heading_mid)
                y += chord * math.sin(heading_mid)
                heading += dth
                pts.append((x, y))
        else:
            raise TypeError(f"unknown segment {seg!r}")
    arr = np.array(pts)
    # drop the duplicated closing point if the loop closed onto the start
    if np.linalg.norm(arr[0] - arr[-1]) < step * 0.5:
        arr = arr[:-1]
    return np.column_stack([arr, np.zeros(len(arr))])


def bounds_from_centerline(center: np.ndarray, w_left, w_right) -> RawBounds:
    """Offset bounds along centerline normals. Widths may be scalars or arrays."""
    n = len(center)
    w_left = np.broadcast_to(np.asarray(w_left, dtype=float), (n,))
    w_right = np.broadcast_to(np.asarray(w_right, dtype=float), (n,))
    nxt = np.roll(center, -1, axis=0)
    prv = np.roll(center, 1, axis=0)
    tang = nxt[:, :2] - prv[:, :2]
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    normal = np.column_stack([-tang[:, 1], tang[:, 0]])
    left = center.copy()
    right = center.copy()
    left[:, :2] += normal * w_left[:, None]
    right[:, :2] -= normal * w_right[:, None]
    return RawBounds(left=left, right=right, closed=True)


def ring(radius: float = 100.0, half_width: float = 5.0, step: float = 1.0):
    """Counterclockwise circular track (left turn, kappa = +1/radius)."""
    n = int(round(2.0 * math.pi * radius / step))
    th = np.arange(n) * (2.0 * math.pi / n)
    center = np.column_stack([radius * np.cos(th), radius * np.sin(th), np.zeros(n)])
    bounds = bounds_from_centerline(center, half_width, half_width)
    return bounds, center


def variable_width_ring(radius: float = 100.0, base_half_width: float = 5.0,
                        amplitude: float = 1.5, step: float = 1.0):
    """Ring whose half-widths oscillate along the lap (for prediction tests)."""
    n = int(round(2.0 * math.pi * radius / step))
    th = np.arange(n) * (2.0 * math.pi / n)
    center = np.column_stack([radius * np.cos(th), radius * np.sin(th), np.zeros(n)])
    w_l = base_half_width + amplitude * np.sin(2.0 * th)
    w_r = base_half_width + amplitude * np.cos(3.0 * th)
    return bounds_from_centerline(center, w_l, w_r), center


def stadium(straight: float = 250.0, radius: float = 60.0,
            half_width: float = 6.0, step: float = 1.0):
    """Two straights joined by 180 degree left-hand arcs."""
    segs = [Straight(straight), Arc(radius, math.pi),
            Straight(straight), Arc(radius, math.pi)]
    center = centerline_from_segments(segs, step)
    return bounds_from_centerline(center, half_width, half_width), center


def stadium_chicane(straight: float = 330.0, radius: float = 70.0,
                    half_width: float = 6.0, chicane_radius: float = 24.0,
                    chicane_angle: float = math.radians(55.0), step: float = 1.0):
    """Stadium with a chicane splitting the back straight; ~1.2 km default.

    The chicane forces hard braking into alternating corners, which is where
    chamfered acceleration coupling pays off over the plain diamond.
    """
    lead = 0.35 * straight
    segs = [
        Straight(straight), Arc(radius, math.pi),
        Straight(lead),
        Arc(chicane_radius, chicane_angle),
        Arc(chicane_radius, -2.0 * chicane_angle),
        Arc(chicane_radius, chicane_angle),
        Straight(straight - lead), Arc(radius, math.pi),
    ]
    center = centerline_from_segments(segs, step)
    # the chicane offsets the back straight laterally; close the loop by
    # shifting the start so first and last points meet
    gap = center[0] - center[-1]
    drift = np.linspace(0.0, 1.0, len(center))[:, None]
    center = center + drift * gap[None, :]
    return bounds_from_centerline(center, half_width, half_width), center


_BUILTIN = {
    "ring": ring,
    "variable_width_ring": variable_width_ring,
    "stadium": stadium,
    "stadium_chicane": stadium_chicane,
}


def build_builtin(name: str):
    """Resolve a ``builtin:<name>`` track spec to (RawBounds, centerline)."""
    key = name.split(":", 1)[1] if name.startswith("builtin:") else name
    if key not in _BUILTIN:
        raise KeyError(f"unknown builtin track '{key}' (have {sorted(_BUILTIN)})")
    return _BUILTIN[key]()


def reference_from_builtin(name: str, spacing: float = 1.0) -> ReferenceLine:
    bounds, center = build_builtin(name)
    return build_reference_line(center, bounds, spacing=spacing)
