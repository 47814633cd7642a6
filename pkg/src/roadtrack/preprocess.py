"""Per-frame point filters: road-bound filtering and surface visibility.

Both filters take and return (N, 2) arrays of vehicle-frame points and
preserve input order.
"""

from __future__ import annotations

import numpy as np

from .road import cart_to_curv_many

DEFAULT_ANGULAR_BIN = np.radians(0.5)


def filter_road_bounds(points, spline, ego, corridor=None):
    """Keep points whose centerline projection satisfies |n| <= half_width.

    ``corridor`` bounds the projection search; unprojectable points are
    dropped.
    """
    points = np.atleast_2d(np.asarray(points, float))
    if len(points) == 0:
        return points.reshape(0, 2)
    if corridor is None:
        corridor = max(seg.half_width for seg in spline.segments) + 1.0
    s_rel, n, ok = cart_to_curv_many(points, ego, spline, corridor=corridor)
    keep = np.zeros(len(points), bool)
    s_abs = np.clip(ego.s_e + s_rel, 0.0, spline.total_length)
    hw = spline.half_width(s_abs)
    keep[ok] = np.abs(n[ok]) <= hw[ok]
    return points[keep]


def visibility_filter(points, angular_bin=DEFAULT_ANGULAR_BIN):
    """Within each bearing bin keep only the closest return, removing
    interior points; ties break on the smaller bearing."""
    if angular_bin <= 0:
        raise ValueError("angular_bin must be positive")
    points = np.atleast_2d(np.asarray(points, float))
    if len(points) == 0:
        return points.reshape(0, 2)
    bearing = np.arctan2(points[:, 1], points[:, 0])
    rng = np.hypot(points[:, 0], points[:, 1])
    bins = np.floor(bearing / angular_bin).astype(int)
    keep = np.zeros(len(points), bool)
    for b in np.unique(bins):
        idx = np.flatnonzero(bins == b)
        order = np.lexsort((bearing[idx], rng[idx]))
        keep[idx[order[0]]] = True
    return points[keep]
