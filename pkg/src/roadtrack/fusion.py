"""Measurement clustering and lidar/radar fusion.

Filtered lidar points are grouped into per-object clusters, first by gating
against the previous tracks' rectangles, then by single-linkage distance
clustering of the leftovers.  Radar detections donate their velocity to the
nearest cluster centroid within a gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .measmodel import OrientedRectangle
from .state import TrackingMode, state_to_vrf

DEFAULT_EPS = 1.5
DEFAULT_GATE = 3.0
DEFAULT_INFLATION = 2.0


class ClusterTag(str, Enum):
    LIDAR_ONLY = "LidarOnly"
    LIDAR_TRACK_GATED = "LidarTrackGated"
    LIDAR_RADAR_FUSED = "LidarRadarFused"


@dataclass
class MeasurementCluster:
    points: np.ndarray  # (N, 2) or (N, 4)
    tag: ClusterTag

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        if len(self.points) == 0:
            raise ValueError("cluster needs at least one point")
        if self.points.shape[1] not in (2, 4):
            raise ValueError("cluster points must be 2- or 4-dimensional")

    @property
    def centroid(self):
        return self.points[:, :2].mean(axis=0)

    @property
    def is_fused(self):
        return self.points.shape[1] == 4


def cluster_with_tracks(points, prev_tracks, spline, ego,
                        inflation=DEFAULT_INFLATION,
                        mode=TrackingMode.CURVILINEAR):
    """Gate points against the previous tracks' inflated rectangles.

    Each point inside a rectangle joins the cluster of the closest such
    track center.  Returns (clusters, leftover_points).
    """
    points = np.atleast_2d(np.asarray(points, float))
    if len(points) == 0:
        return [], points.reshape(0, 2)
    if not prev_tracks:
        return [], points
    rects = []
    for x in prev_tracks:
        x = np.asarray(x, float)
        center, psi, _, _ = state_to_vrf(x, spline, ego, mode=mode)
        rects.append(OrientedRectangle(center=center, yaw=psi,
                                       length=x[5] + 2 * inflation,
                                       width=x[6] + 2 * inflation))
    owner = np.full(len(points), -1)
    best_d = np.full(len(points), np.inf)
    for t, rect in enumerate(rects):
        d = points - rect.center
        c, s = np.cos(rect.yaw), np.sin(rect.yaw)
        u = c * d[:, 0] + s * d[:, 1]
        w = -s * d[:, 0] + c * d[:, 1]
        inside = (np.abs(u) <= rect.length / 2) & (np.abs(w) <= rect.width / 2)
        dist = np.hypot(d[:, 0], d[:, 1])
        take = inside & (dist < best_d)
        owner[take] = t
        best_d[take] = dist[take]
    clusters = []
    for t in range(len(rects)):
        mask = owner == t
        if mask.any():
            clusters.append(MeasurementCluster(points[mask],
                                               ClusterTag.LIDAR_TRACK_GATED))
    return clusters, points[owner == -1]


def distance_cluster(points, eps=DEFAULT_EPS):
    """Single-linkage connected components under dist <= eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    points = np.atleast_2d(np.asarray(points, float))
    if len(points) == 0:
        return []
    tree = cKDTree(points)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    n = len(points)
    if len(pairs):
        data = np.ones(len(pairs))
        adj = csr_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    else:
        adj = csr_matrix((n, n))
    _, labels = connected_components(adj, directed=False)
    return [MeasurementCluster(points[labels == c], ClusterTag.LIDAR_ONLY)
            for c in np.unique(labels)]


def associate_radar(clusters, radar, gate=DEFAULT_GATE):
    """Greedy globally-closest pairing of cluster centroids to radar
    detections within ``gate``; paired clusters gain 4D points."""
    radar = np.atleast_2d(np.asarray(radar, float)) if len(radar) else \
        np.empty((0, 4))
    if not clusters or len(radar) == 0:
        return list(clusters)
    centroids = np.array([c.centroid for c in clusters])
    dists = np.linalg.norm(centroids[:, None, :] - radar[None, :, :2], axis=2)
    out = list(clusters)
    free_c = set(range(len(clusters)))
    free_r = set(range(len(radar)))
    while free_c and free_r:
        best = min(((dists[i, j], i, j) for i in free_c for j in free_r))
        d, i, j = best
        if d > gate:
            break
        pts = clusters[i].points[:, :2]
        vel = np.tile(radar[j, 2:4], (len(pts), 1))
        out[i] = MeasurementCluster(np.hstack([pts, vel]),
                                    ClusterTag.LIDAR_RADAR_FUSED)
        free_c.remove(i)
        free_r.remove(j)
    return out
