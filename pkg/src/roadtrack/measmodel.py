"""Rectangle measurement model: side association, corner splitting, and
predicted measurement-generating points on the object boundary.

Given a track state converted to an oriented rectangle in the vehicle frame
and a bearing-sorted measurement cluster, this module predicts where on the
rectangle boundary each return should have originated.  Clusters spanning a
corner are split into two single-sided groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .road import wrap_angle
from .state import TrackingMode, state_to_vrf

TWO_SIDED_SSE_RATIO = 0.5
TWO_SIDED_MIN_CORNER_DEG = 45.0
TWO_SIDED_MIN_GROUP = 3  # a 2-point group fits any line exactly
TWO_SIDED_NOISE_FLOOR = 0.1  # per-point residual consistent with sensor noise
DEFAULT_RAY_STEP = np.deg2rad(0.5)  # lidar bearing spacing, single-hit fallback
BEARING_POINT_NOISE = 0.15  # tangential scatter of an outermost return (m)


@dataclass
class OrientedRectangle:
    center: np.ndarray  # (x, y), vehicle frame
    yaw: float
    length: float
    width: float

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        if self.length <= 0 or self.width <= 0:
            raise ValueError("rectangle extent must be positive")

    def corners(self):
        """Corner coordinates in CCW order starting front-left."""
        h = np.array([[+0.5, +0.5], [-0.5, +0.5], [-0.5, -0.5], [+0.5, -0.5]])
        local = h * np.array([self.length, self.width])
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return self.center + local @ rot.T

    def side_normals(self):
        """Outward normal angle of each side; side i runs from corner i to
        corner (i+1) % 4 (left, rear, right, front)."""
        return wrap_angle(self.yaw + np.array(
            [np.pi / 2, np.pi, -np.pi / 2, 0.0]))

    def side_segment(self, i):
        cs = self.corners()
        return cs[i], cs[(i + 1) % 4]


@dataclass
class SideAssociation:
    side_index: int  # 0..3, see OrientedRectangle.side_segment
    normal_angle: float
    span_fraction: float


def sort_ccw(points):
    """Order points by ascending bearing from the vehicle-frame origin;
    equal bearings break by range.  Returns (sorted_points, order)."""
    points = np.atleast_2d(np.asarray(points, float))
    bearing = np.arctan2(points[:, 1], points[:, 0])
    rng = np.hypot(points[:, 0], points[:, 1])
    order = np.lexsort((rng, bearing))
    return points[order], order


def associate_side(rect, sorted_points):
    """Pick the rectangle side the (bearing-sorted) measurements belong to.

    For >= 2 points the side minimizes |alpha_i - beta - pi/2| where beta is
    the direction from the first to the last point: traversing a visible side
    in ascending-bearing order, the outward normal facing the sensor is the
    traversal direction rotated +pi/2.  A single point falls back to the side
    with minimum perpendicular distance.
    """
    pts = np.atleast_2d(np.asarray(sorted_points, float))[:, :2]
    normals = rect.side_normals()
    first, last = pts[0], pts[-1]
    if len(pts) >= 2 and np.hypot(*(last - first)) > 1e-9:
        beta = np.arctan2(last[1] - first[1], last[0] - first[0])
        idx = int(np.argmin(np.abs(wrap_angle(normals - beta - np.pi / 2))))
    else:
        dists = []
        for i in range(4):
            a, b = rect.side_segment(i)
            dists.append(_point_segment_distance(pts[0], a, b))
        idx = int(np.argmin(dists))
    a, b = rect.side_segment(idx)
    side_len = np.hypot(*(b - a))
    t = _project_param(pts, a, b)
    span = np.clip((t.max() - t.min()) / side_len, 1e-6, 1.0)
    return SideAssociation(side_index=idx, normal_angle=float(normals[idx]),
                           span_fraction=float(span))


def _point_segment_distance(p, a, b):
    seg = b - a
    t = np.clip((p - a) @ seg / (seg @ seg), 0.0, 1.0)
    return np.hypot(*(p - (a + t * seg)))


def _project_param(pts, a, b):
    """Unclamped projection parameter (meters along the side) of points onto
    the side's supporting line."""
    seg = b - a
    return (np.atleast_2d(pts) - a) @ seg / np.hypot(*seg)


def _line_sse_prefix(pts):
    """Orthogonal-regression SSE of points[:k] for every k, via prefix
    moments (smallest eigenvalue of the 2x2 scatter matrix)."""
    x, y = pts[:, 0], pts[:, 1]
    csum = np.cumsum
    n = np.arange(1, len(pts) + 1)
    sx, sy = csum(x), csum(y)
    sxx, syy, sxy = csum(x * x), csum(y * y), csum(x * y)
    cxx = sxx - sx * sx / n
    cyy = syy - sy * sy / n
    cxy = sxy - sx * sy / n
    tr, det = cxx + cyy, cxx * cyy - cxy * cxy
    disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
    return np.maximum(tr / 2 - disc, 0.0)


def _line_direction(pts):
    """Principal direction of a point set (orthogonal regression)."""
    d = pts - pts.mean(axis=0)
    cov = d.T @ d
    _, vecs = np.linalg.eigh(cov)
    v = vecs[:, -1]
    return np.arctan2(v[1], v[0])


def corner_index(sorted_points):
    """Best split of a bearing-sorted cluster into two line segments.

    Returns (split, is_two_sided): points[:split] and points[split:] form the
    two groups.  Two-sided needs enough points for two well-determined lines,
    a clear SSE improvement over a single line, and a corner angle above the
    threshold.
    """
    pts = np.atleast_2d(np.asarray(sorted_points, float))[:, :2]
    m = len(pts)
    if m < 2 * TWO_SIDED_MIN_GROUP:
        return m, False
    sse_fwd = _line_sse_prefix(pts)
    sse_bwd = _line_sse_prefix(pts[::-1])[::-1]
    single = sse_fwd[-1]
    ks = np.arange(TWO_SIDED_MIN_GROUP, m - TWO_SIDED_MIN_GROUP + 1)
    totals = sse_fwd[ks - 1] + sse_bwd[ks]
    best = int(ks[np.argmin(totals)])
    best_sse = float(totals.min())
    if single <= m * TWO_SIDED_NOISE_FLOOR ** 2:
        # a single line already fits to within sensor noise; any SSE
        # improvement from splitting is fitting that noise, not a corner
        return m, False
    if best_sse >= TWO_SIDED_SSE_RATIO * single:
        return best, False
    ang1 = _line_direction(pts[:best])
    ang2 = _line_direction(pts[best:])
    corner = np.abs(wrap_angle(ang1 - ang2))
    corner = min(corner, np.pi - corner)  # line directions are axial
    if np.degrees(corner) < TWO_SIDED_MIN_CORNER_DEG:
        return best, False
    return best, True


@dataclass
class PlanGroup:
    side_index: int
    idx: np.ndarray      # member positions within the sorted cluster
    frac: np.ndarray     # frozen meter offsets from the side midpoint
    th_lo: float         # covered bearing interval: half a ray step
    th_hi: float         #   beyond the outermost returns
    lo_is_start: bool    # th_lo end maps to the side's start corner
    rng: float           # mean range, scales bearings into arc length
    bear_var: float      # variance of the side-bound pseudo-measurements


@dataclass
class AssociationPlan:
    """Frozen cluster-to-rectangle association.

    The side choice and corner split are decided once (at the mixture
    component mean) so that evaluating the plan stays a smooth function of
    the state.  Re-deciding the association at every sigma point would make
    the measurement map discontinuous at decision boundaries, which the
    unscented transform amplifies into spurious gradients.
    """
    groups: list  # PlanGroup per associated side
    ndim: int     # 2 for lidar-only, 4 when a fused radar velocity exists


def _rect_from_state(x, spline, ego, mode, step):
    center, psi, _, vel = state_to_vrf(x, spline, ego, mode=mode, step=step)
    rect = OrientedRectangle(center=center, yaw=psi,
                             length=max(x[5], 1e-3), width=max(x[6], 1e-3))
    return rect, vel


def _segment_distance(points, a, b):
    """Euclidean distance from each point to segment a->b."""
    ab = b - a
    t = np.clip((points - a) @ ab / max(ab @ ab, 1e-12), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def plan_association(x, cluster_points, spline, ego,
                     mode=TrackingMode.CURVILINEAR, step=0.01):
    """Associate a bearing-sorted cluster with rectangle sides for state x."""
    pts = np.atleast_2d(np.asarray(cluster_points, float))
    rect, _ = _rect_from_state(np.asarray(x, float), spline, ego, mode, step)
    xy = pts[:, :2]
    split, two_sided = corner_index(xy)
    idx_all = np.arange(len(xy))
    if two_sided:
        # Two visible faces are always adjacent.  Pick the adjacent side
        # pair that jointly fits the cluster best and assign each point to
        # the nearer of the two: the residual-based split can be off by a
        # point or two under noise, and a face point dragged onto the
        # adjacent side corrupts the extent estimate badly.
        side_dist = np.stack([_segment_distance(xy, *rect.side_segment(si))
                              for si in range(4)])
        pair_cost = [np.minimum(side_dist[i], side_dist[(i + 1) % 4]).sum()
                     for i in range(4)]
        i = int(np.argmin(pair_cost))
        j = (i + 1) % 4
        pick = (side_dist[j] < side_dist[i]).astype(int)
        groups = [(idx_all[pick == k], si) for k, si in enumerate((i, j))
                  if np.any(pick == k)]
    else:
        groups = [(idx_all, associate_side(rect, xy).side_index)]

    # Lidar rays are equally spaced in bearing, so consecutive returns on
    # one object sit one angular step apart regardless of how stretched the
    # hits are along a grazed side.  The median bearing gap recovers that
    # step; the covered interval extends half a step past the outermost
    # hits (the next ray out missed, so the face ends somewhere in that
    # gap, half a step beyond on average).
    th_all = np.arctan2(xy[:, 1], xy[:, 0])
    order_c = np.argsort(th_all)
    th_sorted = th_all[order_c]
    if len(th_sorted) > 1:
        ray_step = float(np.median(np.diff(th_sorted)))
    else:
        ray_step = DEFAULT_RAY_STEP
    ray_step = max(ray_step, 1e-4)

    # Returns from one object arrive on consecutive rays, so an extreme
    # return separated from the rest of the cluster by several ray steps
    # is clutter swept into the cluster gate; mark such returns so the
    # corner bounds are read off genuine face returns.
    suspect = np.zeros(len(xy), bool)
    lo_c, hi_c = 0, len(order_c) - 1
    while lo_c < hi_c and \
            th_sorted[lo_c + 1] - th_sorted[lo_c] > 3.0 * ray_step:
        suspect[order_c[lo_c]] = True
        lo_c += 1
    while hi_c > lo_c and \
            th_sorted[hi_c] - th_sorted[hi_c - 1] > 3.0 * ray_step:
        suspect[order_c[hi_c]] = True
        hi_c -= 1

    plan_groups = []
    for idx, side_index in groups:
        g = xy[idx]
        a, b = rect.side_segment(side_index)
        th = np.arctan2(g[:, 1], g[:, 0])
        ok = ~suspect[idx]
        if not np.any(ok):
            ok[:] = True
        th_ok = np.where(ok, th, np.nan)
        i_lo, i_hi = int(np.nanargmin(th_ok)), int(np.nanargmax(th_ok))
        t = _project_param(g, a, b)
        # Offsets from the side midpoint (meters along the side tangent):
        # anchored there, the frozen pattern neither stretches nor slides
        # when the side's own length changes across sigma points.
        off = t - 0.5 * np.hypot(*(b - a))
        rng = float(np.mean(np.hypot(g[:, 0], g[:, 1])))
        plan_groups.append(PlanGroup(
            side_index=side_index, idx=idx, frac=off,
            th_lo=float(th[i_lo] - 0.5 * ray_step),
            th_hi=float(th[i_hi] + 0.5 * ray_step),
            lo_is_start=bool(t[i_lo] <= t[i_hi]), rng=rng,
            # quantization of the face end inside one ray gap, plus the
            # scatter of the outermost return itself (arc-length units,
            # which keeps the innovation covariance on one scale)
            bear_var=(ray_step * rng) ** 2 / 12.0 + BEARING_POINT_NOISE ** 2,
        ))
    return AssociationPlan(groups=plan_groups, ndim=pts.shape[1])


def bound_groups(plan):
    """Groups whose covered interval genuinely brackets the side.

    A single return can land anywhere along a face, so its bearing says
    nothing about where the corners are; with two or more returns the
    outermost ones do bracket the covered stretch.
    """
    return [g for g in plan.groups if len(g.idx) >= 2]


def measured_side_bounds(plan):
    """The frozen covered-interval bounds, two per group, scaled by the
    group's mean range into arc-length units."""
    return np.array([v * g.rng for g in bound_groups(plan)
                     for v in (g.th_lo, g.th_hi)])


def predict_side_bounds(x, plan, spline, ego,
                        mode=TrackingMode.CURVILINEAR, step=0.01):
    """Predicted bearings of the end corners of each associated side.

    A face can only be hit out to the last ray that clears it, so each end
    corner of the associated side must sit within one ray step of the
    outermost return: the corner bearings are compared against the covered
    interval bounds frozen into the plan.  This is what makes extent
    observable in both directions -- a side too short to reach the swept
    interval or long enough to poke past it both leave a residual -- while
    staying well conditioned at grazing incidence, where comparing point
    positions along the side would amplify small lateral state errors
    enormously.
    """
    rect, _ = _rect_from_state(np.asarray(x, float), spline, ego, mode, step)
    out = []
    for g in bound_groups(plan):
        a, b = rect.side_segment(g.side_index)
        lo_corner, hi_corner = (a, b) if g.lo_is_start else (b, a)
        for corner, ref in ((lo_corner, g.th_lo), (hi_corner, g.th_hi)):
            raw = np.arctan2(corner[1], corner[0])
            # express near the frozen reference so residuals never wrap
            out.append((ref + wrap_angle(raw - ref)) * g.rng)
    return np.array(out)


def predict_from_plan(x, plan, spline, ego,
                      mode=TrackingMode.CURVILINEAR, step=0.01):
    """Predicted measurement vector for state x under a frozen plan.

    The predicted generating points sit at frozen meter offsets from the
    associated side's midpoint, so they track the side's position and
    heading without constraining how far it extends; extent information
    enters separately through the side-bound bearings (see
    predict_side_bounds).

    For a fused cluster every predicted point carries the predicted
    rectangle-center velocity, mirroring the measured layout.  The radar
    contributes only one physical velocity measurement per cluster, so the
    filter scales the per-copy velocity noise by the cluster size, which
    makes the repeated channels carry exactly one measurement's worth of
    information.
    """
    rect, vel = _rect_from_state(np.asarray(x, float), spline, ego, mode,
                                 step)
    pred = np.empty((sum(len(g.idx) for g in plan.groups), 2))
    for g in plan.groups:
        a, b = rect.side_segment(g.side_index)
        u = (b - a) / max(np.hypot(*(b - a)), 1e-9)
        pred[g.idx] = 0.5 * (a + b) + g.frac[:, None] * u
    if plan.ndim == 4:
        pred = np.hstack([pred, np.tile(vel, (len(pred), 1))])
    return pred.ravel()


def predict_meas_points(x, cluster_points, spline, ego,
                        mode=TrackingMode.CURVILINEAR, step=0.01):
    """Predicted measurement-generating points for a state vector and a
    bearing-sorted cluster, concatenated into one vector.

    2D points for lidar-only clusters; 4D clusters get the predicted
    absolute velocity of the rectangle center appended to every point.
    """
    plan = plan_association(x, cluster_points, spline, ego, mode=mode,
                            step=step)
    return predict_from_plan(x, plan, spline, ego, mode=mode, step=step)
