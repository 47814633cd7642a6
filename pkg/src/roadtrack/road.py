"""Piecewise-polynomial road model and curvilinear <-> cartesian conversions.

The road centerline is described per segment by cubic polynomials for
heading theta(u) and curvature kappa(u) in local arclength u, anchored at a
cartesian origin.  All conversions between road coordinates (s, n) and the
ego vehicle frame live here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

# Euler integration step shared by the forward map and the cached centerline
# table; keeping them equal makes the round trip consistent to O(step^2).
DEFAULT_STEP = 0.01


class RoadDomainError(ValueError):
    """Raised when an arclength query falls outside the spline extent."""


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


def unit_normal(theta):
    """Left-pointing unit normal of a tangent direction theta."""
    return np.array([-np.sin(theta), np.cos(theta)])


@dataclass(frozen=True)
class RoadSegment:
    s_start: float
    coeff_theta: np.ndarray  # (a, b, c, d), theta = a u^3 + b u^2 + c u + d
    coeff_kappa: np.ndarray
    length: float
    origin: np.ndarray  # cartesian anchor of the segment start, global frame
    half_width: float

    def __post_init__(self):
        object.__setattr__(self, "coeff_theta", np.asarray(self.coeff_theta, float))
        object.__setattr__(self, "coeff_kappa", np.asarray(self.coeff_kappa, float))
        object.__setattr__(self, "origin", np.asarray(self.origin, float))
        if self.length <= 0:
            raise ValueError("segment length must be positive")
        if self.half_width <= 0:
            raise ValueError("segment half_width must be positive")


@dataclass
class CurvilinearPose:
    s: float  # arclength relative to the ego foot-point (negative = behind)
    n: float  # signed lateral offset, positive left of travel direction
    heading_offset: float = 0.0  # relative to the centerline tangent


@dataclass
class EgoPose:
    s_e: float  # absolute arclength of the ego foot-point
    n_e: float
    xi_e: float  # heading relative to the centerline tangent
    psi_e: float  # global yaw (= theta(s_e) + xi_e)
    psi_dot_e: float
    v_e: float

    @classmethod
    def on_road(cls, spline, s_e, n_e=0.0, xi_e=0.0, psi_dot_e=None, v_e=0.0):
        theta = spline.heading(s_e)
        if psi_dot_e is None:
            psi_dot_e = spline.curvature(s_e) * v_e * np.cos(xi_e)
        return cls(s_e=s_e, n_e=n_e, xi_e=xi_e,
                   psi_e=wrap_angle(theta + xi_e), psi_dot_e=psi_dot_e, v_e=v_e)


class RoadSpline:
    """Immutable ordered list of RoadSegments with cached centerline geometry."""

    HEADING_JOINT_TOL = 1e-6
    KAPPA_CONSISTENCY_TOL = 1e-3

    def __init__(self, segments, validate=True):
        if not segments:
            raise ValueError("spline needs at least one segment")
        self.segments = sorted(segments, key=lambda seg: seg.s_start)
        self._s_starts = np.array([seg.s_start for seg in self.segments])
        self.total_length = self.segments[-1].s_start + self.segments[-1].length
        self._table = None
        self._tree = None
        self._prefix = {}
        if validate:
            self._validate()

    def _validate(self):
        if abs(self.segments[0].s_start) > 1e-9:
            raise ValueError("first segment must start at s=0")
        for prev, cur in zip(self.segments, self.segments[1:]):
            if abs(prev.s_start + prev.length - cur.s_start) > 1e-6:
                raise ValueError("segments are not contiguous in arclength")
            th_end = np.polyval(prev.coeff_theta, prev.length)
            th_next = np.polyval(cur.coeff_theta, 0.0)
            if abs(wrap_angle(th_end - th_next)) > self.HEADING_JOINT_TOL:
                raise ValueError(
                    f"heading discontinuity at s={cur.s_start:.3f}: "
                    f"{th_end:.9f} vs {th_next:.9f}")
        for seg in self.segments:
            u = np.linspace(0.0, seg.length, 16)
            dth = np.polyval(np.polyder(seg.coeff_theta), u)
            kap = np.polyval(seg.coeff_kappa, u)
            if np.max(np.abs(dth - kap)) > self.KAPPA_CONSISTENCY_TOL:
                raise ValueError(
                    f"curvature inconsistent with heading derivative in the "
                    f"segment at s={seg.s_start:.3f}")

    # ------------------------------------------------------------------
    def _segment_index(self, s):
        idx = np.searchsorted(self._s_starts, s, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def _check_domain(self, s):
        s = np.asarray(s, float)
        if np.any(s < -1e-9) or np.any(s > self.total_length + 1e-9):
            bad = s[(s < -1e-9) | (s > self.total_length + 1e-9)]
            raise RoadDomainError(
                f"arclength {np.atleast_1d(bad)[0]:.3f} outside "
                f"[0, {self.total_length:.3f}]")

    def _eval_poly(self, s, which):
        self._check_domain(s)
        s = np.asarray(s, float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        idx = self._segment_index(s)
        out = np.empty_like(s)
        for i in np.unique(idx):
            seg = self.segments[i]
            coeff = seg.coeff_theta if which == "theta" else seg.coeff_kappa
            m = idx == i
            out[m] = np.polyval(coeff, s[m] - seg.s_start)
        return out[0] if scalar else out

    def heading(self, s):
        return self._eval_poly(s, "theta")

    def curvature(self, s):
        return self._eval_poly(s, "kappa")

    def half_width(self, s):
        self._check_domain(s)
        s = np.asarray(s, float)
        idx = self._segment_index(np.atleast_1d(s))
        hw = np.array([self.segments[i].half_width for i in idx])
        return hw[0] if s.ndim == 0 else hw

    # ------------------------------------------------------------------
    def _centerline(self):
        """Dense centerline table (s, xy) built with the same right-endpoint
        Euler rule as the forward conversion, per segment from its anchor."""
        if self._table is None:
            s_all, xy_all = [], []
            for seg in self.segments:
                grid = _integration_grid(0.0, seg.length, DEFAULT_STEP)
                th = np.polyval(seg.coeff_theta, grid.nodes)
                dx = np.cumsum(grid.weights * np.cos(th))
                dy = np.cumsum(grid.weights * np.sin(th))
                s_all.append(seg.s_start + np.concatenate(([0.0], grid.nodes)))
                xy = np.column_stack((np.concatenate(([0.0], dx)),
                                      np.concatenate(([0.0], dy))))
                xy_all.append(seg.origin + xy)
            self._table = (np.concatenate(s_all), np.vstack(xy_all))
        return self._table

    def _euler_prefix(self, step):
        """Cumulative right-endpoint Euler sums of (cos θ, sin θ) on the
        uniform grid j·step, cached per step value."""
        key = round(float(step), 12)
        if key not in self._prefix:
            n_full = int(self.total_length / step)
            nodes = step * np.arange(1, n_full + 1)
            th = self.heading(nodes) if n_full else np.empty(0)
            sums = step * np.column_stack((np.cumsum(np.cos(th)),
                                           np.cumsum(np.sin(th))))
            self._prefix[key] = np.vstack((np.zeros(2), sums))
        return self._prefix[key]

    def euler_displacement(self, s0, s1, step=DEFAULT_STEP):
        """Centerline displacement vector from arclength s0 to s1, global
        frame, via the right-endpoint Euler rule with fractional end steps.

        Equivalent in accuracy to integrating step by step from s0, but O(1)
        per call thanks to the cached prefix table."""
        self._check_domain([s0, s1])
        pref = self._euler_prefix(step)

        def partial(s):
            k = min(int(s / step), len(pref) - 1)
            rem = s - k * step
            if rem <= 1e-12:
                return pref[k]
            th = self.heading(s)
            return pref[k] + rem * np.array([np.cos(th), np.sin(th)])

        return partial(float(s1)) - partial(float(s0))

    def _kdtree(self):
        if self._tree is None:
            self._tree = cKDTree(self._centerline()[1])
        return self._tree

    def point(self, s):
        """Centerline point(s) at absolute arclength, global frame."""
        self._check_domain(s)
        tab_s, tab_xy = self._centerline()
        x = np.interp(s, tab_s, tab_xy[:, 0])
        y = np.interp(s, tab_s, tab_xy[:, 1])
        return np.stack((x, y), axis=-1)

    def project(self, points, corridor=None):
        """Project global points onto the centerline.

        Returns (s_abs, n, ok); entries with no centerline point within
        ``corridor`` have ok=False (s, n undefined there).
        """
        points = np.atleast_2d(np.asarray(points, float))
        tab_s, tab_xy = self._centerline()
        _, idx = self._kdtree().query(points)
        s_out = np.empty(len(points))
        n_out = np.empty(len(points))
        for k, (p, i) in enumerate(zip(points, idx)):
            best = (np.inf, 0.0, 0.0)
            for a in (max(i - 1, 0), i):
                b = a + 1
                if b >= len(tab_s):
                    continue
                seg = tab_xy[b] - tab_xy[a]
                L2 = seg @ seg
                t = 0.0 if L2 == 0 else np.clip((p - tab_xy[a]) @ seg / L2, 0.0, 1.0)
                foot = tab_xy[a] + t * seg
                d = p - foot
                dist = np.hypot(*d)
                if dist < best[0]:
                    s_here = tab_s[a] + t * (tab_s[b] - tab_s[a])
                    n_here = float(np.cross(seg / max(np.sqrt(L2), 1e-12), d))
                    best = (dist, s_here, n_here)
            s_out[k], n_out[k] = best[1], best[2]
        if corridor is None:
            ok = np.ones(len(points), bool)
        else:
            ok = np.abs(n_out) <= corridor
        return s_out, n_out, ok


@dataclass
class _Grid:
    nodes: np.ndarray  # arclengths where the heading is evaluated
    weights: np.ndarray  # signed step sizes


def _integration_grid(s0, s1, step):
    """Right-endpoint Euler grid from s0 to s1 with a fractional last step,
    so the map is continuous in s1."""
    span = s1 - s0
    sgn = 1.0 if span >= 0 else -1.0
    n_full = int(abs(span) / step)
    nodes = s0 + sgn * step * np.arange(1, n_full + 1)
    weights = np.full(n_full, sgn * step)
    rem = abs(span) - n_full * step
    if rem > 1e-12:
        nodes = np.append(nodes, s1)
        weights = np.append(weights, sgn * rem)
    return _Grid(nodes=nodes, weights=weights)


def ego_global_pose(spline, ego):
    """Global position of the ego origin."""
    theta_e = spline.heading(ego.s_e)
    return spline.point(ego.s_e) + ego.n_e * unit_normal(theta_e)


def curv_to_cart(pose, ego, spline, step=DEFAULT_STEP):
    """Convert a curvilinear pose (s relative to ego foot-point) to a
    cartesian point in the ego vehicle frame by Euler-integrating the
    centerline heading."""
    if step <= 0:
        raise ValueError("step must be positive")
    s_abs = ego.s_e + pose.s
    spline._check_domain(s_abs)
    delta = spline.euler_displacement(ego.s_e, s_abs, step=step)
    theta_o = spline.heading(s_abs)
    theta_e = spline.heading(ego.s_e)
    rel = delta + pose.n * unit_normal(theta_o) - ego.n_e * unit_normal(theta_e)
    c, s = np.cos(ego.psi_e), np.sin(ego.psi_e)
    return np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1]])


def cart_to_curv(point, ego, spline, corridor=None, refine=2,
                 step=DEFAULT_STEP):
    """Inverse projection of a vehicle-frame point onto the centerline.

    Returns a CurvilinearPose (s relative to ego, n) or None when no
    centerline point lies within ``corridor``.  ``refine`` Newton steps
    invert the forward Euler map itself, making the round trip consistent
    to well below the Euler discretization error.
    """
    point = np.asarray(point, float)
    s, n, ok = cart_to_curv_many(point[None, :], ego, spline,
                                 corridor=corridor)
    if not ok[0]:
        return None
    s_rel, n_off = float(s[0]), float(n[0])
    lo, hi = -ego.s_e, spline.total_length - ego.s_e
    for _ in range(refine):
        s_rel = float(np.clip(s_rel, lo, hi))
        pose = CurvilinearPose(s=s_rel, n=n_off)
        residual = point - curv_to_cart(pose, ego, spline, step=step)
        if np.hypot(*residual) < 1e-10:
            break
        theta_o = spline.heading(ego.s_e + s_rel)
        kappa_o = spline.curvature(ego.s_e + s_rel)
        c, si = np.cos(ego.psi_e), np.sin(ego.psi_e)
        rot = np.array([[c, si], [-si, c]])  # global -> VRF
        tang = rot @ np.array([np.cos(theta_o), np.sin(theta_o)])
        norm = rot @ unit_normal(theta_o)
        jac = np.column_stack(((1.0 - kappa_o * n_off) * tang, norm))
        try:
            ds, dn = np.linalg.solve(jac, residual)
        except np.linalg.LinAlgError:
            break
        s_rel += float(ds)
        n_off += float(dn)
    return CurvilinearPose(s=float(np.clip(s_rel, lo, hi)), n=n_off)


def cart_to_curv_many(points, ego, spline, corridor=None):
    """Vectorized cart_to_curv over an (N, 2) array; returns (s_rel, n, ok)."""
    points = np.atleast_2d(np.asarray(points, float))
    if len(points) == 0:
        return np.empty(0), np.empty(0), np.empty(0, bool)
    c, s = np.cos(ego.psi_e), np.sin(ego.psi_e)
    rot = np.array([[c, -s], [s, c]])
    global_pts = ego_global_pose(spline, ego) + points @ rot.T
    s_abs, n, ok = spline.project(global_pts, corridor=corridor)
    return s_abs - ego.s_e, n, ok


def yaw_to_vrf(s_rel, xi, xi_dot, v, spline, ego):
    """Object yaw and yaw rate relative to the ego vehicle frame."""
    s_abs = ego.s_e + s_rel
    theta_o = spline.heading(s_abs)
    kappa_o = spline.curvature(s_abs)
    psi = wrap_angle(xi + theta_o - ego.psi_e)
    psi_dot = xi_dot + kappa_o * v * np.cos(xi) - ego.psi_dot_e
    return psi, psi_dot


# ---------------------------------------------------------------------------
# Road map file format: one segment per line,
#   s_start a_t b_t c_t d_t a_k b_k c_k d_k length x0 y0 half_width
def save_road(spline, path):
    with open(path, "w") as fh:
        fh.write("# roadmap/1\n")
        for seg in spline.segments:
            vals = [seg.s_start, *seg.coeff_theta, *seg.coeff_kappa,
                    seg.length, *seg.origin, seg.half_width]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def load_road(path):
    segments = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(tok) for tok in line.split()]
            if len(vals) != 13:
                raise ValueError(f"{path}:{lineno}: expected 13 fields, "
                                 f"got {len(vals)}")
            segments.append(RoadSegment(
                s_start=vals[0], coeff_theta=vals[1:5], coeff_kappa=vals[5:9],
                length=vals[9], origin=vals[10:12], half_width=vals[12]))
    return RoadSpline(segments)
