"""Track state representation and conversions into the ego vehicle frame.

The 7-dim state is [s, n, v, xi, xi_dot, L, W].  In curvilinear mode s, n
are road coordinates (s absolute along the map) and xi is the heading
relative to the local tangent.  In the cartesian baseline mode the same
slots hold [x, y, v, psi, psi_dot, L, W] in the fixed global frame and the
road conversion drops out of the measurement model.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import road as rd

STATE_DIM = 7
ANGLE_IDX = 3  # xi (or global yaw in cartesian mode)

LENGTH_FLOOR, LENGTH_CEIL = 0.5, 15.0
WIDTH_FLOOR, WIDTH_CEIL = 0.5, 15.0


class TrackingMode(str, Enum):
    CURVILINEAR = "curvilinear"
    CARTESIAN = "cartesian_baseline"


@dataclass
class ObjectState:
    s: float
    n: float
    v: float
    xi: float
    xi_dot: float
    length: float
    width: float

    def as_vector(self):
        return np.array([self.s, self.n, self.v, self.xi, self.xi_dot,
                         self.length, self.width])

    @classmethod
    def from_vector(cls, x):
        return cls(*(float(v) for v in x))


def clip_arclength(s, spline):
    """Keep an absolute arclength on the mapped road extent.

    Sigma points and constant-turn-rate prediction can momentarily push a
    state past a spline end; the end pose is the best available answer
    there."""
    return float(np.clip(s, 0.0, spline.total_length))


def clip_extent(x):
    """Clip the L/W slots of a state vector to sane bounds (in place copy)."""
    x = np.array(x, float)
    x[5] = np.clip(x[5], LENGTH_FLOOR, LENGTH_CEIL)
    x[6] = np.clip(x[6], WIDTH_FLOOR, WIDTH_CEIL)
    return x


def state_to_vrf(x, spline, ego, mode=TrackingMode.CURVILINEAR,
                 step=rd.DEFAULT_STEP):
    """Map a state vector to (center_xy, yaw, yaw_rate, vel_xy) in the ego
    vehicle frame."""
    x = np.asarray(x, float)
    if mode == TrackingMode.CURVILINEAR:
        s_abs = clip_arclength(x[0], spline)
        pose = rd.CurvilinearPose(s=s_abs - ego.s_e, n=x[1])
        center = rd.curv_to_cart(pose, ego, spline, step=step)
        psi, psi_dot = rd.yaw_to_vrf(s_abs - ego.s_e, x[3], x[4], x[2],
                                     spline, ego)
    else:
        ego_xy = rd.ego_global_pose(spline, ego)
        c, s = np.cos(ego.psi_e), np.sin(ego.psi_e)
        d = x[:2] - ego_xy
        center = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
        psi = rd.wrap_angle(x[3] - ego.psi_e)
        psi_dot = x[4] - ego.psi_dot_e
    vel = x[2] * np.array([np.cos(psi), np.sin(psi)])
    return center, float(psi), float(psi_dot), vel


def vrf_to_state_position(point, spline, ego, mode=TrackingMode.CURVILINEAR,
                          corridor=None):
    """Positional slots (s, n) or (x, y) for a vehicle-frame point; None when
    the point cannot be projected onto the road."""
    if mode == TrackingMode.CURVILINEAR:
        pose = rd.cart_to_curv(np.asarray(point, float), ego, spline,
                               corridor=corridor)
        if pose is None:
            return None
        return np.array([ego.s_e + pose.s, pose.n])
    c, s = np.cos(ego.psi_e), np.sin(ego.psi_e)
    rot = np.array([[c, -s], [s, c]])
    return rd.ego_global_pose(spline, ego) + rot @ np.asarray(point, float)
