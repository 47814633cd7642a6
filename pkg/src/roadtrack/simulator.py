"""Deterministic 2D driving-scenario generator.

Builds fixture roads from waypoints, propagates ego and obstacle
trajectories in road coordinates, ray-casts lidar returns off rectangle
surfaces with occlusion, synthesizes radar detections and clutter, and
emits exact ground truth per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import road as rd
from .measmodel import OrientedRectangle
from .state import ObjectState

KNOT_SPACING = 3.0  # m between heading-spline knots
TRUTH_SUBSTEP = 1e-3  # s, lane-change quadrature resolution


class ScenarioError(ValueError):
    """Invalid scenario specification."""


# ---------------------------------------------------------------------------
# road construction
def fit_road(waypoints, half_width=4.0):
    """Fit a piecewise-cubic heading spline through 2D waypoints.

    Heading and curvature are continuous at joints by construction; the
    integrated centerline passes within 0.1 m of each waypoint.
    """
    wp = np.atleast_2d(np.asarray(waypoints, float))
    if len(wp) < 2:
        raise ScenarioError("need at least 2 waypoints")
    chords = np.diff(wp, axis=0)
    chord_len = np.hypot(chords[:, 0], chords[:, 1])
    if np.any(chord_len < 1e-6):
        raise ScenarioError("coincident consecutive waypoints")
    if len(chords) > 1:
        turn = np.abs(rd.wrap_angle(np.diff(np.arctan2(chords[:, 1],
                                                       chords[:, 0]))))
        if np.any(turn > np.radians(80.0)):
            raise ScenarioError(
                f"kinked waypoint sequence (max turn "
                f"{np.degrees(turn.max()):.1f} deg between chords)")
    t = np.concatenate(([0.0], np.cumsum(chord_len)))
    if len(wp) == 2:
        # straight road: single segment
        theta = np.arctan2(chords[0, 1], chords[0, 0])
        seg = rd.RoadSegment(s_start=0.0, coeff_theta=[0, 0, 0, theta],
                             coeff_kappa=[0, 0, 0, 0.0],
                             length=float(chord_len[0]), origin=wp[0],
                             half_width=half_width)
        return rd.RoadSpline([seg])
    sx = CubicSpline(t, wp[:, 0])
    sy = CubicSpline(t, wp[:, 1])
    tt = np.linspace(0.0, t[-1], max(int(t[-1] / 0.05), 200))
    xy = np.column_stack((sx(tt), sy(tt)))
    ds = np.hypot(*np.diff(xy, axis=0).T)
    s_dense = np.concatenate(([0.0], np.cumsum(ds)))
    theta_dense = np.unwrap(np.arctan2(sy(tt, 1), sx(tt, 1)))
    total = s_dense[-1]
    n_knots = max(int(total / KNOT_SPACING), 2)
    knot_s = np.linspace(0.0, total, n_knots + 1)
    knot_theta = np.interp(knot_s, s_dense, theta_dense)
    theta_spline = CubicSpline(knot_s, knot_theta)
    segments = []
    origin = wp[0].copy()
    for i in range(len(knot_s) - 1):
        coeff = theta_spline.c[:, i]
        length = knot_s[i + 1] - knot_s[i]
        kappa = np.concatenate(([0.0], np.polyder(coeff)))
        segments.append(rd.RoadSegment(
            s_start=float(knot_s[i]), coeff_theta=coeff, coeff_kappa=kappa,
            length=float(length), origin=origin.copy(),
            half_width=half_width))
        grid = rd._integration_grid(0.0, length, rd.DEFAULT_STEP)
        th = np.polyval(coeff, grid.nodes)
        origin = origin + np.array([np.sum(grid.weights * np.cos(th)),
                                    np.sum(grid.weights * np.sin(th))])
    spline = rd.RoadSpline(segments)
    wp_s = np.interp(t, tt, s_dense)  # waypoint arclengths
    fitted = spline.point(np.clip(wp_s, 0, total))
    err = np.linalg.norm(fitted - wp, axis=1)
    if err.max() > 0.1:
        raise ScenarioError(
            f"fitted centerline misses a waypoint by {err.max():.3f} m")
    return spline


# ---------------------------------------------------------------------------
# maneuvers and truth propagation
@dataclass
class CtrSegment:
    duration: float
    yaw_rate: float

    def to_dict(self):
        return {"type": "ctr", "duration": self.duration,
                "yaw_rate": self.yaw_rate}


@dataclass
class LaneChange:
    duration: float
    target_n: float

    def to_dict(self):
        return {"type": "lane_change", "duration": self.duration,
                "target_n": self.target_n}


def maneuver_from_dict(d):
    if d["type"] == "ctr":
        return CtrSegment(duration=d["duration"], yaw_rate=d["yaw_rate"])
    if d["type"] == "lane_change":
        return LaneChange(duration=d["duration"], target_n=d["target_n"])
    raise ScenarioError(f"unknown maneuver type {d['type']!r}")


def _quintic(tau):
    """Smoothstep with zero first/second derivatives at both ends."""
    return 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5


def _quintic_dot(tau):
    return 30 * tau ** 2 - 60 * tau ** 3 + 30 * tau ** 4


class ObstacleTrajectory:
    """Exact truth states for one obstacle over a maneuver schedule.

    CTR segments use the closed-form constant-turn-rate solution; lane
    changes follow a quintic lateral profile at constant speed.
    """

    def __init__(self, initial_state, maneuvers, horizon):
        self._pieces = []  # (t0, t1, state0 at t0, maneuver)
        state = np.asarray(initial_state, float).copy()
        t0 = 0.0
        maneuvers = list(maneuvers) or [CtrSegment(horizon, 0.0)]
        for m in maneuvers:
            self._pieces.append((t0, t0 + m.duration, state.copy(), m))
            state = self._advance(state, m, m.duration)
            t0 += m.duration
        if t0 < horizon:
            self._pieces.append((t0, horizon, state.copy(),
                                 CtrSegment(horizon - t0, 0.0)))

    @staticmethod
    def _ctr_at(state, yaw_rate, tau):
        x = state.copy()
        x[4] = yaw_rate
        from .gmphd import predict_state
        return predict_state(x, tau) if tau > 0 else x

    @staticmethod
    def _lane_at(state, man, tau):
        x = state.copy()
        v = x[2]
        n0, n1 = x[1], man.target_n
        T = man.duration
        u = np.clip(tau / T, 0.0, 1.0)
        n = n0 + (n1 - n0) * _quintic(u)
        n_dot = (n1 - n0) * _quintic_dot(u) / T
        n_dot = np.clip(n_dot, -abs(v) * 0.99, abs(v) * 0.99)
        s_dot = np.sqrt(max(v * v - n_dot * n_dot, 0.0))
        # s advances by quadrature of sqrt(v^2 - n_dot^2)
        ts = np.arange(0.0, tau + TRUTH_SUBSTEP / 2, TRUTH_SUBSTEP)
        uu = np.clip(ts / T, 0.0, 1.0)
        nd = np.clip((n1 - n0) * _quintic_dot(uu) / T,
                     -abs(v) * 0.99, abs(v) * 0.99)
        sd = np.sqrt(np.maximum(v * v - nd * nd, 0.0))
        x[0] = state[0] + np.trapezoid(sd, ts) if len(ts) > 1 else state[0]
        x[1] = n
        x[3] = np.arctan2(n_dot, s_dot)
        eps = 1e-4
        u2 = np.clip((tau + eps) / T, 0.0, 1.0)
        nd2 = np.clip((n1 - n0) * _quintic_dot(u2) / T,
                      -abs(v) * 0.99, abs(v) * 0.99)
        xi2 = np.arctan2(nd2, np.sqrt(max(v * v - nd2 * nd2, 0.0)))
        x[4] = rd.wrap_angle(xi2 - x[3]) / eps
        return x

    @classmethod
    def _advance(cls, state, man, tau):
        if isinstance(man, CtrSegment):
            return cls._ctr_at(state, man.yaw_rate, tau)
        return cls._lane_at(state, man, tau)

    def state_at(self, t):
        for t0, t1, s0, man in self._pieces:
            if t <= t1 or (t0, t1, s0, man) is self._pieces[-1]:
                if t >= t0:
                    return self._advance(s0, man, t - t0)
        raise ValueError(f"time {t} before trajectory start")


# ---------------------------------------------------------------------------
@dataclass
class SensorSpec:
    lidar_fov_deg: float = 360.0
    lidar_range: float = 80.0
    lidar_res_deg: float = 0.5
    lidar_rate: float = 10.0
    sigma_r: float = 0.05
    radar_rate: float = 14.0
    radar_sigma_v: float = 0.5
    radar_sigma_pos: float = 1.0
    radar_p_detect: float = 0.9
    clutter_rate: float = 3.0

    def __post_init__(self):
        if self.lidar_rate <= 0 or self.radar_rate <= 0:
            raise ScenarioError("sensor rates must be positive")
        if not 0 < self.lidar_fov_deg <= 360:
            raise ScenarioError("lidar FoV must lie in (0, 360] degrees")


@dataclass
class ObstacleSpec:
    initial_state: list  # [s, n, v, xi, xi_dot, L, W], absolute s
    maneuvers: list = field(default_factory=list)


@dataclass
class EgoSpec:
    s0: float = 0.0
    n: float = 0.0
    speed: float = 10.0


@dataclass
class ScenarioSpec:
    waypoints: list
    half_width: float = 4.0
    ego: EgoSpec = field(default_factory=EgoSpec)
    obstacles: list = field(default_factory=list)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    duration: float = 10.0
    seed: int = 0
    name: str = "scenario"

    def to_dict(self):
        return {
            "name": self.name,
            "waypoints": np.asarray(self.waypoints, float).tolist(),
            "half_width": self.half_width,
            "ego": {"s0": self.ego.s0, "n": self.ego.n,
                    "speed": self.ego.speed},
            "obstacles": [{"initial_state": list(map(float,
                                                     o.initial_state)),
                           "maneuvers": [m.to_dict() for m in o.maneuvers]}
                          for o in self.obstacles],
            "sensor": {k: getattr(self.sensor, k)
                       for k in SensorSpec.__dataclass_fields__},
            "duration": self.duration,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            obstacles = [ObstacleSpec(
                initial_state=o["initial_state"],
                maneuvers=[maneuver_from_dict(m)
                           for m in o.get("maneuvers", [])])
                for o in d.get("obstacles", [])]
            return cls(
                waypoints=d["waypoints"],
                half_width=d.get("half_width", 4.0),
                ego=EgoSpec(**d.get("ego", {})),
                obstacles=obstacles,
                sensor=SensorSpec(**d.get("sensor", {})),
                duration=d.get("duration", 10.0),
                seed=d.get("seed", 0),
                name=d.get("name", "scenario"))
        except KeyError as exc:
            raise ScenarioError(f"missing scenario field: {exc}") from exc


@dataclass
class ScenarioFrame:
    t: float
    ego: rd.EgoPose
    truths: list  # ObjectState, absolute s
    truth_vrf: np.ndarray  # (N, 5): x, y, yaw, vx, vy per truth
    lidar_points: np.ndarray  # (M, 2) noisy returns + clutter
    lidar_labels: np.ndarray  # (M,) obstacle index or -1 for clutter
    lidar_clean: np.ndarray  # (M, 2) pre-noise surface points
    radar_dets: np.ndarray  # (K, 4): x, y, vx, vy
    lidar_present: bool = True


# ---------------------------------------------------------------------------
def _truth_vrf(state, spline, ego):
    """Exact vehicle-frame center/yaw/velocity of a truth state."""
    x = np.asarray(state, float)
    theta_o = spline.heading(x[0])
    kappa_o = spline.curvature(x[0])
    center_g = spline.point(x[0]) + x[1] * rd.unit_normal(theta_o)
    ego_g = rd.ego_global_pose(spline, ego)
    c, s = np.cos(ego.psi_e), np.sin(ego.psi_e)
    d = center_g - ego_g
    center = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
    yaw = rd.wrap_angle(x[3] + theta_o - ego.psi_e)
    s_dot = x[2] * np.cos(x[3])
    n_dot = x[2] * np.sin(x[3])
    tang = np.array([np.cos(theta_o), np.sin(theta_o)])
    vel_g = s_dot * (1.0 - kappa_o * x[1]) * tang + \
        n_dot * rd.unit_normal(theta_o)
    vel = np.array([c * vel_g[0] + s * vel_g[1],
                    -s * vel_g[0] + c * vel_g[1]])
    return center, float(yaw), vel


def raycast_lidar(rects, sensor, rng):
    """Ray-cast returns off oriented rectangles with occlusion.

    Returns (noisy_points, labels, clean_points).
    """
    half_fov = np.radians(sensor.lidar_fov_deg) / 2
    n_rays = max(int(np.radians(sensor.lidar_fov_deg) /
                     np.radians(sensor.lidar_res_deg)), 1)
    angles = -half_fov + np.radians(sensor.lidar_res_deg) * np.arange(n_rays)
    dirs = np.column_stack((np.cos(angles), np.sin(angles)))
    t_hit = np.full(n_rays, np.inf)
    hit_obj = np.full(n_rays, -1)
    for k, rect in enumerate(rects):
        c, s = np.cos(rect.yaw), np.sin(rect.yaw)
        rot = np.array([[c, s], [-s, c]])  # world -> rect frame
        o = rot @ (-rect.center)
        d = dirs @ rot.T
        half = np.array([rect.length / 2, rect.width / 2])
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[None, :] - o) / d
            t2 = (half[None, :] - o) / d
        t_lo = np.minimum(t1, t2)
        t_hi = np.maximum(t1, t2)
        # rays parallel to a slab: inside-check via the offset
        par = np.abs(d) < 1e-12
        t_lo[par] = np.where(np.abs(o)[None, :].repeat(n_rays, 0)[par] <=
                             half[None, :].repeat(n_rays, 0)[par],
                             -np.inf, np.inf)
        t_hi[par] = np.where(t_lo[par] == -np.inf, np.inf, -np.inf)
        t_near = np.max(t_lo, axis=1)
        t_far = np.min(t_hi, axis=1)
        valid = (t_near <= t_far) & (t_near > 1e-9) & \
            (t_near <= sensor.lidar_range)
        closer = valid & (t_near < t_hit)
        t_hit[closer] = t_near[closer]
        hit_obj[closer] = k
    mask = hit_obj >= 0
    clean = dirs[mask] * t_hit[mask, None]
    labels = hit_obj[mask]
    noisy = clean + rng.normal(0.0, sensor.sigma_r, clean.shape)
    return noisy, labels, clean


def gen_radar(truth_vrf, sensor, rng):
    """One noisy detection per visible truth; dropout per detection prob."""
    dets = []
    for row in np.atleast_2d(truth_vrf):
        center, vel = row[:2], row[3:5]
        r = np.hypot(*center)
        bearing = np.arctan2(center[1], center[0])
        if r > sensor.lidar_range or \
                abs(bearing) > np.radians(sensor.lidar_fov_deg) / 2:
            continue
        drop = rng.uniform() >= sensor.radar_p_detect
        pos = center + rng.normal(0.0, sensor.radar_sigma_pos, 2)
        v = vel + rng.normal(0.0, sensor.radar_sigma_v, 2)
        if drop:
            continue
        dets.append(np.concatenate([pos, v]))
    return np.array(dets) if dets else np.empty((0, 4))


def _gen_clutter(spline, ego, sensor, rng):
    lam = sensor.clutter_rate
    count = rng.poisson(lam) if lam > 0 else 0
    pts = []
    tries = 0
    while len(pts) < count and tries < count * 200:
        tries += 1
        r = sensor.lidar_range * np.sqrt(rng.uniform())
        half_fov = np.radians(sensor.lidar_fov_deg) / 2
        phi = rng.uniform(-half_fov, half_fov)
        p = r * np.array([np.cos(phi), np.sin(phi)])
        pose = rd.cart_to_curv(p, ego, spline, corridor=spline.half_width(
            np.clip(ego.s_e, 0, spline.total_length)))
        if pose is None:
            continue
        s_abs = ego.s_e + pose.s
        if 0 <= s_abs <= spline.total_length and \
                abs(pose.n) <= spline.half_width(s_abs):
            pts.append(p)
    return np.array(pts) if pts else np.empty((0, 2))


def run_scenario(spec):
    """Generate the deterministic frame stream for a scenario spec."""
    spline = fit_road(spec.waypoints, half_width=spec.half_width)
    rng = np.random.default_rng(spec.seed)
    horizon = spec.duration
    trajectories = [ObstacleTrajectory(o.initial_state, o.maneuvers, horizon)
                    for o in spec.obstacles]
    lidar_dt = 1.0 / spec.sensor.lidar_rate
    radar_dt = 1.0 / spec.sensor.radar_rate
    n_frames = int(round(horizon / lidar_dt))
    radar_times = np.arange(0.0, horizon + radar_dt / 2, radar_dt)

    def ego_at(t):
        s_e = spec.ego.s0 + spec.ego.speed * t
        s_e = np.clip(s_e, 0.0, spline.total_length)
        return rd.EgoPose.on_road(spline, float(s_e), n_e=spec.ego.n,
                                  v_e=spec.ego.speed)

    frames = []
    for i in range(n_frames):
        t = i * lidar_dt
        ego = ego_at(t)
        truths, vrf_rows, rects, off_road = [], [], [], False
        for traj in trajectories:
            x = traj.state_at(t)
            if not (0.0 <= x[0] <= spline.total_length):
                continue
            if abs(x[1]) > spline.half_width(x[0]):
                off_road = True
            center, yaw, vel = _truth_vrf(x, spline, ego)
            truths.append(ObjectState.from_vector(x))
            vrf_rows.append([center[0], center[1], yaw, vel[0], vel[1]])
            rects.append(OrientedRectangle(center=center, yaw=yaw,
                                           length=x[5], width=x[6]))
        noisy, labels, clean = raycast_lidar(rects, spec.sensor, rng)
        clutter = _gen_clutter(spline, ego, spec.sensor, rng)
        if len(clutter):
            noisy = np.vstack([noisy, clutter]) if len(noisy) else clutter
            labels = np.concatenate([labels, np.full(len(clutter), -1)])
            clean = np.vstack([clean, clutter]) if len(clean) else clutter
        # nearest radar sample to this lidar timestamp
        j = int(np.argmin(np.abs(radar_times - t)))
        radar = np.empty((0, 4))
        if abs(radar_times[j] - t) <= lidar_dt / 2 and trajectories:
            tr = radar_times[j]
            rows = []
            # truth sampled at the radar timestamp, expressed in the
            # lidar-frame VRF (fusion compensates ego motion)
            for traj in trajectories:
                xr = traj.state_at(tr)
                if not (0.0 <= xr[0] <= spline.total_length):
                    continue
                center, yaw, vel = _truth_vrf(xr, spline, ego)
                rows.append([center[0], center[1], yaw, vel[0], vel[1]])
            if rows:
                radar = gen_radar(np.array(rows), spec.sensor, rng)
        frames.append(ScenarioFrame(
            t=t, ego=ego, truths=truths,
            truth_vrf=np.array(vrf_rows) if vrf_rows else np.empty((0, 5)),
            lidar_points=noisy if len(noisy) else np.empty((0, 2)),
            lidar_labels=np.asarray(labels, int) if len(labels)
            else np.empty(0, int),
            lidar_clean=clean if len(clean) else np.empty((0, 2)),
            radar_dets=radar, lidar_present=True))
    return spline, frames


# ---------------------------------------------------------------------------
# fixture scenarios
def straight_follow(seed=0, duration=15.0):
    """Straight road, ego following a slightly offset obstacle at 18 m/s."""
    wp = [(0.0, 0.0), (500.0, 0.0)]
    return ScenarioSpec(
        name="straight_follow", waypoints=wp, half_width=4.0,
        ego=EgoSpec(s0=5.0, n=0.0, speed=15.0),
        obstacles=[ObstacleSpec(
            initial_state=[30.0, 1.0, 18.0, 0.0, 0.0, 4.8, 2.0])],
        duration=duration, seed=seed)


def curve_follow(seed=0, duration=15.0):
    """Constant-curvature road (R = 100 m)."""
    ang = np.linspace(0.0, 3.5, 60)
    wp = [(100 * np.sin(a), 100 * (1 - np.cos(a))) for a in ang]
    return ScenarioSpec(
        name="curve_follow", waypoints=wp, half_width=4.0,
        ego=EgoSpec(s0=5.0, n=0.0, speed=15.0),
        obstacles=[ObstacleSpec(
            initial_state=[30.0, 0.8, 18.0, 0.0, 0.0, 4.8, 2.0])],
        duration=duration, seed=seed)


def s_curve(seed=0, duration=30.0):
    """High-curvature S-bends, single obstacle near 18 m/s."""
    s = np.linspace(0.0, 700.0, 240)
    # heading oscillates; curvature peaks ~0.035 1/m
    theta = 0.9 * np.sin(s / 45.0) * np.exp(-s / 900.0)
    x = np.concatenate(([0.0], np.cumsum(np.diff(s) * np.cos(theta[1:]))))
    y = np.concatenate(([0.0], np.cumsum(np.diff(s) * np.sin(theta[1:]))))
    wp = list(zip(x[::6], y[::6]))
    return ScenarioSpec(
        name="s_curve", waypoints=wp, half_width=4.0,
        ego=EgoSpec(s0=5.0, n=0.0, speed=18.0),
        obstacles=[ObstacleSpec(
            initial_state=[30.0, 0.8, 18.0, 0.0, 0.0, 4.8, 2.0])],
        duration=duration, seed=seed)


def bifurcation(seed=0, duration=8.0):
    """Hairpin road: the FoV disc clips the road into two branches, giving
    one birth entry per branch; an obstacle enters on the far branch."""
    radius = 26.0
    out_len = 90.0
    ang = np.linspace(0.0, np.pi, 40)
    wp = [(x, 0.0) for x in np.linspace(0.0, out_len, 12)]
    wp += [(out_len + radius * np.sin(a), radius * (1 - np.cos(a)))
           for a in ang[1:]]
    wp += [(x, 2 * radius) for x in np.linspace(out_len, -40.0, 16)]
    sensor = SensorSpec(lidar_range=60.0, clutter_rate=1.0)
    return ScenarioSpec(
        name="bifurcation", waypoints=wp, half_width=4.0,
        ego=EgoSpec(s0=8.0, n=0.0, speed=0.0),
        obstacles=[ObstacleSpec(
            # starts on the return branch just outside the FoV disc and
            # drives through it
            initial_state=[200.0, 0.0, 14.0, 0.0, 0.0, 4.8, 2.0])],
        sensor=sensor, duration=duration, seed=seed)


FIXTURES = {
    "straight_follow": straight_follow,
    "curve_follow": curve_follow,
    "s_curve": s_curve,
    "bifurcation": bifurcation,
}
