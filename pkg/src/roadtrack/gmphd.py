"""GM-PHD recursion with unscented moment propagation.

The intensity is a list of weighted Gaussians over the 7-dim track state.
Prediction pushes each component through the constant-turn-rate model,
birth components anchor to road FoV entries and to unexplained clusters
from the previous frame, and the update runs one UKF correction per
(component, cluster) pair with the rectangle measurement model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict, replace

import numpy as np
from scipy.linalg import block_diag
from scipy.special import logsumexp

from . import road as rd
from .fusion import MeasurementCluster, ClusterTag
from .measmodel import (bound_groups, measured_side_bounds,
                        plan_association, predict_from_plan,
                        predict_side_bounds, sort_ccw)
from .state import (ANGLE_IDX, STATE_DIM, ObjectState, TrackingMode,
                    clip_extent)

log = logging.getLogger(__name__)

YAW_RATE_EPS = 1e-6
COND_LIMIT = 1e12


@dataclass
class GaussianComponent:
    w: float
    mu: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, float)
        self.P = symmetrize(np.asarray(self.P, float))
        if self.w < 0:
            raise ValueError("component weight must be nonnegative")


@dataclass
class BirthModel:
    road_components: list
    measurement_components: list = field(default_factory=list)

    @property
    def components(self):
        return self.road_components + self.measurement_components

    @property
    def mass(self):
        return sum(c.w for c in self.components)


@dataclass
class FilterConfig:
    p_survival: float = 0.99
    p_detect: float = 0.9
    gamma: float = 8.0  # expected measurements per object
    clutter_rate: float = 3.0  # expected clutter points per frame
    clutter_density: float = 1.0 / 600.0  # 1/m^2 over the surveillance region
    # process noise std per step: s, n, v, xi, xi_dot, L, W
    q_s: float = 0.15
    q_n: float = 0.1
    q_v: float = 0.6
    q_xi: float = 0.03
    q_xi_dot: float = 0.06
    q_extent: float = 0.05
    sigma_r: float = 0.05  # lidar position noise (m)
    sigma_v: float = 0.5  # radar velocity noise (m/s)
    # extra spatial noise absorbing the mismatch between predicted
    # generating points (equal partition of the side) and actual ray hits
    sigma_model: float = 0.15
    ukf_alpha: float = 1e-3
    ukf_beta: float = 2.0
    ukf_kappa: float = 0.0
    prune_threshold: float = 1e-4
    merge_threshold: float = 4.0  # Mahalanobis distance
    max_components: int = 100
    extract_threshold: float = 0.5
    dt: float = 0.1
    mode: TrackingMode = TrackingMode.CURVILINEAR
    delta_s: float = rd.DEFAULT_STEP
    fov_range: float = 80.0
    birth_weight_road: float = 0.03
    birth_weight_meas: float = 0.05
    birth_speed_std: float = 12.0
    birth_extent: tuple = (4.0, 2.0)
    # reject an update whose squared Mahalanobis innovation exceeds this
    # multiple of the measurement dimension (guards against linearization
    # breakdown on wildly mismatched component/cluster pairs)
    gate_maha_per_dim: float = 16.0

    def __post_init__(self):
        self.mode = TrackingMode(self.mode)
        for name in ("p_survival", "p_detect"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        for name in ("gamma", "prune_threshold", "merge_threshold",
                     "extract_threshold", "dt", "delta_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def process_noise(self):
        return np.diag(np.array([self.q_s, self.q_n, self.q_v, self.q_xi,
                                 self.q_xi_dot, self.q_extent,
                                 self.q_extent]) ** 2)

    def measurement_noise(self, fused, n_points=1):
        """Per-point noise block R_k.

        Fused clusters repeat the single radar velocity on every point, so
        the per-copy velocity variance is scaled by the cluster size: the
        joint update is then algebraically identical to using the velocity
        measurement exactly once.
        """
        var_r = self.sigma_r ** 2 + self.sigma_model ** 2
        if fused:
            var_v = self.sigma_v ** 2 * n_points
            return np.diag([var_r, var_r, var_v, var_v])
        return var_r * np.eye(2)

    def to_dict(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        d["birth_extent"] = list(self.birth_extent)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "birth_extent" in d:
            d["birth_extent"] = tuple(d["birth_extent"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# linear algebra helpers
def symmetrize(P):
    return 0.5 * (P + P.T)


def repair_covariance(P, floor=1e-9):
    """Symmetrize and floor eigenvalues so P stays positive definite."""
    P = symmetrize(P)
    vals, vecs = np.linalg.eigh(P)
    if vals[0] >= floor:
        return P
    log.debug("covariance repaired, min eigenvalue %.3e", vals[0])
    vals = np.maximum(vals, floor)
    return symmetrize(vecs @ np.diag(vals) @ vecs.T)


def sigma_points(mu, P, alpha, beta, kappa):
    """Scaled unscented transform points and weights."""
    n = len(mu)
    lam = alpha ** 2 * (n + kappa) - n
    P = repair_covariance(P)
    sqrt = np.linalg.cholesky((n + lam) * P)
    pts = np.vstack([mu, mu + sqrt.T, mu - sqrt.T])
    wm = np.full(2 * n + 1, 1.0 / (2 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1 - alpha ** 2 + beta)
    return pts, wm, wc


def _angular_mean(angles, weights, ref):
    """Weighted mean of angles via wrapped residuals about a reference."""
    return rd.wrap_angle(ref + np.sum(weights * rd.wrap_angle(angles - ref)))


# ---------------------------------------------------------------------------
# motion model
def predict_state(x, dt):
    """Constant-turn-rate step on [pos, pos, v, heading, rate]; extent kept
    constant.  Exact solution of the CTR ODE, with the analytic straight-line
    limit for small turn rates."""
    x = np.asarray(x, float)
    out = np.array(x, float)
    v, xi, xi_dot = x[2], x[3], x[4]
    if abs(xi_dot) < YAW_RATE_EPS:
        out[0] += v * dt * np.cos(xi)
        out[1] += v * dt * np.sin(xi)
    else:
        half = xi_dot * dt / 2.0
        chord = (2.0 / xi_dot) * v * np.sin(half)
        out[0] += chord * np.cos(xi + half)
        out[1] += chord * np.sin(xi + half)
    out[3] = rd.wrap_angle(xi + xi_dot * dt)
    return out


def predict(mixture, birth, config, dt):
    """Survival-scaled UKF propagation of every component plus birth."""
    out = []
    Q = config.process_noise()
    for comp in mixture:
        pts, wm, wc = sigma_points(comp.mu, comp.P, config.ukf_alpha,
                                   config.ukf_beta, config.ukf_kappa)
        prop = np.array([predict_state(p, dt) for p in pts])
        mu = prop.T @ wm
        mu[ANGLE_IDX] = _angular_mean(prop[:, ANGLE_IDX], wm,
                                      comp.mu[ANGLE_IDX])
        dev = prop - mu
        dev[:, ANGLE_IDX] = rd.wrap_angle(dev[:, ANGLE_IDX])
        P = (dev.T * wc) @ dev + Q
        out.append(GaussianComponent(config.p_survival * comp.w, mu,
                                     repair_covariance(P)))
    out.extend(GaussianComponent(c.w, np.array(c.mu), np.array(c.P))
               for c in birth.components)
    return out


# ---------------------------------------------------------------------------
# birth
def _fov_entry_arclengths(spline, ego, fov_range):
    """Arclengths where the road enters the sensor FoV disc: boundaries of
    the maximal in-range intervals of the centerline."""
    tab_s, tab_xy = spline._centerline()
    coarse = slice(None, None, 25)  # 0.25 m resolution is plenty here
    s = tab_s[coarse]
    d = np.linalg.norm(tab_xy[coarse] - rd.ego_global_pose(spline, ego),
                       axis=1)
    inside = d <= fov_range
    if not inside.any():
        return []
    entries = []
    edges = np.flatnonzero(np.diff(inside.astype(int)))
    for e in edges:
        entries.append(float(s[e] if inside[e] else s[e + 1]))
    # spline ends inside the FoV are entry points too
    if inside[0] and s[0] > 1e-9:
        entries.append(float(s[0]))
    if inside[-1] and s[-1] < spline.total_length - 1e-9:
        entries.append(float(s[-1]))
    uniq = []
    for e in sorted(entries):
        if not uniq or e - uniq[-1] > 1.0:
            uniq.append(e)
    return uniq


def make_birth(ego, spline, leftover_clusters, config):
    """Road-geometry birth components plus one per unexplained cluster."""
    L0, W0 = config.birth_extent
    base_cov = np.diag([4.0 ** 2, 2.0 ** 2, config.birth_speed_std ** 2,
                        0.5 ** 2, 0.2 ** 2, 0.75 ** 2, 0.4 ** 2])
    road_comps = []
    for s_entry in _fov_entry_arclengths(spline, ego, config.fov_range):
        if config.mode == TrackingMode.CURVILINEAR:
            mu = np.array([s_entry, 0.0, 0.0, 0.0, 0.0, L0, W0])
        else:
            xy = spline.point(s_entry)
            th = spline.heading(s_entry)
            mu = np.array([xy[0], xy[1], 0.0, th, 0.0, L0, W0])
        road_comps.append(GaussianComponent(config.birth_weight_road, mu,
                                            base_cov.copy()))
    meas_comps = []
    meas_cov = np.diag([1.5 ** 2, 1.0 ** 2, config.birth_speed_std ** 2,
                        0.5 ** 2, 0.2 ** 2, 0.75 ** 2, 0.4 ** 2])
    for cluster in leftover_clusters:
        centroid = cluster.centroid
        # The lidar only sees near faces, so the cluster centroid sits on
        # the body outline rather than at its center; push the birth mean
        # away from the sensor by roughly half a body depth so the first
        # update shifts position instead of crushing the extent.
        radial = np.linalg.norm(centroid)
        if radial > 1e-6:
            centroid = centroid * (1.0 + 1.0 / radial)
        pose = rd.cart_to_curv(centroid, ego, spline)
        if pose is None:
            continue
        s_abs = ego.s_e + pose.s
        if not (0 <= s_abs <= spline.total_length) or \
                abs(pose.n) > spline.half_width(np.clip(s_abs, 0,
                                                        spline.total_length)):
            continue
        if config.mode == TrackingMode.CURVILINEAR:
            mu = np.array([s_abs, pose.n, 0.0, 0.0, 0.0, L0, W0])
        else:
            th = spline.heading(s_abs)
            xy = spline.point(s_abs) + pose.n * rd.unit_normal(th)
            mu = np.array([xy[0], xy[1], 0.0, th, 0.0, L0, W0])
        meas_comps.append(GaussianComponent(config.birth_weight_meas, mu,
                                            meas_cov.copy()))
    return BirthModel(road_components=road_comps,
                      measurement_components=meas_comps)


# ---------------------------------------------------------------------------
# update
def ukf_update_component(comp, cluster, config, spline, ego,
                         meas_fn=None):
    """One UKF correction of a component against a cluster.

    Returns (updated component without weight bookkeeping, log N(z; y, S)).
    ``meas_fn`` overrides the rectangle measurement model (used by tests to
    inject a linear map).
    """
    pts_sorted, _ = sort_ccw(cluster.points)
    fused = cluster.is_fused
    internal_model = meas_fn is None
    z = pts_sorted.ravel()
    R_k = config.measurement_noise(fused, n_points=len(pts_sorted))
    R_C = np.kron(np.eye(len(pts_sorted)), R_k)
    if meas_fn is None:
        plan = plan_association(clip_extent(comp.mu), pts_sorted, spline,
                                ego, mode=config.mode, step=config.delta_s)
        # Append the covered-interval bounds as bearing pseudo-measurements
        # of the associated side's end corners; these carry the extent
        # information (see predict_side_bounds).
        z = np.concatenate([z, measured_side_bounds(plan)])
        bvar = [g.bear_var for g in bound_groups(plan)]
        if bvar:
            R_C = block_diag(R_C, np.diag(np.repeat(bvar, 2)))

        def meas_fn(xv):
            xc = clip_extent(xv)
            return np.concatenate([
                predict_from_plan(xc, plan, spline, ego,
                                  mode=config.mode, step=config.delta_s),
                predict_side_bounds(xc, plan, spline, ego,
                                    mode=config.mode, step=config.delta_s)])
    chi, wm, wc = sigma_points(comp.mu, comp.P, config.ukf_alpha,
                               config.ukf_beta, config.ukf_kappa)
    zeta = np.array([meas_fn(p) for p in chi])
    y_hat = zeta.T @ wm
    dz = zeta - y_hat
    innov = z - y_hat
    n_pt = len(pts_sorted)
    pdim = R_k.shape[0]
    rejected = GaussianComponent(comp.w, np.array(comp.mu),
                                 np.array(comp.P))
    # A clutter return swept into the cluster gate can blow the innovation
    # through the Mahalanobis gate even though every other point fits.  On
    # gate failure, de-weight the single worst-fitting point and retry
    # rather than dropping the whole update (rectangle model only).
    for attempt in range(3):
        S = symmetrize((dz.T * wc) @ dz + R_C)
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            log.warning("ill-conditioned innovation covariance (cond "
                        "%.2e); update rejected", cond)
            return rejected, -np.inf
        maha = innov @ np.linalg.solve(S, innov)
        if maha <= config.gate_maha_per_dim * len(z):
            break
        if not internal_model or attempt == 2:
            return rejected, -np.inf
        resid = (innov[:n_pt * pdim] ** 2 /
                 np.diag(R_C)[:n_pt * pdim]).reshape(n_pt, pdim).sum(1)
        worst = int(np.argmax(resid))
        sl = slice(worst * pdim, (worst + 1) * pdim)
        R_C[sl, sl] *= 1e4
    dx = chi - comp.mu
    dx[:, ANGLE_IDX] = rd.wrap_angle(dx[:, ANGLE_IDX])
    T = (dx.T * wc) @ dz
    K = np.linalg.solve(S.T, T.T).T  # T S^-1
    mu = comp.mu + K @ innov
    mu[ANGLE_IDX] = rd.wrap_angle(mu[ANGLE_IDX])
    mu = clip_extent(mu)
    P = repair_covariance(comp.P - K @ S @ K.T)
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        return rejected, -np.inf
    loglik = -0.5 * (len(z) * np.log(2 * np.pi) + logdet + maha)
    return GaussianComponent(comp.w, mu, P), float(loglik)


def missed_detection_factor(config):
    """Effective no-detection weight scale under the Poisson
    measurement-number model."""
    return 1.0 - config.p_detect * (1.0 - np.exp(-config.gamma))


def update(mixture, clusters, config, spline, ego):
    """PHD update: no-detection copies plus per-cluster corrected terms."""
    nd = missed_detection_factor(config)
    out = [GaussianComponent(nd * c.w, np.array(c.mu), np.array(c.P))
           for c in mixture]
    if not mixture:
        return out
    for cluster in clusters:
        m = len(cluster.points)
        log_gamma_term = -config.gamma + m * np.log(config.gamma)
        log_clutter = -m * np.log(config.clutter_rate *
                                  config.clutter_density)
        updated, lognums = [], []
        for comp in mixture:
            comp_u, loglik = ukf_update_component(comp, cluster, config,
                                                  spline, ego)
            updated.append(comp_u)
            if comp.w <= 0 or not np.isfinite(loglik):
                lognums.append(-np.inf)
            else:
                lognums.append(np.log(config.p_detect) + np.log(comp.w) +
                               log_gamma_term + loglik + log_clutter)
        lognums = np.array(lognums)
        terms = lognums if m != 1 else np.append(lognums, 0.0)
        if not np.isfinite(terms).any():
            log.warning("cluster with %d points matched no component; "
                        "contributing no detection evidence", m)
            continue
        logden = logsumexp(terms)
        weights = np.exp(lognums - logden)
        for comp_u, w in zip(updated, weights):
            if w > 0:
                out.append(GaussianComponent(w, comp_u.mu, comp_u.P))
    return out


# ---------------------------------------------------------------------------
# reduction / extraction
def reduce(mixture, config):
    """Prune low weights, merge nearby components, cap the count."""
    kept = [c for c in mixture if c.w >= config.prune_threshold]
    kept.sort(key=lambda c: c.w, reverse=True)
    merged = []
    used = np.zeros(len(kept), bool)
    for i, leader in enumerate(kept):
        if used[i]:
            continue
        group = [leader]
        Pinv = np.linalg.inv(leader.P)
        for j in range(i + 1, len(kept)):
            if used[j]:
                continue
            d = kept[j].mu - leader.mu
            d[ANGLE_IDX] = rd.wrap_angle(d[ANGLE_IDX])
            if np.sqrt(d @ Pinv @ d) <= config.merge_threshold:
                group.append(kept[j])
                used[j] = True
        used[i] = True
        merged.append(_moment_merge(group, leader.mu))
    merged.sort(key=lambda c: c.w, reverse=True)
    return merged[:config.max_components]


def _moment_merge(group, ref_mu):
    w = sum(c.w for c in group)
    mu = np.zeros(STATE_DIM)
    for c in group:
        d = c.mu - ref_mu
        d[ANGLE_IDX] = rd.wrap_angle(d[ANGLE_IDX])
        mu += c.w * (ref_mu + d)
    mu /= w
    mu[ANGLE_IDX] = rd.wrap_angle(mu[ANGLE_IDX])
    P = np.zeros((STATE_DIM, STATE_DIM))
    for c in group:
        d = c.mu - mu
        d[ANGLE_IDX] = rd.wrap_angle(d[ANGLE_IDX])
        P += c.w * (c.P + np.outer(d, d))
    return GaussianComponent(w, mu, symmetrize(P / w))


def extract(mixture, config):
    """Components above the extraction threshold, each reported once, plus
    the expected cardinality round(sum of weights)."""
    estimates = [(ObjectState.from_vector(c.mu), np.array(c.P))
                 for c in mixture if c.w > config.extract_threshold]
    cardinality = int(round(sum(c.w for c in mixture)))
    return estimates, cardinality


# ---------------------------------------------------------------------------
@dataclass
class StepResult:
    estimates: list
    cardinality: int
    mixture: list


class PhdFilter:
    """Single-writer GM-PHD tracker; step() must be externally serialized."""

    def __init__(self, config, spline):
        self.config = config
        self.spline = spline
        self.mixture = []
        self._last_t = None

    def step(self, clusters, ego, t, leftover_clusters=()):
        if self._last_t is not None and t <= self._last_t:
            raise ValueError(f"non-monotonic timestamp {t} (last "
                             f"{self._last_t})")
        first = self._last_t is None
        dt = self.config.dt if first else t - self._last_t
        self._last_t = t
        if first and not leftover_clusters:
            # Bootstrap: no previous frame exists to seed measurement
            # births, so the very first frame seeds them itself.
            leftover_clusters = clusters
        birth = make_birth(ego, self.spline, leftover_clusters, self.config)
        self.mixture = predict(self.mixture, birth, self.config, dt)
        if clusters:
            self.mixture = update(self.mixture, clusters, self.config,
                                  self.spline, ego)
        self.mixture = reduce(self.mixture, self.config)
        estimates, card = extract(self.mixture, self.config)
        return StepResult(estimates=estimates, cardinality=card,
                          mixture=self.mixture)

    @property
    def mass(self):
        return sum(c.w for c in self.mixture)
