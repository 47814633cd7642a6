"""Multi-object evaluation: GOSPA with decomposition and RMSE helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .road import wrap_angle

DEFAULT_C = 10.0
DEFAULT_P = 2
DEFAULT_ALPHA = 2.0


@dataclass
class GospaResult:
    total: float
    localization: float  # (sum of assigned d^p) ** (1/p)
    missed: float  # (c^p/alpha * n_missed) ** (1/p)
    false_alarm: float
    n_missed: int
    n_false: int
    assignment: list  # (estimate index, truth index) pairs
    p: int = DEFAULT_P

    @property
    def decomposition_p(self):
        """localization^p + missed^p + false^p (= total^p)."""
        return (self.localization ** self.p + self.missed ** self.p +
                self.false_alarm ** self.p)


def gospa(estimates, truths, p=DEFAULT_P, c=DEFAULT_C, alpha=DEFAULT_ALPHA):
    """GOSPA between two point sets (each an (N, 2) array or list of pairs).

    The localization / missed / false_alarm fields hold the p-th power
    decomposition so total = decomposition_p ** (1/p).
    """
    if c <= 0:
        raise ValueError("cutoff c must be positive")
    if not 0 < alpha <= 2:
        raise ValueError("alpha must lie in (0, 2]")
    est = np.atleast_2d(np.asarray(estimates, float)) if len(estimates) \
        else np.empty((0, 2))
    tru = np.atleast_2d(np.asarray(truths, float)) if len(truths) \
        else np.empty((0, 2))
    miss_cost = c ** p / alpha
    if len(est) == 0 or len(tru) == 0:
        missed = miss_cost * len(tru)
        false = miss_cost * len(est)
        return GospaResult(total=(missed + false) ** (1.0 / p),
                           localization=0.0, missed=missed ** (1.0 / p),
                           false_alarm=false ** (1.0 / p),
                           n_missed=len(tru), n_false=len(est),
                           assignment=[], p=p)
    d = np.linalg.norm(est[:, None, :] - tru[None, :, :], axis=2)
    cost = np.minimum(d, c) ** p
    rows, cols = linear_sum_assignment(cost)
    loc = 0.0
    pairs = []
    for i, j in zip(rows, cols):
        if d[i, j] < c:
            loc += cost[i, j]
            pairs.append((int(i), int(j)))
    n_missed = len(tru) - len(pairs)
    n_false = len(est) - len(pairs)
    missed = miss_cost * n_missed
    false = miss_cost * n_false
    return GospaResult(total=(loc + missed + false) ** (1.0 / p),
                       localization=loc ** (1.0 / p),
                       missed=missed ** (1.0 / p),
                       false_alarm=false ** (1.0 / p),
                       n_missed=n_missed, n_false=n_false,
                       assignment=pairs, p=p)


def rmse(errors):
    errors = np.asarray(errors, float)
    if len(errors) == 0:
        return float("nan")
    return float(np.sqrt(np.mean(errors ** 2)))


@dataclass
class SeriesRmse:
    value: float
    matched_frames: int
    unmatched_frames: int


def rmse_series(estimate_series, truth_series, selector=None, angular=False):
    """RMSE over aligned per-frame series.

    Each series element is a scalar (or None when the frame has no
    estimate); ``selector`` maps elements to scalars first.  Angular series
    use wrapped residuals.
    """
    errs = []
    unmatched = 0
    for est, tru in zip(estimate_series, truth_series):
        if est is None or tru is None:
            unmatched += 1
            continue
        if selector is not None:
            est, tru = selector(est), selector(tru)
        e = est - tru
        if angular:
            e = wrap_angle(e)
        errs.append(e)
    return SeriesRmse(value=rmse(errs), matched_frames=len(errs),
                      unmatched_frames=unmatched)
