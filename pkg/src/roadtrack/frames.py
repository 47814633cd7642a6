"""Frame-stream and report file formats.

Scenario streams are line-delimited JSON: a header record with the schema
version, road geometry, and generating spec, then one record per frame.
Reports are CSV (per-frame metrics, estimates) plus a JSON summary.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from . import road as rd
from .simulator import ScenarioFrame, ScenarioSpec
from .state import ObjectState

SCHEMA = "roadtrack-frames/1"


class DataError(ValueError):
    """Schema-invalid frame stream or report file."""


def _road_to_dict(spline):
    return [{"s_start": seg.s_start,
             "coeff_theta": seg.coeff_theta.tolist(),
             "coeff_kappa": seg.coeff_kappa.tolist(),
             "length": seg.length,
             "origin": seg.origin.tolist(),
             "half_width": seg.half_width} for seg in spline.segments]


def _road_from_dict(rows):
    return rd.RoadSpline([rd.RoadSegment(**row) for row in rows])


def _ego_to_dict(ego):
    return {"s_e": ego.s_e, "n_e": ego.n_e, "xi_e": ego.xi_e,
            "psi_e": ego.psi_e, "psi_dot_e": ego.psi_dot_e, "v_e": ego.v_e}


def write_frames(path, spline, frames, spec=None):
    with open(path, "w") as fh:
        header = {"schema": SCHEMA, "road": _road_to_dict(spline),
                  "n_frames": len(frames)}
        if spec is not None:
            header["spec"] = spec.to_dict()
        fh.write(json.dumps(header) + "\n")
        for f in frames:
            rec = {
                "t": f.t,
                "ego": _ego_to_dict(f.ego),
                "truths": [list(st.as_vector()) for st in f.truths],
                "truth_vrf": np.asarray(f.truth_vrf).tolist(),
                "lidar": np.asarray(f.lidar_points).tolist(),
                "lidar_labels": np.asarray(f.lidar_labels).tolist(),
                "lidar_clean": np.asarray(f.lidar_clean).tolist(),
                "radar": np.asarray(f.radar_dets).tolist(),
                "lidar_present": bool(f.lidar_present),
            }
            fh.write(json.dumps(rec) + "\n")


def read_frames(path):
    """Returns (spline, frames, spec_dict_or_None)."""
    with open(path) as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid header: {exc}") from exc
        if header.get("schema") != SCHEMA:
            raise DataError(f"{path}: unknown schema "
                            f"{header.get('schema')!r}")
        spline = _road_from_dict(header["road"])
        frames = []
        prev_t = -np.inf
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frame = ScenarioFrame(
                    t=rec["t"],
                    ego=rd.EgoPose(**rec["ego"]),
                    truths=[ObjectState.from_vector(x)
                            for x in rec["truths"]],
                    truth_vrf=np.array(rec["truth_vrf"]).reshape(-1, 5),
                    lidar_points=np.array(rec["lidar"]).reshape(-1, 2),
                    lidar_labels=np.array(rec["lidar_labels"], int),
                    lidar_clean=np.array(rec["lidar_clean"]).reshape(-1, 2),
                    radar_dets=np.array(rec["radar"]).reshape(-1, 4),
                    lidar_present=rec.get("lidar_present", True))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(
                    f"{path}: invalid frame at line {lineno} "
                    f"(frame {lineno - 2}): {exc}") from exc
            if frame.t <= prev_t:
                raise DataError(f"{path}: non-increasing timestamp at "
                                f"line {lineno}")
            prev_t = frame.t
            frames.append(frame)
    return spline, frames, header.get("spec")


# ---------------------------------------------------------------------------
ESTIMATE_FIELDS = ["t", "s", "n", "v", "xi", "xi_dot", "length", "width",
                   "x", "y", "yaw", "vx", "vy"]
METRIC_FIELDS = ["t", "gospa", "localization", "missed", "false_alarm",
                 "n_missed", "n_false", "n_estimates", "n_truths",
                 "cardinality", "cycle_ms"]


def write_estimates(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_FIELDS)
        for f in report.frames:
            for row in f.estimates:
                w.writerow([repr(float(f.t))] +
                           [repr(float(row[k]))
                            for k in ESTIMATE_FIELDS[1:]])


def write_truths(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_FIELDS)
        for f in report.frames:
            for row in f.truths:
                w.writerow([repr(float(f.t))] +
                           [repr(float(row[k]))
                            for k in ESTIMATE_FIELDS[1:]])


def read_state_rows(path):
    """Read an estimates/truths CSV back into {t: [row dicts]}."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ESTIMATE_FIELDS:
            raise DataError(f"{path}: unexpected columns "
                            f"{reader.fieldnames}")
        for rec in reader:
            try:
                t = float(rec["t"])
                row = {k: float(rec[k]) for k in ESTIMATE_FIELDS[1:]}
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: bad row {rec}") from exc
            out.setdefault(t, []).append(row)
    return out


def write_metrics(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for f in report.frames:
            g = f.gospa
            w.writerow([repr(float(v)) for v in (
                f.t, g.total, g.localization, g.missed, g.false_alarm)] +
                [g.n_missed, g.n_false, len(f.estimates), len(f.truths),
                 f.cardinality, repr(float(f.cycle_ms))])


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
