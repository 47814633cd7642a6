"""Extended-object tracking in curvilinear road coordinates.

A GM-PHD filter with UKF moment propagation estimates position, velocity,
yaw, yaw rate, and rectangular extent of road objects from fused lidar
clusters and radar velocity detections, together with a deterministic 2D
scenario simulator and a GOSPA/RMSE evaluation harness.
"""

from .fusion import ClusterTag, MeasurementCluster
from .gmphd import FilterConfig, GaussianComponent, PhdFilter
from .metrics import GospaResult, gospa
from .road import CurvilinearPose, EgoPose, RoadSegment, RoadSpline
from .simulator import ScenarioSpec, run_scenario
from .state import ObjectState, TrackingMode
from .tracker import RunReport, run_tracking

__all__ = [
    "ClusterTag", "CurvilinearPose", "EgoPose", "FilterConfig",
    "GaussianComponent", "GospaResult", "MeasurementCluster", "ObjectState",
    "PhdFilter", "RoadSegment", "RoadSpline", "RunReport", "ScenarioSpec",
    "TrackingMode", "gospa", "run_scenario", "run_tracking",
]

__version__ = "0.1.0"
