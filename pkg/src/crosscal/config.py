"""Pipeline configuration.

One dataclass carries every tunable of the method. The defaults are the
fixed working values; in normal use only the pass-through crop boxes
need adjusting to where the target is placed.
"""

import json
from dataclasses import dataclass, field, fields

from .cloud import PassThroughBounds
from .target import TargetGeometry


@dataclass
class CalibConfig:
    # edge segmentation
    delta_discont: float = 0.10        # LiDAR depth-gradient threshold (m)
    tau_sobel: int = 128               # stereo Sobel intensity threshold

    # plane segmentation
    delta_plane: float = 0.10          # RANSAC inlier distance (m)
    alpha_plane: float = 0.55          # verticality tolerance (rad)
    delta_inliers: float = 0.10        # edge-to-plane distance (m)

    # circle segmentation
    delta_circle_lidar: float = 0.05   # inlier distance, LiDAR (m)
    delta_circle_stereo: float = 0.01  # inlier distance, stereo (m)
    delta_radius_lidar: float = 0.02   # radius gate, LiDAR (m)
    delta_radius_stereo: float = 0.01  # radius gate, stereo (m)
    delta_consistency: float = 0.06    # rectangle dimension tolerance (m)
    min_circle_points: int = 3

    # clustering
    delta_cluster: float = 0.05        # cluster tolerance (m)
    cluster_min_factor: float = 0.5    # min cluster size, fraction of successful frames
    cluster_max_factor: float = 1.0    # max cluster size, same scale

    # RANSAC schedules
    plane_ransac_iters: int = 1000
    circle_ransac_iters: int = 2000
    min_plane_inliers: int = 3

    # accumulation
    n_frames: int = 30                 # frames accumulated per target pose
    m_poses: int = 1                   # target poses aggregated
    seed: int = 0

    target: TargetGeometry = field(default_factory=TargetGeometry)
    # crop boxes keyed by sensor name; falls back to the dataset manifest
    passthrough: dict = field(default_factory=dict)

    def delta_circle(self, modality):
        return self.delta_circle_lidar if modality == "lidar" else self.delta_circle_stereo

    def delta_radius(self, modality):
        return self.delta_radius_lidar if modality == "lidar" else self.delta_radius_stereo

    def cluster_limits(self, n_success):
        lo = max(1, int(self.cluster_min_factor * n_success))
        hi = max(1, int(self.cluster_max_factor * n_success))
        return lo, hi

    def to_dict(self):
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "target":
                d[f.name] = v.to_dict()
            elif f.name == "passthrough":
                d[f.name] = {k: b.to_dict() for k, b in v.items()}
            else:
                d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        if "target" in kw:
            kw["target"] = TargetGeometry.from_dict(kw["target"])
        if "passthrough" in kw:
            kw["passthrough"] = {k: PassThroughBounds.from_dict(b)
                                 for k, b in kw["passthrough"].items()}
        return cls(**kw)


def load_config(path=None, overrides=None):
    """Load a config file and apply overrides.

    Returns (config, applied) where ``applied`` records every key that
    differs from the built-in defaults, for provenance in result files.
    """
    data = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
    if overrides:
        data.update(overrides)
    cfg = CalibConfig.from_dict(data)
    defaults = CalibConfig().to_dict()
    applied = {k: v for k, v in cfg.to_dict().items() if defaults.get(k) != v}
    return cfg, applied
