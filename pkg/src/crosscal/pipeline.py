"""Per-sensor extraction pipeline: frames in, labeled centers out.

A SensorRecording bundles one sensor's data for all target poses. Frame
entries may be the data itself or a zero-argument callable producing it,
so datasets can stream from disk. Every frame gets its own
counter-derived RANSAC stream, which makes results independent of how
the frames are scheduled across workers.
"""

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (ClusterParams, accumulate_frames, associate_labels,
                          consolidate_centers, euclidean_cluster)
from .errors import FrameRejected, PoseRejected
from .monocular import extract_mono_frame
from .segmentation import segment_target

MODALITIES = ("lidar", "mono", "stereo-range")

_UP = {
    "lidar": np.array([0.0, 0.0, 1.0]),
    "mono": np.array([0.0, -1.0, 0.0]),
    "stereo-range": np.array([0.0, -1.0, 0.0]),
}
_FORWARD = {
    "lidar": np.array([1.0, 0.0, 0.0]),
    "mono": np.array([0.0, 0.0, 1.0]),
    "stereo-range": np.array([0.0, 0.0, 1.0]),
}


@dataclass
class SensorRecording:
    """One sensor's frames, grouped by target pose.

    ``frames[m]`` lists the frames of pose m: a PointCloud for lidar, a
    (PointCloud, IntensityImage) pair for stereo-range, MarkerDetections
    for mono - or callables returning those. ``bounds[m]`` holds the
    pass-through crop for pose m (range modalities only).
    """

    name: str
    modality: str
    frames: list
    bounds: list | None = None
    intrinsics: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality == "mono" and self.intrinsics is None:
            raise ValueError("mono recordings need camera intrinsics")

    @property
    def m_poses(self):
        return len(self.frames)

    def up_axis(self):
        return _UP[self.modality]

    def forward_axis(self):
        return _FORWARD[self.modality]


def _materialize(entry):
    return entry() if callable(entry) else entry


def frame_rng(base_seed, sensor_name, pose_index, frame_index):
    """Deterministic per-frame generator, independent of scheduling."""
    tag = zlib.crc32(sensor_name.encode())
    seq = np.random.SeedSequence(base_seed, spawn_key=(tag, pose_index, frame_index))
    return np.random.Generator(np.random.Philox(seq))


def _pose_bounds(recording, config, pose_index):
    override = config.passthrough.get(recording.name)
    if override is not None:
        return override
    if recording.bounds is None:
        raise ValueError(
            f"no pass-through bounds for sensor {recording.name}; set them in the "
            "config or the dataset manifest")
    return recording.bounds[pose_index]


def extract_frame(recording, config, pose_index, frame_index, data=None):
    """Reference points from a single frame. Raises FrameRejected."""
    if data is None:
        data = _materialize(recording.frames[pose_index][frame_index])
    rng = frame_rng(config.seed, recording.name, pose_index, frame_index)
    if recording.modality == "mono":
        return extract_mono_frame(data, recording.intrinsics, config.target,
                                  pose=pose_index, frame=frame_index)
    if recording.modality == "stereo-range":
        cloud, image = data
    else:
        cloud, image = data, None
    return segment_target(
        cloud,
        modality=recording.modality,
        bounds=_pose_bounds(recording, config, pose_index),
        up_axis=recording.up_axis(),
        geometry=config.target,
        config=config,
        rng=rng,
        image=image,
        pose=pose_index,
        frame=frame_index,
    )


def extract_pose(recording, config, pose_index, workers=None):
    """Accumulate one pose's frames into labeled centers.

    Returns (LabeledCenters, frame_log) where frame_log lists
    (frame_index, "ok" | rejection reason).
    """
    entries = recording.frames[pose_index]
    if len(entries) < config.n_frames:
        raise ValueError(
            f"pose {pose_index}: {len(entries)} frames available, {config.n_frames} requested")
    indices = range(config.n_frames)

    def run(i):
        try:
            return extract_frame(recording, config, pose_index, i), "ok"
        except FrameRejected as err:
            return None, err.reason

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, indices))
    else:
        results = [run(i) for i in indices]
    log = [(i, reason) for i, (_, reason) in zip(indices, results)]

    try:
        acc = accumulate_frames((outcome for outcome, _ in results), config.n_frames)
        lo, hi = config.cluster_limits(acc.n_success)
        clusters = euclidean_cluster(acc, ClusterParams(config.delta_cluster, lo, hi))
        centers = consolidate_centers(clusters)
    except PoseRejected as err:
        raise PoseRejected(err.reason,
                           f"sensor {recording.name}, pose {pose_index}") from err
    labeled = associate_labels(centers, config.target, config.delta_consistency,
                               up=recording.up_axis(), forward=recording.forward_axis())
    labeled.pose = pose_index
    return labeled, log


def extract_recording(recording, config, workers=None):
    """Labeled centers for every pose of a recording.

    Returns (list of LabeledCenters, {pose: frame_log}).
    """
    centers = []
    logs = {}
    for m in range(recording.m_poses):
        labeled, log = extract_pose(recording, config, m, workers=workers)
        centers.append(labeled)
        logs[m] = log
    return centers, logs
