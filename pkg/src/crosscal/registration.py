"""Closed-form rigid registration of the paired reference points.

Centers from the two sensors are matched by (hole label, pose tag) and
aligned by the SVD-based least-squares solution with reflection
correction, which stays valid when all points are coplanar (the
single-pose case).
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform
from .target import LABELS


@dataclass
class CorrespondenceSet:
    """Paired points with shared (label, pose) tags.

    Ordered pose-major, tl/tr/bl/br within each pose, so two sets built
    from the same data always align row by row.
    """

    x: np.ndarray
    y: np.ndarray
    labels: list
    poses: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 3)
        self.y = np.asarray(self.y, dtype=float).reshape(-1, 3)
        self.poses = np.asarray(self.poses, dtype=int)
        if self.x.shape != self.y.shape or len(self.x) != len(self.poses):
            raise ValueError("mismatched correspondence arrays")

    def __len__(self):
        return len(self.x)


def build_correspondences(x_centers, y_centers):
    """Match two per-pose LabeledCenters lists into ordered pairs.

    Both lists must cover the same pose tags; ordering of the inputs is
    irrelevant.
    """
    x_by_pose = {lc.pose: lc for lc in x_centers}
    y_by_pose = {lc.pose: lc for lc in y_centers}
    if len(x_by_pose) != len(x_centers) or len(y_by_pose) != len(y_centers):
        raise ValueError("duplicate pose tags in input")
    if set(x_by_pose) != set(y_by_pose):
        raise ValueError(
            f"pose tags differ between sensors: {sorted(x_by_pose)} vs {sorted(y_by_pose)}")
    xs, ys, labels, poses = [], [], [], []
    for m in sorted(x_by_pose):
        xs.append(x_by_pose[m].centers)
        ys.append(y_by_pose[m].centers)
        labels.extend(LABELS)
        poses.extend([m] * 4)
    return CorrespondenceSet(np.vstack(xs), np.vstack(ys), labels, np.array(poses))


def umeyama_rigid(pairs):
    """Least-squares rigid transform T with x ~ T(y).

    Closed form via the SVD of the cross-covariance of centered points;
    the sign matrix diag(1, 1, det(U V^T)) forces a proper rotation even
    for coplanar inputs. Scale is fixed at 1.
    """
    x, y = pairs.x, pairs.y
    if len(x) < 3:
        raise ValueError("need at least three point pairs")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    cov = (x - mx).T @ (y - my) / len(x)
    u, s, vt = np.linalg.svd(cov)
    if s[1] < 1e-9 * max(s[0], 1e-30):
        raise ValueError("degenerate (collinear) point configuration")
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    rot = u @ np.diag([1.0, 1.0, sign]) @ vt
    t = mx - rot @ my
    return RigidTransform.from_rt(rot, t)


def registration_rmse(pairs, transform):
    """Root-mean-square pair distance after applying the transform."""
    if len(pairs) == 0:
        return 0.0
    moved = pairs.y @ transform.rotation.T + transform.translation
    return float(np.sqrt(np.mean(np.sum((pairs.x - moved) ** 2, axis=1))))


@dataclass
class CalibrationResult:
    """Output of a full calibration run.

    ``transform`` maps points from sensor Y's frame into sensor X's
    frame. ``per_pose_rmse`` breaks the residual down by target pose.
    """

    transform: RigidTransform
    rmse: float
    m_poses: int
    n_frames: int
    per_pose_rmse: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def register(x_centers, y_centers, n_frames=0, meta=None):
    """Registration stage on already-extracted labeled centers."""
    pairs = build_correspondences(x_centers, y_centers)
    transform = umeyama_rigid(pairs)
    per_pose = {}
    for m in np.unique(pairs.poses):
        sel = pairs.poses == m
        sub = CorrespondenceSet(pairs.x[sel], pairs.y[sel],
                                [l for l, keep in zip(pairs.labels, sel) if keep],
                                pairs.poses[sel])
        per_pose[int(m)] = registration_rmse(sub, transform)
    return CalibrationResult(
        transform=transform,
        rmse=registration_rmse(pairs, transform),
        m_poses=len(per_pose),
        n_frames=n_frames,
        per_pose_rmse=per_pose,
        meta=meta or {},
    )


def calibrate(x_recording, y_recording, config, workers=None):
    """End-to-end calibration of a sensor pair.

    Runs reference-point extraction and aggregation for both recordings,
    matches the labeled centers, and solves for the transform mapping
    the Y sensor's frame into the X sensor's frame.
    """
    from .pipeline import extract_recording  # deferred: pipeline imports config types

    if x_recording.m_poses != y_recording.m_poses:
        raise ValueError(
            f"pose counts differ: {x_recording.m_poses} vs {y_recording.m_poses}")
    x_centers, x_log = extract_recording(x_recording, config, workers=workers)
    y_centers, y_log = extract_recording(y_recording, config, workers=workers)
    result = register(x_centers, y_centers, n_frames=config.n_frames)
    result.meta = {
        "setup": f"{x_recording.name}/{y_recording.name}",
        "frame_log": {x_recording.name: x_log, y_recording.name: y_log},
    }
    return result
