"""Accumulation and consolidation of the per-frame reference points.

Points extracted over N frames are pooled, clustered by Euclidean
connectivity, and reduced to four consolidated centers; the centers are
then labeled tl/tr/bl/br from their spherical coordinates so that both
sensors order them identically, and the labeled sets from M target poses
are stacked for registration.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import PoseRejected


@dataclass
class AccumulatedCloud:
    """Pooled reference points from one target pose.

    ``n_total`` counts every frame consumed (rejected ones included);
    ``n_success`` only those that contributed four points.
    """

    points: np.ndarray
    frames: np.ndarray
    n_total: int
    n_success: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.frames = np.asarray(self.frames, dtype=int)
        if len(self.points) != 4 * self.n_success:
            raise ValueError("accumulated cloud must hold 4 points per successful frame")


@dataclass(frozen=True)
class ClusterParams:
    delta_cluster: float
    min_size: int
    max_size: int

    def __post_init__(self):
        if self.min_size > self.max_size:
            raise ValueError("min cluster size exceeds max")


def accumulate_frames(outcomes, n_frames):
    """Consume exactly ``n_frames`` per-frame outcomes.

    ``outcomes`` yields ReferencePointSet instances or None for rejected
    frames; rejected frames spend budget without adding points.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    it = iter(outcomes)
    pts = []
    frames = []
    n_success = 0
    for i in range(n_frames):
        try:
            outcome = next(it)
        except StopIteration:
            raise ValueError(f"frame stream exhausted after {i} of {n_frames} frames")
        if outcome is None:
            continue
        pts.append(outcome.centers)
        frames.extend([outcome.frame] * 4)
        n_success += 1
    if n_success == 0:
        raise PoseRejected("no_detections", f"all {n_frames} frames rejected")
    return AccumulatedCloud(np.vstack(pts), np.array(frames), n_frames, n_success)


def euclidean_cluster(cloud, params):
    """Single-linkage clusters of the accumulated cloud.

    Connected components under pairwise distance <= delta_cluster;
    clusters outside [min_size, max_size] are dropped. Returns a list of
    (centroid, size) pairs.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise ValueError("cannot cluster an empty cloud")
    tree = cKDTree(pts)
    pairs = tree.query_pairs(params.delta_cluster, output_type="ndarray")
    n = len(pts)
    if len(pairs):
        data = np.ones(len(pairs), dtype=np.int8)
        graph = csr_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    else:
        graph = csr_matrix((n, n), dtype=np.int8)
    n_comp, labels = connected_components(graph, directed=False)
    out = []
    for comp in range(n_comp):
        members = pts[labels == comp]
        if params.min_size <= len(members) <= params.max_size:
            out.append((members.mean(axis=0), len(members)))
    return out


def consolidate_centers(clusters):
    """The four cluster centroids, or PoseRejected when the count is off."""
    if len(clusters) != 4:
        raise PoseRejected("clusters", f"{len(clusters)} clusters survived")
    return np.array([c for c, _ in clusters])


@dataclass
class LabeledCenters:
    """Consolidated hole centers for one target pose.

    ``centers`` is (4, 3) ordered tl, tr, bl, br; ``pose`` is the target
    pose tag.
    """

    centers: np.ndarray
    pose: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(4, 3)


def _frame_axes(up, forward):
    u = np.asarray(up, dtype=float)
    u = u / np.linalg.norm(u)
    f = np.asarray(forward, dtype=float)
    e1 = f - (f @ u) * u
    norm = np.linalg.norm(e1)
    if norm < 1e-9:
        raise ValueError("forward axis parallel to up axis")
    e1 = e1 / norm
    e2 = np.cross(u, e1)
    return u, e1, e2


def _azimuth_about(points, u, e1, e2):
    pts = np.atleast_2d(points)
    return np.arctan2(pts @ e2, pts @ e1)


def _wrapped(angles):
    return np.arctan2(np.sin(angles), np.cos(angles))


def associate_labels(centers, geometry, delta_consistency,
                     up=(0.0, 0.0, 1.0), forward=(1.0, 0.0, 0.0)):
    """Sort four consolidated centers into tl, tr, bl, br.

    The point with the lowest inclination (the highest one, measured
    about ``up``) anchors the top row; the distances from it to the
    others pick out its row partner (~width), column partner (~height)
    and the opposite corner (~diagonal). Left and right follow from the
    azimuths of the top pair relative to the rectangle centroid, so the
    rule survives targets sitting across the atan2 branch cut (e.g.
    behind a 360-degree scanner).

    Each expected distance must match exactly one candidate within
    ``delta_consistency``; ambiguity (including square targets) raises
    ValueError.
    """
    pts = np.asarray(centers, dtype=float).reshape(4, 3)
    u, e1, e2 = _frame_axes(up, forward)
    norms = np.linalg.norm(pts, axis=1)
    if np.any(norms == 0):
        raise ValueError("centers must not sit at the sensor origin")
    incl = np.arccos(np.clip(pts @ u / norms, -1.0, 1.0))
    anchor = int(np.argmin(incl))
    others = [i for i in range(4) if i != anchor]
    dists = np.linalg.norm(pts[others] - pts[anchor], axis=1)

    expected = {
        "row": geometry.centers_width,
        "col": geometry.centers_height,
        "diag": geometry.diagonal,
    }
    assigned = {}
    for role, d_exp in expected.items():
        hits = [i for i, d in zip(others, dists) if abs(d - d_exp) <= delta_consistency]
        if len(hits) != 1:
            raise ValueError(
                f"ambiguous association: {len(hits)} candidates at distance {d_exp}")
        assigned[role] = hits[0]
    if len(set(assigned.values())) != 3:
        raise ValueError("ambiguous association: one point matched two roles")

    top = [anchor, assigned["row"]]
    centroid = pts.mean(axis=0)
    az_centroid = _azimuth_about(centroid, u, e1, e2)[0]
    az_top = _azimuth_about(pts[top], u, e1, e2)
    rel = _wrapped(az_top - az_centroid)
    # larger relative azimuth = further to the viewer's left = tl
    tl, tr = (top[0], top[1]) if rel[0] > rel[1] else (top[1], top[0])
    if tl == anchor:
        bl, br = assigned["col"], assigned["diag"]
    else:
        bl, br = assigned["diag"], assigned["col"]
    return LabeledCenters(pts[[tl, tr, bl, br]])


def accumulate_poses(per_pose, m_poses):
    """Validate and stack the labeled centers of ``m_poses`` target poses.

    Every pose tag 0..M-1 must appear exactly once; the result is the
    4*M-point collection consumed by registration.
    """
    if m_poses < 1:
        raise ValueError("need at least one pose")
    seen = {}
    for lc in per_pose:
        if lc.pose in seen:
            raise ValueError(f"duplicate pose tag {lc.pose}")
        seen[lc.pose] = lc
    missing = [m for m in range(m_poses) if m not in seen]
    if missing:
        raise ValueError(f"missing pose tags: {missing}")
    extra = [m for m in seen if not 0 <= m < m_poses]
    if extra:
        raise ValueError(f"unexpected pose tags: {extra}")
    return [seen[m] for m in range(m_poses)]
