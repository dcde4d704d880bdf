"""Monocular board-pose recovery.

Takes marker-corner detections in pixel coordinates (marker decoding
itself happens upstream), estimates an initial camera<-board pose from
planar homographies, refines it by Levenberg-Marquardt on the
reprojection error, and derives the four hole centers in camera
coordinates.

Camera frame: z along the optical axis, x right, y down (pixels grow
rightward/downward).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, FrameRejected
from .geometry import RigidTransform, orthonormalize, rotation_axis_angle, skew
from .target import ReferencePointSet


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class MarkerDetections:
    """Pixel corners per marker id, each a (4, 2) array ordered
    tl, tr, br, bl in board orientation."""

    corners: dict = field(default_factory=dict)
    frame: int = 0

    def __post_init__(self):
        fixed = {}
        for mid, c in self.corners.items():
            c = np.asarray(c, dtype=float).reshape(4, 2)
            if not np.all(np.isfinite(c)):
                raise ValueError(f"marker {mid} has non-finite corners")
            fixed[int(mid)] = c
        self.corners = fixed

    def __len__(self):
        return len(self.corners)


@dataclass
class BoardPose:
    """Refined camera<-board transform plus the residual it achieved."""

    transform: RigidTransform
    rms: float  # per-component rms reprojection error, pixels


def project_pinhole(intrinsics, p_cam):
    """Project camera-frame points to pixels. Points must be in front of
    the camera (z > 0)."""
    pts = np.asarray(p_cam, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    if np.any(pts[:, 2] <= 0):
        raise ValueError("point behind the camera (z <= 0)")
    u = intrinsics.fx * pts[:, 0] / pts[:, 2] + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / pts[:, 2] + intrinsics.cy
    uv = np.column_stack([u, v])
    return uv[0] if single else uv


def _normalize_2d(pts):
    """Hartley conditioning: center and scale to mean distance sqrt(2)."""
    mean = pts.mean(axis=0)
    scale = np.sqrt(2.0) / max(np.linalg.norm(pts - mean, axis=1).mean(), 1e-12)
    t = np.array([[scale, 0, -scale * mean[0]],
                  [0, scale, -scale * mean[1]],
                  [0, 0, 1.0]])
    return (pts - mean) * scale, t


def homography_dlt(obj_xy, img_uv):
    """Homography mapping plane (x, y) to pixels via the normalized DLT."""
    obj_xy = np.asarray(obj_xy, dtype=float).reshape(-1, 2)
    img_uv = np.asarray(img_uv, dtype=float).reshape(-1, 2)
    if len(obj_xy) < 4:
        raise ValueError("need at least four correspondences")
    src, t_src = _normalize_2d(obj_xy)
    dst, t_dst = _normalize_2d(img_uv)
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    a = np.array(rows)
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-9 * s[0]:
        raise ValueError("degenerate corner configuration")
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h @ t_src
    hs = np.linalg.svd(h, compute_uv=False)
    # a plane-to-image homography from a real pose is invertible;
    # collinear corners collapse it to rank 2
    if hs[2] < 1e-9 * hs[0]:
        raise ValueError("degenerate corner configuration")
    return h / h[2, 2]


def pose_from_homography(h, intrinsics):
    """Decompose a plane-to-image homography into a camera<-plane pose.

    The sign is fixed so the plane sits in front of the camera.
    """
    m = np.linalg.inv(intrinsics.matrix) @ h
    scale = 2.0 / (np.linalg.norm(m[:, 0]) + np.linalg.norm(m[:, 1]))
    if m[2, 2] * scale < 0:
        scale = -scale
    r1 = m[:, 0] * scale
    r2 = m[:, 1] * scale
    r3 = np.cross(r1, r2)
    rot = orthonormalize(np.column_stack([r1, r2, r3]))
    t = m[:, 2] * scale
    return RigidTransform.from_rt(rot, t)


def initial_board_pose(detections, intrinsics, geometry):
    """Initial camera<-board pose from the detected markers.

    Each marker contributes a homography-based pose using its corners'
    known board-frame locations; the board pose is their average
    (arithmetic translation, chordal rotation mean).
    """
    if len(detections) == 0:
        raise FrameRejected("no_markers")
    translations = []
    rotations = []
    for mid, uv in sorted(detections.corners.items()):
        obj = geometry.marker_corners(mid)[:, :2]
        pose = pose_from_homography(homography_dlt(obj, uv), intrinsics)
        translations.append(pose.translation)
        rotations.append(pose.rotation)
    t = np.mean(translations, axis=0)
    rot = orthonormalize(np.mean(rotations, axis=0))
    return RigidTransform.from_rt(rot, t)


class RefinementDiverged(CalibrationError):
    """LM failed to reduce the cost; carries the best pose seen."""

    def __init__(self, best):
        self.best = best
        super().__init__("pose refinement diverged")


def _correspondences(detections, geometry):
    obj = []
    img = []
    for mid, uv in sorted(detections.corners.items()):
        obj.append(geometry.marker_corners(mid))
        img.append(uv)
    return np.vstack(obj), np.vstack(img)


def _residual_jacobian(rot, t, intrinsics, obj, img):
    """Reprojection residuals and their Jacobian wrt (dt, axis-angle dw),
    with the rotation increment applied on the left: R <- exp(w) R."""
    pc = obj @ rot.T + t
    z = pc[:, 2]
    u = intrinsics.fx * pc[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * pc[:, 1] / z + intrinsics.cy
    res = np.column_stack([u, v]) - img
    n = len(obj)
    jac = np.zeros((2 * n, 6))
    # d(u,v)/d(p_cam)
    a = np.zeros((n, 2, 3))
    a[:, 0, 0] = intrinsics.fx / z
    a[:, 0, 2] = -intrinsics.fx * pc[:, 0] / z**2
    a[:, 1, 1] = intrinsics.fy / z
    a[:, 1, 2] = -intrinsics.fy * pc[:, 1] / z**2
    jac[0::2, 0:3] = a[:, 0, :]
    jac[1::2, 0:3] = a[:, 1, :]
    for i in range(n):
        dp_dw = -skew(rot @ obj[i])
        jac[2 * i:2 * i + 2, 3:6] = a[i] @ dp_dw
    return res.reshape(-1), jac, pc


def refine_board_pose_lm(initial, detections, intrinsics, geometry,
                         max_iters=100, tol=1e-10):
    """Minimize the corner reprojection error by Levenberg-Marquardt.

    Damping starts at 1e-3 and moves a decade per accepted/rejected
    step; iteration stops once the step norm drops below ``tol``.
    """
    if len(detections) == 0:
        raise FrameRejected("no_markers")
    obj, img = _correspondences(detections, geometry)
    rot = initial.rotation.copy()
    t = initial.translation.copy()

    def cost_of(rot_c, t_c):
        pc = obj @ rot_c.T + t_c
        if np.any(pc[:, 2] <= 0):
            return np.inf, None
        uv = np.column_stack([
            intrinsics.fx * pc[:, 0] / pc[:, 2] + intrinsics.cx,
            intrinsics.fy * pc[:, 1] / pc[:, 2] + intrinsics.cy,
        ])
        r = (uv - img).reshape(-1)
        return float(r @ r), r

    cost, _ = cost_of(rot, t)
    if not np.isfinite(cost):
        raise ValueError("initial pose places the board behind the camera")
    lam = 1e-3
    lam_max = 1e12
    for _ in range(max_iters):
        res, jac, _ = _residual_jacobian(rot, t, intrinsics, obj, img)
        jtj = jac.T @ jac
        g = jac.T @ res
        accepted = False
        converged = False
        while lam <= lam_max:
            try:
                step = np.linalg.solve(jtj + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            if np.linalg.norm(step) < tol:
                # the damped step has shrunk below tolerance: we are at
                # a minimum, whether or not this trial improved the cost
                converged = True
                break
            new_rot = orthonormalize(rotation_axis_angle(step[3:6]) @ rot)
            new_t = t + step[0:3]
            new_cost, _ = cost_of(new_rot, new_t)
            if new_cost < cost:
                rot, t, cost = new_rot, new_t, new_cost
                lam = max(lam / 10, 1e-12)
                accepted = True
                break
            lam *= 10
        if converged:
            break
        if not accepted:
            best = BoardPose(RigidTransform.from_rt(rot, t), _rms(cost, len(obj)))
            raise RefinementDiverged(best)
    return BoardPose(RigidTransform.from_rt(rot, t), _rms(cost, len(obj)))


def _rms(cost, n_corners):
    return float(np.sqrt(cost / (2 * n_corners)))


def derive_hole_centers(pose, geometry, pose_index=0, frame=0):
    """Map the board-frame hole centers through the recovered pose.

    Labels come straight from the board frame, so no association step is
    needed for this modality.
    """
    transform = pose.transform if isinstance(pose, BoardPose) else pose
    offsets = geometry.hole_center_offsets
    board_pts = np.column_stack([offsets, np.zeros(4)])
    return ReferencePointSet(transform.apply(board_pts), pose=pose_index, frame=frame)


def extract_mono_frame(detections, intrinsics, geometry, pose=0, frame=0,
                       max_iters=100, tol=1e-10):
    """Detections -> refined pose -> hole centers, for one frame."""
    init = initial_board_pose(detections, intrinsics, geometry)
    refined = refine_board_pose_lm(init, detections, intrinsics, geometry,
                                   max_iters=max_iters, tol=tol)
    return derive_hole_centers(refined, geometry, pose_index=pose, frame=frame)
