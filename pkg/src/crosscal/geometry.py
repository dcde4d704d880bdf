"""Rigid-transform algebra, spherical coordinates and calibration error metrics.

Conventions used throughout the project:

* points are float64 arrays of shape (3,) or (N, 3), in meters;
* a pose is the 6-vector (tx, ty, tz, rx, ry, rz) with rotations in
  radians around the x (roll), y (pitch) and z (yaw) axes;
* the rotation matrix is composed as R = Rz(rz) @ Ry(ry) @ Rx(rx) and is
  applied to column vectors, i.e. yaw after pitch after roll.
"""

from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-6


def rotation_rpy(rx, ry, rz):
    """3x3 rotation matrix for roll/pitch/yaw angles, R = Rz @ Ry @ Rx."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=float)
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=float)
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=float)
    return rot_z @ rot_y @ rot_x


def rpy_from_rotation(rot):
    """Inverse of :func:`rotation_rpy`. Returns (rx, ry, rz)."""
    rot = np.asarray(rot, dtype=float)
    sy = -rot[2, 0]
    cy = np.sqrt(max(0.0, 1.0 - sy * sy))
    if cy > 1e-9:
        rx = np.arctan2(rot[2, 1], rot[2, 2])
        ry = np.arctan2(sy, cy)
        rz = np.arctan2(rot[1, 0], rot[0, 0])
    else:
        # gimbal lock: fold roll into yaw
        rx = 0.0
        ry = np.arctan2(sy, cy)
        rz = np.arctan2(-rot[0, 1], rot[1, 1])
    return float(rx), float(ry), float(rz)


def skew(v):
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=float)


def rotation_axis_angle(w):
    """Rodrigues map from a rotation vector (axis * angle) to a matrix."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    big_w = skew(w)
    if theta < 1e-12:
        return np.eye(3) + big_w + 0.5 * (big_w @ big_w)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * big_w + b * (big_w @ big_w)


def _check_rotation(rot, tol=_ORTHO_TOL):
    err = np.abs(rot.T @ rot - np.eye(3)).max()
    if err > tol or np.linalg.det(rot) < 0:
        raise ValueError(f"matrix is not a proper rotation (residual {err:.2e})")


def orthonormalize(rot):
    """Nearest proper rotation to an arbitrary 3x3 matrix (Frobenius)."""
    u, _, vt = np.linalg.svd(np.asarray(rot, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class RigidTransform:
    """A 6-DoF rigid transform stored as a 4x4 homogeneous matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("transform matrix has non-finite entries")
        _check_rotation(m[:3, :3], tol=1e-9)
        if not np.allclose(m[3], (0, 0, 0, 1), atol=1e-12):
            raise ValueError("last matrix row must be (0, 0, 0, 1)")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(4))

    @classmethod
    def from_params(cls, theta):
        """Build from (tx, ty, tz, rx, ry, rz)."""
        theta = np.asarray(theta, dtype=float).reshape(6)
        if not np.all(np.isfinite(theta)):
            raise ValueError("pose parameters must be finite")
        m = np.eye(4)
        m[:3, :3] = rotation_rpy(theta[3], theta[4], theta[5])
        m[:3, 3] = theta[:3]
        return cls(m)

    @classmethod
    def from_rt(cls, rot, t):
        m = np.eye(4)
        m[:3, :3] = orthonormalize(rot)
        m[:3, 3] = np.asarray(t, dtype=float).reshape(3)
        return cls(m)

    @property
    def rotation(self):
        return self.matrix[:3, :3]

    @property
    def translation(self):
        return self.matrix[:3, 3]

    @property
    def params(self):
        """Recover (tx, ty, tz, rx, ry, rz)."""
        rx, ry, rz = rpy_from_rotation(self.rotation)
        tx, ty, tz = self.translation
        return np.array([tx, ty, tz, rx, ry, rz])

    def apply(self, points):
        """Map one (3,) point or an (N, 3) batch through the transform."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def inverse(self):
        rot = self.rotation.T
        m = np.eye(4)
        m[:3, :3] = rot
        m[:3, 3] = -rot @ self.translation
        return RigidTransform(m)

    def compose(self, other):
        """self applied after other: (self.compose(other))(p) == self(other(p))."""
        return RigidTransform(self.matrix @ other.matrix)

    def __matmul__(self, other):
        return self.compose(other)


def params_to_transform(theta):
    return RigidTransform.from_params(theta)


def transform_to_params(transform):
    return transform.params


def compose(*transforms):
    """Compose left to right: compose(A, B)(p) == A(B(p))."""
    out = RigidTransform.identity()
    for t in transforms:
        out = out.compose(t)
    return out


def invert(transform):
    return transform.inverse()


@dataclass(frozen=True)
class SphericalPoint:
    """(radius, inclination from +z, azimuth from +x in the xy-plane)."""

    radius: float
    inclination: float
    azimuth: float


def to_spherical(p):
    """Convert a cartesian point to spherical coordinates.

    Raises ValueError at the origin, where the angles are undefined.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    r = float(np.linalg.norm(p))
    if r == 0.0:
        raise ValueError("spherical coordinates undefined at the origin")
    incl = float(np.arccos(np.clip(p[2] / r, -1.0, 1.0)))
    azim = float(np.arctan2(p[1], p[0]))
    return SphericalPoint(r, incl, azim)


def from_spherical(s):
    """Inverse of :func:`to_spherical`."""
    si = np.sin(s.inclination)
    return np.array(
        [
            s.radius * si * np.cos(s.azimuth),
            s.radius * si * np.sin(s.azimuth),
            s.radius * np.cos(s.inclination),
        ]
    )


@dataclass(frozen=True)
class PlaneModel:
    """Plane n . p + d = 0 with a unit normal."""

    normal: np.ndarray
    d: float

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length, got {norm}")
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "d", float(self.d))

    def signed_distance(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.normal + self.d

    def oriented_toward_origin(self):
        """Flip the normal, if needed, so it points toward the origin."""
        if self.d < 0:
            return PlaneModel(-self.normal, -self.d)
        return self


def linear_error(t_hat, t):
    """Translation error between two poses: ||t_hat - t||."""
    t_hat = np.asarray(t_hat, dtype=float).reshape(3)
    t = np.asarray(t, dtype=float).reshape(3)
    return float(np.linalg.norm(t_hat - t))


def angular_error(rot_hat, rot):
    """Angle of the relative rotation between two rotation matrices.

    Computed as atan2(|sin|, cos) of the relative rotation: equal to the
    clamped arccos of (trace-1)/2 but without its ~1e-8 precision floor
    near zero, which sub-nanoradian checks need.
    """
    rot_hat = np.asarray(rot_hat, dtype=float)
    rot = np.asarray(rot, dtype=float)
    _check_rotation(rot_hat)
    _check_rotation(rot)
    rel = rot_hat.T @ rot
    c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    s = np.linalg.norm(axis) / 2.0
    return float(np.arctan2(s, c))
