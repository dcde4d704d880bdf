"""Point-cloud containers and the preprocessing filters.

Covers the spatial crop, the per-ring depth-discontinuity edge extraction
used for LiDAR data, and the Sobel-based edge masking used for clouds
derived from stereo depth.
"""

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class PointCloud:
    """3D points plus the optional per-point attributes the filters need.

    ``ring``/``azimuth`` index a point inside a rotating-scanner sweep;
    ``ranges`` is the measured spherical radius; ``pixel`` holds (u, v)
    source-image coordinates for depth-image clouds. ``wrap`` gives the
    number of azimuth steps per revolution when rings close on
    themselves. ``surface`` is a simulator-only ground-truth label array
    (never serialized).
    """

    xyz: np.ndarray
    ring: np.ndarray | None = None
    ranges: np.ndarray | None = None
    azimuth: np.ndarray | None = None
    pixel: np.ndarray | None = None
    wrap: int | None = None
    surface: np.ndarray | None = None

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        n = len(self.xyz)
        for name in ("ring", "ranges", "azimuth", "surface"):
            a = getattr(self, name)
            if a is not None:
                a = np.asarray(a)
                if a.shape != (n,):
                    raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
                setattr(self, name, a)
        if self.pixel is not None:
            self.pixel = np.asarray(self.pixel)
            if self.pixel.shape != (n, 2):
                raise ValueError(f"pixel must have shape ({n}, 2)")

    def __len__(self):
        return len(self.xyz)

    def select(self, mask):
        """Subset the cloud, carrying every per-point attribute along."""
        kw = {"xyz": self.xyz[mask], "wrap": self.wrap}
        for name in ("ring", "ranges", "azimuth", "surface", "pixel"):
            a = getattr(self, name)
            kw[name] = None if a is None else a[mask]
        return PointCloud(**kw)


@dataclass(frozen=True)
class PassThroughBounds:
    """Axis-aligned crop box, (min, max) per axis in meters."""

    x: tuple[float, float]
    y: tuple[float, float]
    z: tuple[float, float]

    def __post_init__(self):
        for axis in (self.x, self.y, self.z):
            if axis[0] > axis[1]:
                raise ValueError(f"bounds min > max: {axis}")

    def contains(self, xyz):
        xyz = np.asarray(xyz, dtype=float)
        lo = np.array([self.x[0], self.y[0], self.z[0]])
        hi = np.array([self.x[1], self.y[1], self.z[1]])
        return np.all((xyz >= lo) & (xyz <= hi), axis=-1)

    def to_dict(self):
        return {"x": list(self.x), "y": list(self.y), "z": list(self.z)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["x"]), tuple(d["y"]), tuple(d["z"]))


@dataclass
class IntensityImage:
    """Grayscale image, row-major uint8 values in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValueError("image must be a 2D array")
        if self.pixels.dtype != np.uint8:
            if self.pixels.min() < 0 or self.pixels.max() > 255:
                raise ValueError("intensity values must lie in [0, 255]")
            self.pixels = self.pixels.astype(np.uint8)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def passthrough_filter(cloud, bounds):
    """Keep only the points inside the crop box. Attributes are preserved."""
    if len(cloud) == 0:
        return cloud.select(np.zeros(0, dtype=bool))
    return cloud.select(bounds.contains(cloud.xyz))


def depth_discontinuity(cloud):
    """Per-point depth gradient against the in-ring neighbors.

    For point i in its scan ring, the value is
    max(range[i-1] - range[i], range[i+1] - range[i], 0). A missing
    neighbor (ring boundary, or a dropped ray leaving a gap in the
    azimuth indices) contributes 0, so a gradient is never fabricated.
    On clouds with ``wrap`` set, ring neighbors wrap around.
    """
    if cloud.ring is None or cloud.ranges is None:
        raise ValueError("depth discontinuity needs ring and range attributes")
    n = len(cloud)
    disc = np.zeros(n)
    if n == 0:
        return disc
    order = np.arange(n)
    for ring_id in np.unique(cloud.ring):
        idx = order[cloud.ring == ring_id]
        if cloud.azimuth is not None:
            idx = idx[np.argsort(cloud.azimuth[idx], kind="stable")]
            az = cloud.azimuth[idx].astype(np.int64)
        else:
            az = np.arange(len(idx), dtype=np.int64)
        r = cloud.ranges[idx].astype(float)
        prev_gap = np.empty(len(idx))
        next_gap = np.empty(len(idx))
        # adjacency holds only when the azimuth indices differ by exactly 1
        adj_prev = np.zeros(len(idx), dtype=bool)
        adj_next = np.zeros(len(idx), dtype=bool)
        if len(idx) > 1:
            adj_prev[1:] = az[1:] - az[:-1] == 1
            adj_next[:-1] = adj_prev[1:]
        prev_gap[1:] = r[:-1] - r[1:]
        next_gap[:-1] = r[1:] - r[:-1]
        prev_gap[0] = 0.0
        next_gap[-1] = 0.0
        if cloud.wrap is not None and len(idx) > 1:
            closes = (az[0] + cloud.wrap - az[-1]) == 1
            if closes:
                adj_prev[0] = True
                adj_next[-1] = True
                prev_gap[0] = r[-1] - r[0]
                next_gap[-1] = r[0] - r[-1]
        prev_gap[~adj_prev] = 0.0
        next_gap[~adj_next] = 0.0
        disc[idx] = np.maximum(np.maximum(prev_gap, next_gap), 0.0)
    return disc


def lidar_edge_filter(cloud, delta_discont):
    """Keep the points whose depth discontinuity reaches ``delta_discont``."""
    disc = depth_discontinuity(cloud)
    return cloud.select(disc >= delta_discont)


def sobel_magnitude(img):
    """Gradient magnitude with the standard 3x3 Sobel kernels.

    Border pixels are set to 0; interior values are min(255,
    round(sqrt(Gx^2 + Gy^2))).
    """
    if img.width < 3 or img.height < 3:
        raise ValueError("image must be at least 3x3 for the Sobel filter")
    p = img.pixels.astype(float)
    # separable kernels: smooth [1 2 1] across, difference [-1 0 1] along
    sm_rows = p[:-2, :] + 2.0 * p[1:-1, :] + p[2:, :]
    gx = sm_rows[:, 2:] - sm_rows[:, :-2]
    sm_cols = p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]
    gy = sm_cols[2:, :] - sm_cols[:-2, :]
    mag = np.zeros_like(p)
    mag[1:-1, 1:-1] = np.minimum(255.0, np.rint(np.hypot(gx, gy)))
    return IntensityImage(mag.astype(np.uint8))


def edge_mask_filter(cloud, edges, tau_sobel):
    """Keep points whose source pixel has edge strength >= ``tau_sobel``."""
    if cloud.pixel is None:
        raise ValueError("edge mask filter needs per-point pixel coordinates")
    if len(cloud) == 0:
        return cloud
    uv = np.rint(np.asarray(cloud.pixel, dtype=float)).astype(int)
    u, v = uv[:, 0], uv[:, 1]
    if (u < 0).any() or (u >= edges.width).any() or (v < 0).any() or (v >= edges.height).any():
        raise ValueError("pixel coordinates fall outside the edge image")
    return cloud.select(edges.pixels[v, u].astype(int) >= tau_sobel)
