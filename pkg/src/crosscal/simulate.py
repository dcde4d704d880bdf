"""Synthetic calibration scenes with exact ground truth.

Ray-casts rotating-scanner sweeps and per-pixel depth images against the
perforated board (with a wall behind it, so rays passing through the
holes still return), and synthesizes marker-corner detections for the
monocular branch. Gaussian noise is scaled by a single factor K on top
of the per-sensor baseline sigmas, and every frame draws from its own
counter-derived stream, so results are bit-identical no matter how the
frames are scheduled.

Frames of reference: sensors are mounted with vehicle-style axes
(x forward, y left, z up). LiDAR data lives directly in that body frame;
camera data lives in the optical frame (z forward, x right, y down),
related to the body frame by a fixed permutation. Ground truth between
two sensors is the transform between their *data* frames - exactly what
calibration estimates.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .cloud import IntensityImage, PassThroughBounds, PointCloud
from .geometry import PlaneModel, RigidTransform
from .monocular import CameraIntrinsics, MarkerDetections
from .target import TargetGeometry

# camera optical axes expressed in the body frame: z_opt -> x_body,
# x_opt -> -y_body, y_opt -> -z_body
OPTICAL_IN_BODY = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])

# canonical board orientation for a zero-rotation target pose: the front
# face looks back at the sensor (board z -> -x), board up is world up
BOARD_IN_VEHICLE = np.array([
    [0.0, 0.0, -1.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
])

SURFACE_BOARD = 1
SURFACE_WALL = 2

# Hole interiors render dark (shadowed), the wall nearly board-toned:
# the hole rims then carry a strong Sobel response while the outer
# silhouette stays below the default edge threshold, as with the real
# target where the pattern borders themselves provide the contrast.
_GRAY_BOARD = 200
_GRAY_HOLE = 60
_GRAY_WALL = 175


@dataclass(frozen=True)
class LidarModel:
    """Rotating multi-layer scanner: ring elevations and azimuth step."""

    layers: int
    vfov_deg: tuple[float, float]
    azimuth_res_deg: float

    def __post_init__(self):
        if self.layers < 2:
            raise ValueError("a scanner needs at least two layers")
        if self.azimuth_res_deg <= 0:
            raise ValueError("azimuth resolution must be positive")
        if self.vfov_deg[0] >= self.vfov_deg[1]:
            raise ValueError("vertical FOV limits out of order")

    @property
    def steps_per_rev(self):
        return int(round(360.0 / self.azimuth_res_deg))

    def elevations(self):
        return np.radians(np.linspace(self.vfov_deg[0], self.vfov_deg[1], self.layers))


@dataclass(frozen=True)
class NoiseModel:
    sigma0_range: float = 0.008   # LiDAR range noise baseline (m)
    sigma0_pixel: float = 0.5     # marker corner jitter baseline (px)
    sigma0_stereo: float = 0.002  # stereo depth noise at 1 m (m); grows with z^2

    def __post_init__(self):
        if min(self.sigma0_range, self.sigma0_pixel, self.sigma0_stereo) < 0:
            raise ValueError("noise baselines must be non-negative")


@dataclass
class SensorModel:
    """A mounted sensor: kind in {lidar, monocular, stereo-range}."""

    name: str
    kind: str
    pose: RigidTransform
    lidar: LidarModel | None = None
    camera: CameraIntrinsics | None = None

    def __post_init__(self):
        if self.kind == "lidar":
            if self.lidar is None:
                raise ValueError(f"sensor {self.name}: lidar model required")
        elif self.kind in ("monocular", "stereo-range"):
            if self.camera is None:
                raise ValueError(f"sensor {self.name}: camera intrinsics required")
        else:
            raise ValueError(f"sensor {self.name}: unknown kind {self.kind!r}")

    @property
    def modality(self):
        return {"lidar": "lidar", "monocular": "mono", "stereo-range": "stereo-range"}[self.kind]

    def data_frame(self):
        """world <- data-frame transform (optical frame for cameras)."""
        if self.kind == "lidar":
            return self.pose
        optical = np.eye(4)
        optical[:3, :3] = OPTICAL_IN_BODY
        return self.pose.compose(RigidTransform(optical))

    def up_axis(self):
        """Direction of 'up' in the sensor's data frame."""
        return np.array([0.0, 0.0, 1.0]) if self.kind == "lidar" else np.array([0.0, -1.0, 0.0])

    def forward_axis(self):
        return np.array([1.0, 0.0, 0.0]) if self.kind == "lidar" else np.array([0.0, 0.0, 1.0])


@dataclass
class Scene:
    """Everything needed to synthesize frames for one calibration session."""

    sensors: list
    target_poses: list
    target: TargetGeometry = field(default_factory=TargetGeometry)
    wall_offset: float = 1.0
    # wall half-extents as a multiple of the board's: finite, so grazing
    # returns at the far edges drop out instead of faking depth edges
    wall_scale: float = 4.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    noise_factor: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.wall_offset <= 0:
            raise ValueError("the wall must sit strictly behind the target")
        if not self.target_poses:
            raise ValueError("scene needs at least one target pose")
        if self.noise_factor < 0:
            raise ValueError("noise factor must be non-negative")
        names = [s.name for s in self.sensors]
        if len(set(names)) != len(names):
            raise ValueError("sensor names must be unique")
        for m in range(len(self.target_poses)):
            board = self.board_frame(m)
            normal = board.rotation[:, 2]
            origin = board.translation
            for s in self.sensors:
                if (s.pose.translation - origin) @ normal <= 0:
                    raise ValueError(
                        f"sensor {s.name} is behind the target in pose {m}")

    @property
    def m_poses(self):
        return len(self.target_poses)

    def sensor(self, key):
        if isinstance(key, SensorModel):
            return key
        if isinstance(key, int):
            return self.sensors[key]
        for s in self.sensors:
            if s.name == key:
                return s
        raise KeyError(f"no sensor named {key!r}")

    def board_frame(self, pose_index):
        """world <- board transform for one target pose."""
        base = np.eye(4)
        base[:3, :3] = BOARD_IN_VEHICLE
        return self.target_poses[pose_index].compose(RigidTransform(base))

    def board_plane(self, pose_index):
        board = self.board_frame(pose_index)
        n = board.rotation[:, 2]
        return PlaneModel(n, -float(n @ board.translation))

    def wall_plane(self, pose_index):
        board = self.board_frame(pose_index)
        n = board.rotation[:, 2]
        p0 = board.translation - self.wall_offset * n
        return PlaneModel(n, -float(n @ p0))

    def frame_rng(self, sensor_index, pose_index, frame_index):
        """Counter-based per-frame random stream (scheduling-independent)."""
        seq = np.random.SeedSequence(self.seed,
                                     spawn_key=(sensor_index, pose_index, frame_index))
        return np.random.Generator(np.random.Philox(seq))


def _sensor_index(scene, sensor):
    s = scene.sensor(sensor)
    return scene.sensors.index(s), s


def _cast_rays(scene, pose_index, origin, dirs):
    """Intersect world-frame rays with the board (minus holes) or the wall.

    Returns (t, surface) where t is the ray parameter (nan on miss) and
    surface labels board/wall hits.
    """
    board = scene.board_frame(pose_index)
    plane_board = scene.board_plane(pose_index)
    plane_wall = scene.wall_plane(pose_index)
    geometry = scene.target

    def plane_t(plane):
        denom = dirs @ plane.normal
        num = -(origin @ plane.normal + plane.d)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        t[np.abs(denom) < 1e-12] = np.nan
        t[t <= 1e-9] = np.nan
        return t

    t_board = plane_t(plane_board)
    hits = origin + t_board[:, None] * dirs
    local = board.inverse().apply(hits)
    on_rect = (np.abs(local[:, 0]) <= geometry.board_width / 2) & \
              (np.abs(local[:, 1]) <= geometry.board_height / 2)
    in_hole = np.zeros(len(dirs), dtype=bool)
    for hx, hy in geometry.hole_center_offsets:
        d2 = (local[:, 0] - hx) ** 2 + (local[:, 1] - hy) ** 2
        in_hole |= d2 <= geometry.hole_radius**2
    board_hit = np.isfinite(t_board) & on_rect & ~in_hole

    t_wall = plane_t(plane_wall)
    wall_hits = origin + t_wall[:, None] * dirs
    wall_local = board.inverse().apply(wall_hits)
    half_w = scene.wall_scale * geometry.board_width / 2
    half_h = scene.wall_scale * geometry.board_height / 2
    on_wall = (np.abs(wall_local[:, 0]) <= half_w) & (np.abs(wall_local[:, 1]) <= half_h)
    t_wall[~on_wall] = np.nan

    t = np.where(board_hit, t_board, t_wall)
    surface = np.where(board_hit, SURFACE_BOARD, SURFACE_WALL).astype(np.uint8)
    surface[~np.isfinite(t)] = 0
    return t, surface


def simulate_lidar_frame(scene, sensor, pose_index=0, frame_index=0):
    """One full scanner revolution against the target scene.

    The cloud carries ring, azimuth index (wrapping at a full turn),
    measured range, and ground-truth surface labels. Rays that hit
    neither board nor wall are omitted.
    """
    idx, s = _sensor_index(scene, sensor)
    if s.kind != "lidar":
        raise ValueError(f"sensor {s.name} is not a lidar")
    model = s.lidar
    elev = model.elevations()
    n_az = model.steps_per_rev
    az = np.radians(np.arange(n_az) * model.azimuth_res_deg)
    ee, aa = np.meshgrid(elev, az, indexing="ij")
    ce = np.cos(ee).ravel()
    dirs_local = np.column_stack([
        ce * np.cos(aa).ravel(),
        ce * np.sin(aa).ravel(),
        np.sin(ee).ravel(),
    ])
    rings = np.repeat(np.arange(model.layers), n_az)
    az_idx = np.tile(np.arange(n_az), model.layers)

    frame = s.data_frame()
    dirs_world = dirs_local @ frame.rotation.T
    t, surface = _cast_rays(scene, pose_index, frame.translation, dirs_world)
    keep = np.isfinite(t)
    ranges = t[keep]
    sigma = scene.noise_factor * scene.noise.sigma0_range
    if sigma > 0:
        rng = scene.frame_rng(idx, pose_index, frame_index)
        ranges = ranges + rng.normal(0.0, sigma, size=len(ranges))
    xyz = dirs_local[keep] * ranges[:, None]
    return PointCloud(
        xyz=xyz,
        ring=rings[keep],
        ranges=ranges,
        azimuth=az_idx[keep],
        wrap=n_az,
        surface=surface[keep],
    )


def simulate_marker_detections(scene, sensor, pose_index=0, frame_index=0):
    """Project the marker corners into the camera and jitter them.

    Markers with any corner behind the camera or outside the image are
    dropped; the result can be empty.
    """
    idx, s = _sensor_index(scene, sensor)
    if s.kind != "monocular":
        raise ValueError(f"sensor {s.name} is not a monocular camera")
    cam = s.camera
    board = scene.board_frame(pose_index)
    to_optical = s.data_frame().inverse().compose(board)
    sigma = scene.noise_factor * scene.noise.sigma0_pixel
    rng = scene.frame_rng(idx, pose_index, frame_index) if sigma > 0 else None
    corners = {}
    for mid in range(4):
        pts_cam = to_optical.apply(scene.target.marker_corners(mid))
        if np.any(pts_cam[:, 2] <= 1e-9):
            continue
        uv = np.column_stack([
            cam.fx * pts_cam[:, 0] / pts_cam[:, 2] + cam.cx,
            cam.fy * pts_cam[:, 1] / pts_cam[:, 2] + cam.cy,
        ])
        if rng is not None:
            uv = uv + rng.normal(0.0, sigma, size=uv.shape)
        if np.any(uv[:, 0] < 0) or np.any(uv[:, 0] >= cam.width) or \
           np.any(uv[:, 1] < 0) or np.any(uv[:, 1] >= cam.height):
            continue
        corners[mid] = uv
    return MarkerDetections(corners, frame=frame_index)


def simulate_range_cloud(scene, sensor, pose_index=0, frame_index=0):
    """Dense organized cloud plus intensity image for the stereo branch.

    One ray per pixel; depth noise grows with the square of the depth,
    mimicking triangulation error, and displaces points along their ray
    so the pixel<->point association stays exact. The image renders
    board, hole interiors (wall seen through the hole) and background
    wall as three gray levels.
    """
    idx, s = _sensor_index(scene, sensor)
    if s.kind != "stereo-range":
        raise ValueError(f"sensor {s.name} is not a stereo-range camera")
    cam = s.camera
    uu, vv = np.meshgrid(np.arange(cam.width), np.arange(cam.height), indexing="xy")
    uu = uu.ravel()
    vv = vv.ravel()
    dirs_opt = np.column_stack([
        (uu - cam.cx) / cam.fx,
        (vv - cam.cy) / cam.fy,
        np.ones(uu.size),
    ])
    frame = s.data_frame()
    dirs_world = dirs_opt @ frame.rotation.T
    t, surface = _cast_rays(scene, pose_index, frame.translation, dirs_world)

    # classify hole interiors for rendering: board-plane hits inside a hole
    board = scene.board_frame(pose_index)
    plane = scene.board_plane(pose_index)
    denom = dirs_world @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = -(frame.translation @ plane.normal + plane.d) / denom
    hits = frame.translation + t_plane[:, None] * dirs_world
    local = board.inverse().apply(hits)
    through_hole = np.zeros(uu.size, dtype=bool)
    for hx, hy in scene.target.hole_center_offsets:
        d2 = (local[:, 0] - hx) ** 2 + (local[:, 1] - hy) ** 2
        through_hole |= (d2 <= scene.target.hole_radius**2) & (t_plane > 0)

    gray = np.full(uu.size, _GRAY_WALL, dtype=np.uint8)
    gray[surface == SURFACE_BOARD] = _GRAY_BOARD
    gray[(surface == SURFACE_WALL) & through_hole] = _GRAY_HOLE
    image = IntensityImage(gray.reshape(cam.height, cam.width))

    keep = np.isfinite(t)
    depth = t[keep]  # dirs have unit z, so t is the optical-frame depth
    sigma0 = scene.noise_factor * scene.noise.sigma0_stereo
    if sigma0 > 0:
        rng = scene.frame_rng(idx, pose_index, frame_index)
        depth = depth + rng.normal(0.0, 1.0, size=len(depth)) * sigma0 * depth**2
    xyz = dirs_opt[keep] * depth[:, None]
    cloud = PointCloud(
        xyz=xyz,
        pixel=np.column_stack([uu[keep], vv[keep]]),
        surface=surface[keep],
    )
    return cloud, image


def ground_truth(scene, sensor_a, sensor_b):
    """Exact relative transform between two sensors' data frames.

    Maps points from B's frame into A's: p_a = T(p_b).
    """
    _, a = _sensor_index(scene, sensor_a)
    _, b = _sensor_index(scene, sensor_b)
    return a.data_frame().inverse().compose(b.data_frame())


def suggested_bounds(scene, sensor, pose_index, margin=0.3):
    """Crop box, in the sensor's data frame, hugging one target pose.

    Deliberately excludes the wall: edge extraction sees the full cloud
    before cropping, so only board points need to survive the crop, and
    a tight box keeps the wall from competing in the plane fit.
    """
    s = scene.sensor(sensor)
    board = scene.board_frame(pose_index)
    w, h = scene.target.board_width / 2, scene.target.board_height / 2
    corners = np.array([[sx * w, sy * h, 0.0] for sx in (-1, 1) for sy in (-1, 1)])
    world = board.apply(corners)
    local = s.data_frame().inverse().apply(world)
    lo = local.min(axis=0) - margin
    hi = local.max(axis=0) + margin
    return PassThroughBounds((lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2]))


# Sensor presets: rotating scanners by layer geometry, cameras by
# resolution and horizontal FOV.
def _camera_from_hfov(width, height, hfov_deg):
    fx = (width / 2) / np.tan(np.radians(hfov_deg) / 2)
    return CameraIntrinsics(fx=fx, fy=fx, cx=width / 2, cy=height / 2,
                            width=width, height=height)


SENSOR_PRESETS = {
    "vlp16": {"kind": "lidar", "lidar": LidarModel(16, (-15.0, 15.0), 0.2)},
    "hdl32": {"kind": "lidar", "lidar": LidarModel(32, (-30.67, 10.67), 0.2)},
    "hdl64": {"kind": "lidar", "lidar": LidarModel(64, (-24.9, 2.0), 0.2)},
    "blackfly": {"kind": "monocular", "camera": _camera_from_hfov(2048, 1536, 85.0)},
    "bumblebee": {"kind": "stereo-range", "camera": _camera_from_hfov(1280, 960, 43.0)},
}

# Single-sensor evaluation poses: target in sensor coordinates.
TARGET_POSES = {
    "P1": (2.00, 0.00, -0.50, 0.0, 0.0, 0.0),
    "P2": (3.63, -0.50, -0.28, 0.8, 0.0, 0.0),
    "P3": (5.38, -0.10, -0.50, 0.0, -0.2, 0.0),
    "P4": (6.50, -1.39, -1.43, 0.0, 0.0, -0.4),
}

# Sensor-pair mounting offsets for the calibration scenarios.
SENSOR_MOUNTS = {
    "P1": (-0.300, 0.200, -0.200, 0.300, -0.100, 0.200),
    "P2": (-0.128, 0.418, -0.314, -0.103, -0.299, 0.110),
    "P3": (-0.433, 0.845, 1.108, -0.672, 0.258, 0.075),
}

# Spread of target placements for multi-pose calibration: varied depth,
# lateral offset and orientation so the stacked reference points are far
# from coplanar. Depths stay within the range where at least two scan
# rings of a 64-layer unit cross every hole.
MULTI_POSE_TARGETS = (
    (2.0, 0.0, -0.5, 0.0, 0.0, 0.0),
    (3.2, 1.2, -0.4, 0.4, 0.0, 0.15),
    (4.0, -1.5, -0.8, -0.3, 0.1, -0.2),
    (4.6, 0.8, -0.3, 0.2, -0.15, 0.1),
    (5.2, -0.5, -0.7, 0.0, 0.1, 0.3),
)


def make_sensor(name, preset, pose=(0, 0, 0, 0, 0, 0)):
    """Sensor from a preset name and a vehicle-frame mounting pose."""
    spec = SENSOR_PRESETS[preset]
    return SensorModel(name=name, kind=spec["kind"],
                       pose=RigidTransform.from_params(pose),
                       lidar=spec.get("lidar"), camera=spec.get("camera"))


def scene_to_dict(scene):
    sensors = []
    for s in scene.sensors:
        d = {"name": s.name, "kind": s.kind,
             "pose": [float(v) for v in s.pose.params]}
        if s.lidar is not None:
            d["lidar"] = {"layers": s.lidar.layers,
                          "vfov_deg": list(s.lidar.vfov_deg),
                          "azimuth_res_deg": s.lidar.azimuth_res_deg}
        if s.camera is not None:
            d["camera"] = s.camera.to_dict()
        sensors.append(d)
    return {
        "name": scene.name,
        "seed": scene.seed,
        "noise_factor": scene.noise_factor,
        "noise": {"sigma0_range": scene.noise.sigma0_range,
                  "sigma0_pixel": scene.noise.sigma0_pixel,
                  "sigma0_stereo": scene.noise.sigma0_stereo},
        "wall_offset": scene.wall_offset,
        "wall_scale": scene.wall_scale,
        "target": scene.target.to_dict(),
        "target_poses": [[float(v) for v in p.params] for p in scene.target_poses],
        "sensors": sensors,
    }


def scene_from_dict(d):
    sensors = []
    for sd in d["sensors"]:
        if "preset" in sd:
            sensors.append(make_sensor(sd["name"], sd["preset"],
                                       sd.get("pose", (0, 0, 0, 0, 0, 0))))
            continue
        lidar = None
        camera = None
        if "lidar" in sd:
            ld = sd["lidar"]
            lidar = LidarModel(ld["layers"], tuple(ld["vfov_deg"]), ld["azimuth_res_deg"])
        if "camera" in sd:
            camera = CameraIntrinsics.from_dict(sd["camera"])
        sensors.append(SensorModel(
            name=sd["name"], kind=sd["kind"],
            pose=RigidTransform.from_params(sd.get("pose", (0, 0, 0, 0, 0, 0))),
            lidar=lidar, camera=camera))
    noise = NoiseModel(**d.get("noise", {}))
    return Scene(
        sensors=sensors,
        target_poses=[RigidTransform.from_params(p) for p in d["target_poses"]],
        target=TargetGeometry.from_dict(d["target"]) if "target" in d else TargetGeometry(),
        wall_offset=d.get("wall_offset", 1.0),
        wall_scale=d.get("wall_scale", 4.0),
        noise=noise,
        noise_factor=d.get("noise_factor", 1.0),
        seed=d.get("seed", 0),
        name=d.get("name", ""),
    )


def load_scene(path):
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene, path):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)
        fh.write("\n")
