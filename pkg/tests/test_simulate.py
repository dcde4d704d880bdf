import numpy as np
import pytest

from crosscal.cloud import lidar_edge_filter
from crosscal.geometry import RigidTransform, angular_error, linear_error
from crosscal.monocular import CameraIntrinsics, project_pinhole
from crosscal.simulate import (LidarModel, Scene, SensorModel, TARGET_POSES,
                               SENSOR_MOUNTS, ground_truth, make_sensor,
                               scene_from_dict, scene_to_dict,
                               simulate_lidar_frame, simulate_marker_detections,
                               simulate_range_cloud, suggested_bounds,
                               SURFACE_BOARD, SURFACE_WALL)

SMALL_CAM = CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0, width=320, height=240)


def lidar_scene(preset="hdl64", pose="P1", k=0.0, seed=0):
    return Scene(sensors=[make_sensor("velo", preset)],
                 target_poses=[RigidTransform.from_params(TARGET_POSES[pose])],
                 noise_factor=k, seed=seed)


def mono_scene(pose="P1", k=0.0, seed=0, mount=(0, 0, 0, 0, 0, 0)):
    return Scene(sensors=[make_sensor("cam", "blackfly", mount)],
                 target_poses=[RigidTransform.from_params(TARGET_POSES[pose])],
                 noise_factor=k, seed=seed)


def board_local(scene, cloud, pose=0):
    """Board-frame coordinates of each point's ray intersection with the
    board plane (sensor mounted at identity)."""
    board = scene.board_frame(pose)
    plane = scene.board_plane(pose)
    dirs = cloud.xyz / np.linalg.norm(cloud.xyz, axis=1, keepdims=True)
    t = -plane.d / (dirs @ plane.normal)
    return board.inverse().apply(t[:, None] * dirs)


def test_lidar_frame_deterministic():
    a = simulate_lidar_frame(lidar_scene(k=1.0, seed=9), "velo", 0, 3)
    b = simulate_lidar_frame(lidar_scene(k=1.0, seed=9), "velo", 0, 3)
    assert np.array_equal(a.xyz, b.xyz)
    assert np.array_equal(a.ranges, b.ranges)
    c = simulate_lidar_frame(lidar_scene(k=1.0, seed=10), "velo", 0, 3)
    assert not np.array_equal(a.xyz, c.xyz)


def test_frames_differ_only_by_noise_stream():
    scene = lidar_scene(k=1.0, seed=0)
    a = simulate_lidar_frame(scene, "velo", 0, 0)
    b = simulate_lidar_frame(scene, "velo", 0, 1)
    assert np.array_equal(a.ring, b.ring)  # geometry identical
    assert not np.array_equal(a.ranges, b.ranges)  # independent noise


def test_zero_noise_points_lie_on_exactly_one_plane():
    scene = lidar_scene(k=0.0)
    cloud = simulate_lidar_frame(scene, "velo")
    d_board = np.abs(scene.board_plane(0).signed_distance(cloud.xyz))
    d_wall = np.abs(scene.wall_plane(0).signed_distance(cloud.xyz))
    on_board = d_board < 1e-9
    on_wall = d_wall < 1e-9
    assert np.all(on_board ^ on_wall)
    assert np.array_equal(on_board, cloud.surface == SURFACE_BOARD)


def test_range_attribute_matches_norm():
    cloud = simulate_lidar_frame(lidar_scene(k=1.0), "velo")
    assert np.abs(cloud.ranges - np.linalg.norm(cloud.xyz, axis=1)).max() < 1e-6


def test_ray_through_hole_reaches_wall():
    scene = lidar_scene(k=0.0)
    cloud = simulate_lidar_frame(scene, "velo")
    local = board_local(scene, cloud)
    for hx, hy in scene.target.hole_center_offsets:
        d = np.hypot(local[:, 0] - hx, local[:, 1] - hy)
        through = d <= scene.target.hole_radius - 1e-6
        assert through.any()
        assert np.all(cloud.surface[through] == SURFACE_WALL)
        # the range jump across the rim is at least the wall standoff
        rim_board = (cloud.surface == SURFACE_BOARD) & (d <= scene.target.hole_radius + 0.05)
        assert cloud.ranges[through].min() > cloud.ranges[rim_board].max()
        gap = cloud.ranges[through].min() - cloud.ranges[rim_board].max()
        assert gap >= scene.wall_offset * 0.5


def test_zero_noise_gradient_only_at_borders():
    # Eq. 1 on clean rings fires exactly where a board point borders a
    # through-hole or silhouette wall point
    scene = lidar_scene(k=0.0)
    cloud = simulate_lidar_frame(scene, "velo")
    edges = lidar_edge_filter(cloud, 0.10)
    assert np.all(edges.surface == SURFACE_BOARD)
    # oracle: a board point is a border iff an adjacent azimuth index in
    # its ring is a wall hit (or missing ray behind an occlusion)
    expected = set()
    by_ring = {}
    for i in range(len(cloud)):
        by_ring.setdefault(cloud.ring[i], {})[cloud.azimuth[i]] = i
    for ring, members in by_ring.items():
        for az, i in members.items():
            if cloud.surface[i] != SURFACE_BOARD:
                continue
            for nb in ((az - 1) % cloud.wrap, (az + 1) % cloud.wrap):
                j = members.get(nb)
                if j is not None and cloud.surface[j] == SURFACE_WALL and \
                        cloud.ranges[j] - cloud.ranges[i] >= 0.10:
                    expected.add(i)
    got = set()
    index_of = {(r, a): i for i, (r, a) in enumerate(zip(cloud.ring, cloud.azimuth))}
    for r, a in zip(edges.ring, edges.azimuth):
        got.add(index_of[(r, a)])
    assert got == expected


def test_border_gap_equals_wall_distance():
    # at zero noise the discontinuity value of each border point equals
    # the along-ray board-to-wall distance of its wall neighbor, exactly
    from crosscal.cloud import depth_discontinuity

    scene = lidar_scene(k=0.0)
    cloud = simulate_lidar_frame(scene, "velo")
    disc = depth_discontinuity(cloud)
    members = {}
    for i in range(len(cloud)):
        members.setdefault(cloud.ring[i], {})[cloud.azimuth[i]] = i
    checked = 0
    for i in np.flatnonzero(disc >= 0.10):
        assert cloud.surface[i] == SURFACE_BOARD
        gaps = []
        ring = members[cloud.ring[i]]
        for nb in ((cloud.azimuth[i] - 1) % cloud.wrap, (cloud.azimuth[i] + 1) % cloud.wrap):
            j = ring.get(nb)
            if j is not None:
                gaps.append(cloud.ranges[j] - cloud.ranges[i])
        assert disc[i] == max(max(gaps), 0.0)
        checked += 1
    assert checked > 100


def test_vlp16_cannot_cover_holes_at_far_pose():
    scene = lidar_scene(preset="vlp16", pose="P3", k=0.0)
    cloud = simulate_lidar_frame(scene, "velo")
    local = board_local(scene, cloud)
    for hx, hy in scene.target.hole_center_offsets:
        d = np.hypot(local[:, 0] - hx, local[:, 1] - hy)
        through = (d <= scene.target.hole_radius) & (cloud.surface == SURFACE_WALL)
        rings = np.unique(cloud.ring[through])
        assert len(rings) < 2


def test_hole_visibility_rule_on_close_pose():
    # at the closest pose every hole is crossed by at least two rings of
    # a 64-layer unit and contributes at least three edge points
    scene = lidar_scene(preset="hdl64", pose="P1", k=0.0)
    cloud = simulate_lidar_frame(scene, "velo")
    edges = lidar_edge_filter(cloud, 0.10)
    local = board_local(scene, cloud)
    board = scene.board_frame(0)
    holes = board.apply(np.column_stack([scene.target.hole_center_offsets, np.zeros(4)]))
    for h in holes:
        d = np.linalg.norm(edges.xyz - h, axis=1)
        near = d <= 1.3 * scene.target.hole_radius
        assert near.sum() >= 3
        assert len(np.unique(edges.ring[near])) >= 2


def test_marker_detections_zero_noise_reproject_exactly():
    scene = mono_scene(k=0.0)
    det = simulate_marker_detections(scene, "cam", 0, 0)
    assert sorted(det.corners) == [0, 1, 2, 3]
    cam = scene.sensor("cam")
    to_optical = cam.data_frame().inverse().compose(scene.board_frame(0))
    for mid, uv in det.corners.items():
        pred = project_pinhole(cam.camera, to_optical.apply(scene.target.marker_corners(mid)))
        assert np.abs(pred - uv).max() < 1e-9


def test_marker_detections_empty_when_behind():
    front = Scene(sensors=[make_sensor("cam", "blackfly")],
                  target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
                  noise_factor=0.0, seed=0)
    assert len(simulate_marker_detections(front, "cam", 0, 0)) == 4
    # board behind the camera: its front still faces the sensor position
    # (valid scene), but the optical axis points the other way
    behind = Scene(sensors=[make_sensor("cam", "blackfly")],
                   target_poses=[RigidTransform.from_params((-2.0, 0, -0.5, 0, 0, np.pi))],
                   noise_factor=0.0, seed=0)
    assert len(simulate_marker_detections(behind, "cam", 0, 0)) == 0


def test_marker_jitter_scales_with_k():
    base = mono_scene(k=0.0)
    exact = simulate_marker_detections(base, "cam", 0, 0)
    noisy = mono_scene(k=2.0, seed=1)
    sigma0 = noisy.noise.sigma0_pixel
    samples = []
    for f in range(1000):
        det = simulate_marker_detections(noisy, "cam", 0, f)
        for mid, uv in det.corners.items():
            samples.append(uv - exact.corners[mid])
    resid = np.concatenate(samples).ravel()
    n = resid.size
    std = resid.std()
    target = 2.0 * sigma0
    # chi-square bound on the sample std at this n is far tighter than 5%
    assert abs(std - target) / target < 0.05


def test_range_cloud_board_pixels_on_plane():
    scene = Scene(sensors=[SensorModel("st", "stereo-range", RigidTransform.identity(),
                                       camera=SMALL_CAM)],
                  target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
                  noise_factor=0.0, seed=0)
    cloud, image = simulate_range_cloud(scene, "st", 0, 0)
    board_pts = cloud.xyz[cloud.surface == SURFACE_BOARD]
    world = scene.sensor("st").data_frame().apply(board_pts)
    assert np.abs(scene.board_plane(0).signed_distance(world)).max() < 1e-9
    assert len(np.unique(image.pixels)) == 3


def test_range_cloud_hole_interiors_hit_wall():
    scene = Scene(sensors=[SensorModel("st", "stereo-range", RigidTransform.identity(),
                                       camera=SMALL_CAM)],
                  target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
                  noise_factor=0.0, seed=0)
    cloud, _ = simulate_range_cloud(scene, "st", 0, 0)
    cam = scene.sensor("st")
    to_optical = cam.data_frame().inverse().compose(scene.board_frame(0))
    hole_cam = to_optical.apply(np.append(scene.target.hole_center_offsets[0], 0.0))
    uv = project_pinhole(SMALL_CAM, hole_cam)
    sel = np.all(np.rint(cloud.pixel) == np.rint(uv), axis=1)
    assert sel.sum() == 1
    world = cam.data_frame().apply(cloud.xyz[sel][0])
    assert abs(scene.wall_plane(0).signed_distance(world)) < 1e-9


def test_range_cloud_depth_noise_grows_quadratically():
    def depth_residual_var(depth):
        pose = RigidTransform.from_params((depth, 0.0, -0.5, 0, 0, 0))
        clean = Scene(sensors=[SensorModel("st", "stereo-range", RigidTransform.identity(),
                                           camera=SMALL_CAM)],
                      target_poses=[pose], noise_factor=0.0, seed=5)
        noisy = Scene(sensors=[SensorModel("st", "stereo-range", RigidTransform.identity(),
                                           camera=SMALL_CAM)],
                      target_poses=[pose], noise_factor=1.0, seed=5)
        c0, _ = simulate_range_cloud(clean, "st", 0, 0)
        c1, _ = simulate_range_cloud(noisy, "st", 0, 0)
        sel = c0.surface == SURFACE_BOARD
        return np.var(c1.xyz[sel, 2] - c0.xyz[sel, 2])

    assert depth_residual_var(4.0) >= 4.0 * depth_residual_var(2.0)


def test_ground_truth_identity_and_inverse():
    scene = Scene(sensors=[make_sensor("a", "hdl64"), make_sensor("b", "hdl64")],
                  target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
                  noise_factor=0.0, seed=0)
    gt = ground_truth(scene, "a", "b")
    assert np.abs(gt.matrix - np.eye(4)).max() < 1e-12

    scene2 = Scene(sensors=[make_sensor("a", "hdl64"),
                            make_sensor("b", "hdl64", SENSOR_MOUNTS["P1"])],
                   target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
                   noise_factor=0.0, seed=0)
    gt_ab = ground_truth(scene2, "a", "b")
    assert np.allclose(gt_ab.params, SENSOR_MOUNTS["P1"], atol=1e-12)
    gt_ba = ground_truth(scene2, "b", "a")
    assert np.abs(gt_ab.matrix - gt_ba.inverse().matrix).max() < 1e-12


def test_ground_truth_between_data_frames():
    # lidar/camera ground truth maps camera-optical points into the
    # lidar frame: verify on the hole centers
    scene = Scene(sensors=[make_sensor("velo", "hdl64"),
                           make_sensor("cam", "blackfly", SENSOR_MOUNTS["P2"])],
                  target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
                  noise_factor=0.0, seed=0)
    holes_world = scene.board_frame(0).apply(
        np.column_stack([scene.target.hole_center_offsets, np.zeros(4)]))
    in_lidar = scene.sensor("velo").data_frame().inverse().apply(holes_world)
    in_cam = scene.sensor("cam").data_frame().inverse().apply(holes_world)
    gt = ground_truth(scene, "velo", "cam")
    assert np.abs(gt.apply(in_cam) - in_lidar).max() < 1e-12


def test_scene_rejects_sensor_behind_target():
    with pytest.raises(ValueError):
        Scene(sensors=[make_sensor("velo", "hdl64", (5.0, 0, 0, 0, 0, 0))],
              target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
              noise_factor=0.0, seed=0)


def test_lidar_model_validation():
    with pytest.raises(ValueError):
        LidarModel(1, (-15.0, 15.0), 0.2)
    with pytest.raises(ValueError):
        LidarModel(16, (15.0, -15.0), 0.2)


def test_scene_json_round_trip():
    scene = Scene(sensors=[make_sensor("velo", "hdl64"),
                           make_sensor("cam", "blackfly", SENSOR_MOUNTS["P1"])],
                  target_poses=[RigidTransform.from_params(TARGET_POSES["P1"])],
                  noise_factor=1.5, seed=42, name="demo")
    again = scene_from_dict(scene_to_dict(scene))
    assert again.seed == 42 and again.noise_factor == 1.5 and again.name == "demo"
    a = simulate_lidar_frame(scene, "velo", 0, 0)
    b = simulate_lidar_frame(again, "velo", 0, 0)
    assert np.array_equal(a.xyz, b.xyz)


def test_suggested_bounds_cover_board_not_wall():
    scene = lidar_scene(k=0.0)
    bounds = suggested_bounds(scene, "velo", 0)
    cloud = simulate_lidar_frame(scene, "velo")
    inside = bounds.contains(cloud.xyz)
    assert np.all(cloud.surface[inside] == SURFACE_BOARD)
    assert inside.sum() > 0.95 * (cloud.surface == SURFACE_BOARD).sum()
