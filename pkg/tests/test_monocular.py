import numpy as np
import pytest

from crosscal.errors import FrameRejected
from crosscal.geometry import RigidTransform, angular_error, linear_error
from crosscal.monocular import (BoardPose, CameraIntrinsics, MarkerDetections,
                                _residual_jacobian, derive_hole_centers,
                                extract_mono_frame, initial_board_pose,
                                project_pinhole, refine_board_pose_lm)
from crosscal.target import TargetGeometry

CAM = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=640.0, cy=480.0, width=1280, height=960)
GEOM = TargetGeometry()


def project_board(pose, geometry=GEOM, intrinsics=CAM, jitter=0.0, rng=None):
    """Forward-projection oracle: exact marker detections for a pose."""
    corners = {}
    for mid in range(4):
        pts = pose.apply(geometry.marker_corners(mid))
        uv = project_pinhole(intrinsics, pts)
        if jitter > 0:
            uv = uv + rng.normal(0, jitter, uv.shape)
        corners[mid] = uv
    return MarkerDetections(corners)


def board_pose(tx=0.0, ty=0.0, tz=3.0, rx=0.0, ry=0.0, rz=0.0):
    return RigidTransform.from_params([tx, ty, tz, rx, ry, rz])


def test_pinhole_optical_axis():
    assert np.allclose(project_pinhole(CAM, [0, 0, 1]), [640, 480])


def test_pinhole_linear_offset():
    assert np.allclose(project_pinhole(CAM, [0.1, 0, 1]), [740, 480])


def test_pinhole_behind_camera():
    with pytest.raises(ValueError):
        project_pinhole(CAM, [0, 0, -1])


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1, fy=1, cx=20, cy=0, width=10, height=10)


def test_initial_pose_recovers_exact_translation():
    pose = board_pose()
    est = initial_board_pose(project_board(pose), CAM, GEOM)
    assert linear_error(est.translation, pose.translation) < 1e-6
    assert angular_error(est.rotation, pose.rotation) < 1e-6


def test_initial_pose_single_marker():
    pose = board_pose(0.2, -0.1, 2.5, 0.1, 0.05, -0.1)
    det = project_board(pose)
    det = MarkerDetections({0: det.corners[0]})
    est = initial_board_pose(det, CAM, GEOM)
    assert linear_error(est.translation, pose.translation) < 1e-4


def test_initial_pose_collinear_corners_rejected():
    fake = np.array([[100.0, 100.0], [200.0, 200.0], [300.0, 300.0], [400.0, 400.0]])
    with pytest.raises(ValueError):
        initial_board_pose(MarkerDetections({0: fake}), CAM, GEOM)


def test_initial_pose_no_markers():
    with pytest.raises(FrameRejected):
        initial_board_pose(MarkerDetections({}), CAM, GEOM)


def test_lm_recovers_pose_from_perturbed_guess():
    rng = np.random.default_rng(0)
    for _ in range(10):
        pose = board_pose(*rng.uniform(-0.3, 0.3, 2), rng.uniform(2, 4),
                          *rng.uniform(-0.3, 0.3, 3))
        det = project_board(pose)
        delta = np.concatenate([rng.uniform(-0.05, 0.05, 3), rng.uniform(-0.05, 0.05, 3)])
        init = RigidTransform.from_params(pose.params + delta)
        refined = refine_board_pose_lm(init, det, CAM, GEOM)
        assert linear_error(refined.transform.translation, pose.translation) < 1e-4
        assert angular_error(refined.transform.rotation, pose.rotation) < 1e-4
        assert refined.rms < 1e-6


def test_lm_exact_initial_guess_is_fixed_point():
    pose = board_pose(0.1, 0.0, 2.0, 0.0, 0.1, 0.0)
    refined = refine_board_pose_lm(pose, project_board(pose), CAM, GEOM)
    assert refined.rms < 1e-9
    assert linear_error(refined.transform.translation, pose.translation) < 1e-9


def test_lm_rms_tracks_pixel_jitter():
    rng = np.random.default_rng(1)
    sigma = 0.5
    rmss = []
    errs = []
    for _ in range(100):
        pose = board_pose(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                          rng.uniform(2.0, 3.5))
        det = project_board(pose, jitter=sigma, rng=rng)
        init = initial_board_pose(det, CAM, GEOM)
        refined = refine_board_pose_lm(init, det, CAM, GEOM)
        rmss.append(refined.rms)
        errs.append(linear_error(refined.transform.translation, pose.translation))
    mean_rms = float(np.mean(rmss))
    assert 0.5 * sigma < mean_rms < 1.5 * sigma
    # pose error stays bounded at this jitter level (regression tracked)
    assert np.mean(errs) < 0.02


def test_lm_never_increases_rms_over_initial():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pose = board_pose(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                          rng.uniform(2, 4), *rng.uniform(-0.2, 0.2, 3))
        det = project_board(pose, jitter=1.0, rng=rng)
        init = initial_board_pose(det, CAM, GEOM)
        obj_img = [(mid, det.corners[mid]) for mid in det.corners]

        def rms_of(transform):
            total, count = 0.0, 0
            for mid, uv in obj_img:
                pred = project_pinhole(CAM, transform.apply(GEOM.marker_corners(mid)))
                total += ((pred - uv) ** 2).sum()
                count += uv.size
            return np.sqrt(total / count)

        refined = refine_board_pose_lm(init, det, CAM, GEOM)
        assert refined.rms <= rms_of(init) + 1e-12


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(3)
    obj = np.vstack([GEOM.marker_corners(m) for m in range(4)])
    for _ in range(20):
        pose = board_pose(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                          rng.uniform(2, 4), *rng.uniform(-0.3, 0.3, 3))
        img = project_pinhole(CAM, pose.apply(obj))
        res, jac, _ = _residual_jacobian(pose.rotation, pose.translation, CAM, obj, img)
        h = 1e-6
        from crosscal.geometry import rotation_axis_angle
        for k in range(6):
            dv = np.zeros(6)
            dv[k] = h

            def residual(step):
                rot = rotation_axis_angle(step[3:6]) @ pose.rotation
                t = pose.translation + step[0:3]
                pred = project_pinhole(CAM, obj @ rot.T + t)
                return (pred - img).reshape(-1)

            fd = (residual(dv) - residual(-dv)) / (2 * h)
            denom = np.maximum(1.0, np.abs(fd))
            assert (np.abs(jac[:, k] - fd) / denom).max() < 1e-5


def test_derive_hole_centers_identity():
    rps = derive_hole_centers(BoardPose(RigidTransform.identity(), 0.0), GEOM)
    assert np.allclose(rps.centers[:, :2], GEOM.hole_center_offsets)
    assert np.allclose(rps.centers[:, 2], 0)


def test_derive_hole_centers_translation():
    pose = BoardPose(board_pose(tz=3.0), 0.0)
    rps = derive_hole_centers(pose, GEOM)
    assert np.allclose(rps.centers[:, 2], 3.0)
    assert np.allclose(rps.centers[:, :2], GEOM.hole_center_offsets)


def test_derive_hole_centers_preserves_distances():
    pose = BoardPose(board_pose(0.4, -0.2, 2.7, 0.3, -0.2, 0.5), 0.0)
    rps = derive_hole_centers(pose, GEOM)
    w, h = GEOM.centers_width, GEOM.centers_height
    tl, tr, bl, br = rps.centers
    assert abs(np.linalg.norm(tl - tr) - w) < 1e-12
    assert abs(np.linalg.norm(tl - bl) - h) < 1e-12
    assert abs(np.linalg.norm(tl - br) - GEOM.diagonal) < 1e-12


def test_derived_centers_pass_consistency_check():
    from crosscal.segmentation import Circle2D, geometric_consistency_select

    pose = BoardPose(board_pose(0.3, -0.2, 2.8, 0.25, -0.15, 0.4), 0.0)
    rps = derive_hole_centers(pose, GEOM)
    # the four centers form the exact board rectangle: feeding their
    # board-plane coordinates back through the dimension check passes
    circles = [Circle2D((float(x), float(y)), GEOM.hole_radius, 10)
               for x, y in GEOM.hole_center_offsets]
    chosen = geometric_consistency_select(circles, GEOM, 1e-9)
    assert len(chosen) == 4
    # and the 3D distances match the geometry to machine precision
    tl, tr, bl, br = rps.centers
    assert abs(np.linalg.norm(tl - tr) - GEOM.centers_width) < 1e-12
    assert abs(np.linalg.norm(bl - br) - GEOM.centers_width) < 1e-12


def test_pose_error_shrinks_with_marker_projection_size():
    # larger marker projections (closer board) give better pose recovery
    # at the same pixel jitter
    rng = np.random.default_rng(9)
    sigma = 0.5

    def mean_error(depth, trials=40):
        errs = []
        for _ in range(trials):
            pose = board_pose(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), depth)
            det = project_board(pose, jitter=sigma, rng=rng)
            init = initial_board_pose(det, CAM, GEOM)
            refined = refine_board_pose_lm(init, det, CAM, GEOM)
            errs.append(linear_error(refined.transform.translation, pose.translation))
        return float(np.mean(errs))

    near, far = mean_error(2.0), mean_error(6.0)
    assert near < far


def test_extract_mono_frame_end_to_end():
    pose = board_pose(0.2, -0.3, 3.2, 0.2, -0.1, 0.15)
    rps = extract_mono_frame(project_board(pose), CAM, GEOM)
    expected = pose.apply(np.column_stack([GEOM.hole_center_offsets, np.zeros(4)]))
    assert np.abs(rps.centers - expected).max() < 1e-6
