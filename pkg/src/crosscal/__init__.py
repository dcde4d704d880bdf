"""Target-based extrinsic calibration for LiDAR / camera sensor pairs.

Two stages: per-sensor extraction of the four hole centers of a
perforated calibration board, then closed-form rigid registration of the
labeled center sets. A native scene simulator with exact ground truth
supports systematic evaluation.
"""

from .aggregation import (AccumulatedCloud, ClusterParams, LabeledCenters,
                          accumulate_frames, accumulate_poses, associate_labels,
                          consolidate_centers, euclidean_cluster)
from .cloud import (IntensityImage, PassThroughBounds, PointCloud,
                    depth_discontinuity, edge_mask_filter, lidar_edge_filter,
                    passthrough_filter, sobel_magnitude)
from .config import CalibConfig, load_config
from .errors import CalibrationError, FrameRejected, PoseRejected
from .geometry import (PlaneModel, RigidTransform, SphericalPoint, angular_error,
                       from_spherical, linear_error, to_spherical)
from .monocular import (BoardPose, CameraIntrinsics, MarkerDetections,
                        derive_hole_centers, extract_mono_frame, initial_board_pose,
                        project_pinhole, refine_board_pose_lm)
from .pipeline import SensorRecording, extract_frame, extract_pose, extract_recording
from .registration import (CalibrationResult, CorrespondenceSet,
                           build_correspondences, calibrate, register,
                           registration_rmse, umeyama_rigid)
from .segmentation import (Circle2D, geometric_consistency_select, lift_to_3d,
                           plane_inlier_filter, project_to_plane_2d,
                           ransac_circles_iterative, ransac_plane_vertical,
                           segment_target)
from .simulate import (LidarModel, NoiseModel, Scene, SensorModel, ground_truth,
                       make_sensor, simulate_lidar_frame, simulate_marker_detections,
                       simulate_range_cloud, suggested_bounds)
from .target import LABELS, ReferencePointSet, TargetGeometry

__version__ = "0.1.0"
