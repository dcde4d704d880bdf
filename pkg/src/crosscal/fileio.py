"""On-disk formats shared across the tools.

Clouds are plain text: optional ``# wrap N`` metadata, a header line
declaring the columns present (out of x y z ring range u v az), then one
point per line. Images are PGM (binary P5 written, P2 also read).
Detections, intrinsics, scenes and manifests are JSON. Calibration
results and ground-truth transforms are key-value text with a row-major
4x4 matrix block.

All writers format floats with repr-stable precision and avoid
timestamps, so identical inputs yield byte-identical files.
"""

import json
import os

import numpy as np

from .aggregation import LabeledCenters
from .cloud import IntensityImage, PassThroughBounds, PointCloud
from .geometry import RigidTransform
from .monocular import CameraIntrinsics, MarkerDetections
from .pipeline import SensorRecording
from .simulate import (ground_truth, scene_to_dict, simulate_lidar_frame,
                       simulate_marker_detections, simulate_range_cloud,
                       suggested_bounds)
from .target import LABELS


def _fmt(x):
    return format(float(x), ".10g")


# -- point clouds ------------------------------------------------------

_CLOUD_COLUMNS = ("x", "y", "z", "ring", "range", "u", "v", "az")


def write_cloud(cloud, path):
    cols = ["x", "y", "z"]
    data = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]]
    if cloud.ring is not None:
        cols.append("ring")
        data.append(cloud.ring)
    if cloud.ranges is not None:
        cols.append("range")
        data.append(cloud.ranges)
    if cloud.pixel is not None:
        cols.extend(["u", "v"])
        data.append(cloud.pixel[:, 0])
        data.append(cloud.pixel[:, 1])
    if cloud.azimuth is not None:
        cols.append("az")
        data.append(cloud.azimuth)
    with open(path, "w") as fh:
        if cloud.wrap is not None:
            fh.write(f"# wrap {cloud.wrap}\n")
        fh.write(" ".join(cols) + "\n")
        for row in zip(*data):
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_cloud(path):
    wrap = None
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "wrap":
                    wrap = int(parts[1])
                continue
            if header is None:
                header = line.split()
                unknown = set(header) - set(_CLOUD_COLUMNS)
                if unknown or header[:3] != ["x", "y", "z"]:
                    raise ValueError(f"bad cloud header: {line!r}")
                continue
            rows.append([float(v) for v in line.split()])
    if header is None:
        raise ValueError(f"{path}: missing cloud header")
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    col = {name: arr[:, i] for i, name in enumerate(header)}
    return PointCloud(
        xyz=np.column_stack([col["x"], col["y"], col["z"]]),
        ring=col["ring"].astype(int) if "ring" in col else None,
        ranges=col.get("range"),
        azimuth=col["az"].astype(int) if "az" in col else None,
        pixel=np.column_stack([col["u"], col["v"]]) if "u" in col else None,
        wrap=wrap,
    )


# -- images ------------------------------------------------------------

def write_pgm(image, path):
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode())
        fh.write(image.pixels.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        content = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(content) and content[pos:pos + 1].isspace():
            pos += 1
        if content[pos:pos + 1] == b"#":
            while pos < len(content) and content[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(content) and not content[pos:pos + 1].isspace():
            pos += 1
        fields.append(content[start:pos])
    magic, width, height, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM images are supported")
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        data = np.frombuffer(content[pos:pos + width * height], dtype=np.uint8)
    elif magic == b"P2":
        values = content[pos:].split()
        data = np.array([int(v) for v in values[:width * height]], dtype=np.uint8)
    else:
        raise ValueError(f"not a PGM file: magic {magic!r}")
    if data.size != width * height:
        raise ValueError("truncated PGM data")
    return IntensityImage(data.reshape(height, width))


# -- detections and intrinsics ----------------------------------------

def write_detections(detections, path):
    payload = {
        "frame": detections.frame,
        "markers": [{"id": mid, "corners": detections.corners[mid].tolist()}
                    for mid in sorted(detections.corners)],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def read_detections(path):
    with open(path) as fh:
        payload = json.load(fh)
    corners = {m["id"]: np.array(m["corners"], dtype=float) for m in payload["markers"]}
    return MarkerDetections(corners, frame=payload.get("frame", 0))


def write_intrinsics(intrinsics, path):
    with open(path, "w") as fh:
        json.dump(intrinsics.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def read_intrinsics(path):
    with open(path) as fh:
        return CameraIntrinsics.from_dict(json.load(fh))


# -- labeled centers ---------------------------------------------------

def write_centers(centers_list, path):
    """Labeled centers, one `pose label x y z` row per point."""
    with open(path, "w") as fh:
        fh.write("# pose label x y z\n")
        for lc in sorted(centers_list, key=lambda c: c.pose):
            for label, point in zip(LABELS, lc.centers):
                fh.write(f"{lc.pose} {label} " + " ".join(_fmt(v) for v in point) + "\n")


def read_centers(path):
    by_pose = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pose_s, label, xs, ys, zs = line.split()
            by_pose.setdefault(int(pose_s), {})[label] = [float(xs), float(ys), float(zs)]
    out = []
    for pose in sorted(by_pose):
        entry = by_pose[pose]
        if sorted(entry) != sorted(LABELS):
            raise ValueError(f"pose {pose}: expected labels {LABELS}, got {sorted(entry)}")
        out.append(LabeledCenters(np.array([entry[l] for l in LABELS]), pose=pose))
    return out


# -- transforms and results -------------------------------------------

def _write_transform_block(fh, transform):
    fh.write("theta: " + " ".join(_fmt(v) for v in transform.params) + "\n")
    fh.write("matrix:\n")
    for row in transform.matrix:
        fh.write(" ".join(_fmt(v) for v in row) + "\n")


def write_transform(transform, path, comment=None):
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        _write_transform_block(fh, transform)


def _parse_keyvals(path):
    """Parse `key: value` lines plus matrix / per-pose blocks."""
    values = {}
    matrix_rows = []
    pose_rows = {}
    mode = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line == "matrix:":
                mode = "matrix"
                continue
            if line == "per_pose_rmse:":
                mode = "poses"
                continue
            if mode == "matrix" and len(matrix_rows) < 4:
                matrix_rows.append([float(v) for v in line.split()])
                if len(matrix_rows) == 4:
                    mode = None
                continue
            if mode == "poses" and ":" not in line:
                pose_s, rmse_s = line.split()
                pose_rows[int(pose_s)] = float(rmse_s)
                continue
            mode = None
            key, _, value = line.partition(":")
            values[key.strip()] = value.strip()
    return values, matrix_rows, pose_rows


def read_transform(path):
    values, matrix_rows, _ = _parse_keyvals(path)
    if len(matrix_rows) == 4:
        return RigidTransform(np.array(matrix_rows))
    if "theta" in values:
        return RigidTransform.from_params([float(v) for v in values["theta"].split()])
    raise ValueError(f"{path}: no transform found")


def write_result(result, path, overrides=None):
    meta = result.meta
    with open(path, "w") as fh:
        fh.write("# extrinsic calibration result\n")
        for key in ("setup", "pose_cfg"):
            if meta.get(key):
                fh.write(f"{key}: {meta[key]}\n")
        if "k" in meta:
            fh.write(f"k: {_fmt(meta['k'])}\n")
        fh.write(f"m_poses: {result.m_poses}\n")
        fh.write(f"n_frames: {result.n_frames}\n")
        if "seed" in meta:
            fh.write(f"seed: {meta['seed']}\n")
        _write_transform_block(fh, result.transform)
        fh.write(f"rmse_m: {_fmt(result.rmse)}\n")
        if result.per_pose_rmse:
            fh.write("per_pose_rmse:\n")
            for pose in sorted(result.per_pose_rmse):
                fh.write(f"{pose} {_fmt(result.per_pose_rmse[pose])}\n")
        if overrides:
            fh.write("config_overrides: " + json.dumps(overrides, sort_keys=True) + "\n")


def read_result(path):
    """Returns (transform, info dict with rmse/m/n/meta/per-pose table)."""
    values, matrix_rows, pose_rows = _parse_keyvals(path)
    if len(matrix_rows) != 4:
        raise ValueError(f"{path}: result file lacks a 4x4 matrix block")
    transform = RigidTransform(np.array(matrix_rows))
    info = {
        "setup": values.get("setup", ""),
        "pose_cfg": values.get("pose_cfg", ""),
        "k": float(values["k"]) if "k" in values else None,
        "m_poses": int(values["m_poses"]) if "m_poses" in values else None,
        "n_frames": int(values["n_frames"]) if "n_frames" in values else None,
        "seed": int(values["seed"]) if "seed" in values else None,
        "rmse": float(values["rmse_m"]) if "rmse_m" in values else None,
        "per_pose_rmse": pose_rows,
    }
    return transform, info


# -- dataset directories ----------------------------------------------

def write_dataset(scene, out_dir, n_frames):
    """Render a scene into a dataset directory.

    Layout: one subdirectory per sensor with per-pose frame files and a
    manifest (including suggested pass-through bounds derived from the
    scene), plus pairwise ground-truth transforms at the top level.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "scene.json"), "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)
        fh.write("\n")

    sensor_entries = []
    for s in scene.sensors:
        sdir = os.path.join(out_dir, s.name)
        os.makedirs(sdir, exist_ok=True)
        bounds = []
        for m in range(scene.m_poses):
            pdir = os.path.join(sdir, f"pose{m:02d}")
            os.makedirs(pdir, exist_ok=True)
            if s.kind != "monocular":
                bounds.append(suggested_bounds(scene, s, m).to_dict())
            for k in range(n_frames):
                stem = os.path.join(pdir, f"frame{k:03d}")
                if s.kind == "lidar":
                    write_cloud(simulate_lidar_frame(scene, s, m, k), stem + ".cloud")
                elif s.kind == "monocular":
                    write_detections(simulate_marker_detections(scene, s, m, k),
                                     stem + ".json")
                else:
                    cloud, image = simulate_range_cloud(scene, s, m, k)
                    write_cloud(cloud, stem + ".cloud")
                    write_pgm(image, stem + ".pgm")
        manifest = {
            "name": s.name,
            "modality": s.modality,
            "m_poses": scene.m_poses,
            "n_frames": n_frames,
        }
        if bounds:
            manifest["bounds"] = bounds
        if s.camera is not None:
            write_intrinsics(s.camera, os.path.join(sdir, "intrinsics.json"))
            manifest["intrinsics"] = "intrinsics.json"
        with open(os.path.join(sdir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        sensor_entries.append({"name": s.name, "modality": s.modality, "dir": s.name})

    for a in scene.sensors:
        for b in scene.sensors:
            if a.name == b.name:
                continue
            write_transform(ground_truth(scene, a, b),
                            os.path.join(out_dir, f"ground_truth_{a.name}_{b.name}.txt"),
                            comment=f"maps {b.name} frame into {a.name} frame")

    top = {
        "name": scene.name,
        "seed": scene.seed,
        "noise_factor": scene.noise_factor,
        "n_frames": n_frames,
        "m_poses": scene.m_poses,
        "sensors": sensor_entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(top, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_recording(sensor_dir):
    """SensorRecording over a dataset sensor directory (frames lazy)."""
    with open(os.path.join(sensor_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    modality = manifest["modality"]
    intrinsics = None
    if "intrinsics" in manifest:
        intrinsics = read_intrinsics(os.path.join(sensor_dir, manifest["intrinsics"]))
    bounds = None
    if "bounds" in manifest:
        bounds = [PassThroughBounds.from_dict(b) for b in manifest["bounds"]]

    def loader(pose, frame):
        stem = os.path.join(sensor_dir, f"pose{pose:02d}", f"frame{frame:03d}")
        if modality == "mono":
            return lambda: read_detections(stem + ".json")
        if modality == "stereo-range":
            return lambda: (read_cloud(stem + ".cloud"), read_pgm(stem + ".pgm"))
        return lambda: read_cloud(stem + ".cloud")

    frames = [[loader(m, k) for k in range(manifest["n_frames"])]
              for m in range(manifest["m_poses"])]
    return SensorRecording(
        name=manifest["name"],
        modality=modality,
        frames=frames,
        bounds=bounds,
        intrinsics=intrinsics,
        meta=manifest,
    )
