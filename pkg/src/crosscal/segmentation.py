"""Range-data segmentation of the calibration board.

Common trunk for LiDAR and stereo-derived clouds: fit a roughly vertical
plane with RANSAC, keep the edge points on it, project them into the
plane, find the four hole circles by iterative RANSAC, validate the
rectangle they form against the board dimensions, and lift the centers
back to sensor coordinates.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import edge_mask_filter, lidar_edge_filter, passthrough_filter, sobel_magnitude
from .errors import FrameRejected
from .geometry import PlaneModel, RigidTransform
from .target import ReferencePointSet

_CHUNK = 256  # candidate models scored per block to bound memory


def _distinct_triples(n, count, rng):
    """(count, 3) index triples with distinct entries."""
    idx = rng.integers(0, n, size=(count, 3))
    ok = (idx[:, 0] != idx[:, 1]) & (idx[:, 0] != idx[:, 2]) & (idx[:, 1] != idx[:, 2])
    return idx[ok]


def ransac_plane_vertical(cloud, delta_plane, alpha_plane, up_axis, max_iters, rng,
                          min_inliers=3):
    """Best-supported plane whose normal is perpendicular to ``up_axis``
    within ``alpha_plane``. The returned normal points toward the origin.

    Raises FrameRejected("no_plane") when no admissible model reaches
    ``min_inliers`` support.
    """
    pts = np.asarray(cloud.xyz, dtype=float)
    n_pts = len(pts)
    if n_pts < 3:
        raise FrameRejected("no_plane", f"only {n_pts} points")
    up = np.asarray(up_axis, dtype=float)
    up = up / np.linalg.norm(up)

    tri = _distinct_triples(n_pts, max_iters, rng)
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    normals = np.cross(b - a, c - a)
    lengths = np.linalg.norm(normals, axis=1)
    valid = lengths > 1e-12
    normals = normals[valid] / lengths[valid, None]
    anchors = a[valid]
    # verticality: |angle(normal, up) - pi/2| <= alpha  <=>  |n.up| <= sin(alpha)
    vertical = np.abs(normals @ up) <= np.sin(alpha_plane)
    normals, anchors = normals[vertical], anchors[vertical]
    if len(normals) == 0:
        raise FrameRejected("no_plane", "no admissible vertical plane sampled")
    offsets = -np.einsum("ij,ij->i", normals, anchors)
    flip = offsets < 0
    normals[flip] *= -1.0
    offsets[flip] *= -1.0

    best_count = -1
    best = None  # (normal, d, mean_abs_residual)
    for start in range(0, len(normals), _CHUNK):
        nn = normals[start:start + _CHUNK]
        dd = offsets[start:start + _CHUNK]
        dist = np.abs(pts @ nn.T + dd)
        inl = dist <= delta_plane
        counts = inl.sum(axis=0)
        for k in np.flatnonzero(counts >= max(counts.max(), 1)):
            cnt = int(counts[k])
            if cnt < min_inliers:
                continue
            mean_res = float(dist[inl[:, k], k].mean())
            if cnt > best_count or (cnt == best_count and mean_res < best[2]):
                best_count = cnt
                best = (nn[k], float(dd[k]), mean_res)
    if best is None:
        raise FrameRejected("no_plane", "no plane with enough support")
    return PlaneModel(best[0], best[1])


def plane_inlier_filter(cloud, plane, delta_inliers):
    """Keep the points within ``delta_inliers`` of the plane."""
    if len(cloud) == 0:
        return cloud
    return cloud.select(np.abs(plane.signed_distance(cloud.xyz)) <= delta_inliers)


def project_to_plane_2d(cloud, plane, up=(0.0, 0.0, 1.0)):
    """Orthogonally project the cloud onto the plane and express it in a
    2D in-plane frame.

    The frame's z-axis is the plane normal, its x-axis the in-plane
    horizontal (up x normal, pointing to the viewer's right as seen from
    the sensor), and its origin the projection of the cloud centroid onto
    the plane. Returns (points2d, plane_frame) where plane_frame maps
    (x, y, 0) back to sensor coordinates.
    """
    pts = np.asarray(cloud.xyz, dtype=float)
    n = plane.normal
    up = np.asarray(up, dtype=float)
    e1 = np.cross(up, n)
    if np.linalg.norm(e1) < 1e-9:
        # plane parallel to the reference up: fall back to any in-plane axis
        alt = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(alt, n)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    centroid = pts.mean(axis=0) if len(pts) else np.zeros(3)
    origin = centroid - plane.signed_distance(centroid) * n
    rel = pts - origin
    points2d = np.column_stack([rel @ e1, rel @ e2]) if len(pts) else np.zeros((0, 2))
    frame = RigidTransform.from_rt(np.column_stack([e1, e2, n]), origin)
    return points2d, frame


@dataclass(frozen=True)
class Circle2D:
    """Circle fitted in the plane frame."""

    center: tuple[float, float]
    radius: float
    inlier_count: int = 0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")


def _circumcircles(pts, triples):
    """Vectorized circumcircle of point triples; returns (centers, radii, valid)."""
    a, b, c = pts[triples[:, 0]], pts[triples[:, 1]], pts[triples[:, 2]]
    ab = b - a
    ac = c - a
    det = 2.0 * (ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])
    valid = np.abs(det) > 1e-12
    sb = (b * b).sum(axis=1) - (a * a).sum(axis=1)
    sc = (c * c).sum(axis=1) - (a * a).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cx = (ac[:, 1] * sb - ab[:, 1] * sc) / det
        cy = (ab[:, 0] * sc - ac[:, 0] * sb) / det
    centers = np.column_stack([cx, cy])
    radii = np.linalg.norm(centers - a, axis=1)
    return centers, radii, valid


def _kasa_fit(pts):
    """Algebraic least-squares circle fit; returns (center, radius) or None."""
    x, y = pts[:, 0], pts[:, 1]
    a = np.column_stack([2 * x, 2 * y, np.ones(len(pts))])
    b = x * x + y * y
    try:
        sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    except np.linalg.LinAlgError:
        return None
    cx, cy, c = sol
    r2 = c + cx * cx + cy * cy
    if r2 <= 0:
        return None
    return np.array([cx, cy]), float(np.sqrt(r2))


def _local_triples(pts, count, radius, rng):
    """Sample triples whose points lie within one circle diameter.

    The first point is uniform; its two partners come from the
    neighborhood that any circle of the expected radius through it would
    occupy. This keeps small-support circles findable inside clouds
    dominated by other structures (board outline points) without
    touching the inlier-based selection rule.
    """
    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, radius)
    anchors = rng.integers(0, len(pts), size=count)
    picks = rng.random(size=(count, 2))
    triples = []
    for i0, (p1, p2) in zip(anchors, picks):
        hood = neighborhoods[i0]
        if len(hood) < 3:
            continue
        j = hood[int(p1 * len(hood))]
        k = hood[int(p2 * len(hood))]
        if j == i0 or k == i0 or j == k:
            continue
        triples.append((i0, j, k))
    return np.array(triples, dtype=int).reshape(-1, 3)


def _best_circle(pts, hole_radius, delta_circle, delta_radius, min_points, max_iters,
                 rng, keepout_centers, min_separation):
    """One RANSAC search over ``pts``; returns (Circle2D, inlier_mask) or None."""
    n_pts = len(pts)
    if n_pts < 3:
        return None
    sample_radius = 2.0 * (hole_radius + delta_radius) + delta_circle
    triples = _local_triples(pts, max_iters, sample_radius, rng)
    if len(triples) == 0:
        return None
    centers, radii, valid = _circumcircles(pts, triples)
    admissible = valid & (np.abs(radii - hole_radius) <= delta_radius)
    if keepout_centers is not None and len(keepout_centers):
        sep = np.linalg.norm(centers[:, None, :] - keepout_centers[None, :, :], axis=2)
        admissible &= sep.min(axis=1) >= min_separation
    centers, radii = centers[admissible], radii[admissible]
    if len(centers) == 0:
        return None

    best = None  # (count, mean_res, center, radius, mask)
    for start in range(0, len(centers), _CHUNK):
        cc = centers[start:start + _CHUNK]
        rr = radii[start:start + _CHUNK]
        dist = np.abs(np.linalg.norm(pts[:, None, :] - cc[None, :, :], axis=2) - rr)
        inl = dist <= delta_circle
        counts = inl.sum(axis=0)
        for k in np.flatnonzero(counts == counts.max()):
            cnt = int(counts[k])
            if cnt < min_points:
                continue
            mean_res = float(dist[inl[:, k], k].mean())
            if best is None or cnt > best[0] or (cnt == best[0] and mean_res < best[1]):
                best = (cnt, mean_res, cc[k], float(rr[k]), inl[:, k])
    if best is None:
        return None

    cnt, _, center, radius, mask = best
    refined = _kasa_fit(pts[mask])
    if refined is not None and abs(refined[1] - hole_radius) <= delta_radius:
        r_center, r_radius = refined
        ok_sep = True
        if keepout_centers is not None and len(keepout_centers):
            ok_sep = np.linalg.norm(keepout_centers - r_center, axis=1).min() >= min_separation
        if ok_sep:
            r_mask = np.abs(np.linalg.norm(pts - r_center, axis=1) - r_radius) <= delta_circle
            if r_mask.sum() >= min_points:
                center, radius, mask = r_center, r_radius, r_mask
    circle = Circle2D((float(center[0]), float(center[1])), float(radius), int(mask.sum()))
    return circle, mask


def ransac_circles_iterative(points2d, geometry, delta_circle, delta_radius,
                             min_circle_points, max_iters, rng):
    """Extract hole candidates by repeated circle RANSAC.

    Each round keeps the most supported circle whose radius lies within
    ``delta_radius`` of the hole radius, then removes its inliers. Rounds
    continue until too few points remain or no admissible circle is
    found. Circles closer than twice the inner hole clearance to an
    already accepted one are never considered (they would be duplicate
    detections of the same hole).

    Raises FrameRejected("circles") when fewer than four circles emerge.
    """
    if min_circle_points < 3:
        raise ValueError("a circle needs at least three supporting points")
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    min_sep = 2.0 * max(geometry.hole_radius - delta_circle, 0.0)
    circles = []
    accepted_centers = np.zeros((0, 2))
    while len(pts) >= min_circle_points:
        found = _best_circle(pts, geometry.hole_radius, delta_circle, delta_radius,
                             min_circle_points, max_iters, rng,
                             accepted_centers, min_sep)
        if found is None:
            break
        circle, mask = found
        circles.append(circle)
        accepted_centers = np.vstack([accepted_centers, np.asarray(circle.center)])
        pts = pts[~mask]
    if len(circles) < 4:
        raise FrameRejected("circles", f"found {len(circles)} circles")
    return circles


def _rectangle_order(centers):
    """Order four 2D points as the corners of a quadrilateral.

    Returns (ordered_indices, sides, diagonals). The diagonal pairing is
    the point pairing with the largest summed distance, which for a
    convex quadrilateral is unique; degenerate sets simply fail the
    dimension checks downstream.
    """
    pairings = (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))
    sums = []
    for (i, j), (k, l) in pairings:
        sums.append(np.linalg.norm(centers[i] - centers[j])
                    + np.linalg.norm(centers[k] - centers[l]))
    (i, j), (k, l) = pairings[int(np.argmax(sums))]
    order = [i, k, j, l]  # diagonal endpoints alternate around the hull
    quad = centers[order]
    sides = np.linalg.norm(quad - np.roll(quad, -1, axis=0), axis=1)
    diags = np.array([np.linalg.norm(centers[i] - centers[j]),
                      np.linalg.norm(centers[k] - centers[l])])
    return order, sides, diags


def _subset_residual(centers, geometry, delta):
    """Consistency residual of four candidate centers, or None if failing.

    Checks the side lengths, both diagonals and the perimeter of the
    rectangle formed by the points against the board dimensions. The
    comparison is on sorted pairwise structure, hence invariant to any
    rigid motion of the points.
    """
    order, sides, diags = _rectangle_order(centers)
    w, h = geometry.centers_width, geometry.centers_height
    results = []
    # sides alternate around the quad: (s0, s2) oppose (s1, s3)
    for first, second in ((w, h), (h, w)):
        res = [abs(sides[0] - first), abs(sides[2] - first),
               abs(sides[1] - second), abs(sides[3] - second)]
        res += [abs(d - geometry.diagonal) for d in diags]
        res.append(abs(sides.sum() - geometry.perimeter))
        if max(res) <= delta:
            results.append((max(res), first == w))
    if not results:
        return None
    residual, width_first = min(results)
    return residual, order, width_first


def geometric_consistency_select(circles, geometry, delta_consistency):
    """Select the unique 4-subset of circles matching the board rectangle.

    Returns the four circles ordered tl, tr, bl, br in the plane frame
    (x to the viewer's right, y up). Raises FrameRejected("consistency")
    when zero or several subsets pass.
    """
    if len(circles) < 4:
        raise ValueError("need at least four circles for the consistency check")
    centers = np.array([c.center for c in circles], dtype=float)
    passing = []
    for subset in itertools.combinations(range(len(circles)), 4):
        got = _subset_residual(centers[list(subset)], geometry, delta_consistency)
        if got is not None:
            passing.append((subset, got))
    if len(passing) != 1:
        raise FrameRejected("consistency", f"{len(passing)} subsets passed")
    subset, (residual, order, width_first) = passing[0]
    quad = [subset[i] for i in order]  # indices into `circles`, around the hull
    pts = centers[quad]
    # rows are joined by the width-length sides: (0,1)/(2,3) if the first
    # side matched the width, else (1,2)/(3,0)
    if width_first:
        rows = [(0, 1), (2, 3)]
    else:
        rows = [(1, 2), (3, 0)]
    rows.sort(key=lambda r: -(pts[r[0], 1] + pts[r[1], 1]))  # top row first
    (t0, t1), (b0, b1) = rows
    tl, tr = sorted((t0, t1), key=lambda i: pts[i, 0])
    bl, br = sorted((b0, b1), key=lambda i: pts[i, 0])
    return [circles[quad[i]] for i in (tl, tr, bl, br)]


def lift_to_3d(circles, plane_frame, pose=0, frame=0):
    """Map four plane-frame circle centers back to sensor coordinates."""
    if len(circles) != 4:
        raise ValueError("expected exactly four circles")
    flat = np.array([[c.center[0], c.center[1], 0.0] for c in circles])
    return ReferencePointSet(plane_frame.apply(flat), pose=pose, frame=frame)


def segment_target(cloud, *, modality, bounds, up_axis, geometry, config, rng,
                   image=None, pose=0, frame=0):
    """Full single-frame extraction for range data.

    ``modality`` is "lidar" or "stereo-range"; stereo clouds also need
    the intensity ``image`` for edge masking. Raises FrameRejected when
    any stage discards the frame.
    """
    cropped = passthrough_filter(cloud, bounds)
    if modality == "lidar":
        # discontinuities are computed on the full rings, then cropped,
        # so dropped neighbors never fake an edge
        edges = passthrough_filter(lidar_edge_filter(cloud, config.delta_discont), bounds)
    elif modality == "stereo-range":
        if image is None:
            raise ValueError("stereo-range segmentation needs the intensity image")
        edges = edge_mask_filter(cropped, sobel_magnitude(image), config.tau_sobel)
    else:
        raise ValueError(f"unknown range modality: {modality}")

    plane = ransac_plane_vertical(cropped, config.delta_plane, config.alpha_plane,
                                  up_axis, config.plane_ransac_iters, rng,
                                  config.min_plane_inliers)
    on_plane = plane_inlier_filter(edges, plane, config.delta_inliers)
    points2d, plane_frame = project_to_plane_2d(on_plane, plane, up_axis)
    circles = ransac_circles_iterative(points2d, geometry,
                                       config.delta_circle(modality),
                                       config.delta_radius(modality),
                                       config.min_circle_points,
                                       config.circle_ransac_iters, rng)
    chosen = geometric_consistency_select(circles, geometry, config.delta_consistency)
    return lift_to_3d(chosen, plane_frame, pose=pose, frame=frame)
