"""Geometry of the perforated calibration board.

The board is planar, carries four circular holes whose centers form a
rectangle, and four square fiducial markers near its corners. Everything
downstream (range segmentation, monocular pose recovery, the simulator)
shares this one description.

Board frame: origin at the board center, x toward the top-right hole,
y up, z out of the front face (toward the sensors).
"""

from dataclasses import dataclass, field

import numpy as np

LABELS = ("tl", "tr", "bl", "br")


def _default_marker_offsets():
    return ((-0.38, 0.58), (0.38, 0.58), (-0.38, -0.58), (0.38, -0.58))


@dataclass(frozen=True)
class TargetGeometry:
    """Dimensions of the calibration board, in meters.

    ``centers_width``/``centers_height`` are the horizontal and vertical
    spacings of the hole centers; ``marker_center_offsets`` are the four
    marker centers in board-frame (x, y), ordered tl, tr, bl, br.
    """

    hole_radius: float = 0.06
    centers_width: float = 0.30
    centers_height: float = 0.40
    board_width: float = 1.0
    board_height: float = 1.4
    marker_size: float = 0.18
    marker_center_offsets: tuple = field(default_factory=_default_marker_offsets)

    def __post_init__(self):
        for name in ("hole_radius", "centers_width", "centers_height",
                     "board_width", "board_height", "marker_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        offs = tuple(tuple(float(v) for v in o) for o in self.marker_center_offsets)
        if len(offs) != 4:
            raise ValueError("expected four marker center offsets")
        object.__setattr__(self, "marker_center_offsets", offs)
        for cx, cy in self.hole_center_offsets:
            if abs(cx) + self.hole_radius > self.board_width / 2 + 1e-12 or \
               abs(cy) + self.hole_radius > self.board_height / 2 + 1e-12:
                raise ValueError("holes must lie fully inside the board")

    @property
    def hole_center_offsets(self):
        """Hole centers in board (x, y), ordered tl, tr, bl, br."""
        w, h = self.centers_width / 2, self.centers_height / 2
        return np.array([[-w, h], [w, h], [-w, -h], [w, -h]])

    @property
    def diagonal(self):
        return float(np.hypot(self.centers_width, self.centers_height))

    @property
    def perimeter(self):
        return 2.0 * (self.centers_width + self.centers_height)

    def marker_corners(self, marker_id):
        """Board-frame 3D corners of one marker: tl, tr, br, bl."""
        cx, cy = self.marker_center_offsets[marker_id]
        s = self.marker_size / 2
        return np.array(
            [
                [cx - s, cy + s, 0.0],
                [cx + s, cy + s, 0.0],
                [cx + s, cy - s, 0.0],
                [cx - s, cy - s, 0.0],
            ]
        )

    def to_dict(self):
        return {
            "hole_radius": self.hole_radius,
            "centers_width": self.centers_width,
            "centers_height": self.centers_height,
            "board_width": self.board_width,
            "board_height": self.board_height,
            "marker_size": self.marker_size,
            "marker_center_offsets": [list(o) for o in self.marker_center_offsets],
        }

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        if "marker_center_offsets" in kw:
            kw["marker_center_offsets"] = tuple(tuple(o) for o in kw["marker_center_offsets"])
        return cls(**kw)


@dataclass
class ReferencePointSet:
    """The four hole centers extracted from one data frame.

    ``centers`` is a (4, 3) array ordered tl, tr, bl, br in sensor
    coordinates; ``pose`` tags the target pose the frame belongs to.
    """

    centers: np.ndarray
    pose: int = 0
    frame: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(4, 3)

    def as_dict(self):
        return {label: self.centers[i] for i, label in enumerate(LABELS)}
