"""Rigid plane poses: a translation plus a unit quaternion.

A pose places the canonical image plane inside the normalized volume frame:
the plane passes through ``t``, its in-plane axes are the first two columns
of the rotation matrix, and its normal is the third.

Serialized forms (these are the wire/file formats, do not change them):

* JSON object ``{"t": [tx, ty, tz], "q": [qw, qx, qy, qz]}``
* CSV cells, seven decimal places each, in the order tx ty tz qw qx qy qz
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot
from .errors import EmptySet, FormatError, NotUnit

CSV_POSE_FIELDS = ("tx", "ty", "tz", "qw", "qx", "qy", "qz")


def _fmt7(x: float) -> str:
    s = f"{x:.7f}"
    return "0.0000000" if s == "-0.0000000" else s


@dataclass(frozen=True, eq=False)
class Pose6D:
    """Translation (3,) and canonical unit quaternion (w, x, y, z)."""

    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(3)
        q = np.asarray(self.q, dtype=float).reshape(4)
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > rot.INPUT_TOL:
            raise NotUnit(f"pose quaternion norm {norm:.8f} is not within 1e-6 of 1")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", rot.quat_normalize(q))
        self.t.setflags(write=False)
        self.q.setflags(write=False)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def identity() -> "Pose6D":
        return Pose6D(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_matrix(R: np.ndarray, t=(0.0, 0.0, 0.0)) -> "Pose6D":
        return Pose6D(np.asarray(t, dtype=float), rot.matrix_to_quat(rot.require_rotation(R)))

    # -- algebra ------------------------------------------------------------

    def matrix(self) -> np.ndarray:
        return rot.quat_to_matrix(self.q)

    def rot6d(self) -> np.ndarray:
        return rot.matrix_to_rot6d(self.matrix())

    def compose(self, other: "Pose6D") -> "Pose6D":
        """This pose applied after ``other`` (matrix product order)."""
        return Pose6D(
            self.t + rot.quat_rotate(self.q, other.t),
            rot.quat_multiply(self.q, other.q),
        )

    def inverse(self) -> "Pose6D":
        qc = rot.quat_conjugate(self.q)
        return Pose6D(-rot.quat_rotate(qc, self.t), qc)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map point(s) (..., 3) from plane coordinates into the volume frame."""
        return rot.quat_rotate(self.q, np.asarray(points, dtype=float)) + self.t

    def isclose(self, other: "Pose6D", t_tol: float = 1e-9, deg_tol: float = 1e-7) -> bool:
        return bool(
            np.abs(self.t - other.t).max() <= t_tol
            and rot.quaternion_angle_deg(self.q, other.q) <= deg_tol
        )

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {"t": [float(v) for v in self.t], "q": [float(v) for v in self.q]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @staticmethod
    def from_json_dict(obj: dict) -> "Pose6D":
        try:
            t = obj["t"]
            q = obj["q"]
        except (TypeError, KeyError) as exc:
            raise FormatError(f"pose JSON needs 't' and 'q' keys: {exc}") from exc
        if len(t) != 3 or len(q) != 4:
            raise FormatError("pose JSON: 't' must have 3 numbers and 'q' 4")
        return Pose6D(np.asarray(t, dtype=float), np.asarray(q, dtype=float))

    @staticmethod
    def from_json(text: str) -> "Pose6D":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"pose JSON does not parse: {exc}") from exc
        return Pose6D.from_json_dict(obj)

    def csv_cells(self) -> list[str]:
        return [_fmt7(v) for v in (*self.t, *self.q)]

    @staticmethod
    def from_csv_cells(cells) -> "Pose6D":
        if len(cells) != 7:
            raise FormatError(f"pose CSV needs 7 cells, got {len(cells)}")
        try:
            vals = [float(c) for c in cells]
        except ValueError as exc:
            raise FormatError(f"pose CSV cell is not a number: {exc}") from exc
        return Pose6D(np.array(vals[:3]), np.array(vals[3:]))

    def round7(self) -> "Pose6D":
        """The pose as it survives CSV serialization (7 decimals, renormalized)."""
        return Pose6D.from_csv_cells(self.csv_cells())

    def pose_hash(self) -> str:
        """SHA-256 of the canonical CSV cells; stable content identifier."""
        return hashlib.sha256(",".join(self.csv_cells()).encode("ascii")).hexdigest()

    def __repr__(self) -> str:
        cells = self.csv_cells()
        return f"Pose6D(t=({', '.join(cells[:3])}), q=({', '.join(cells[3:])}))"


@dataclass(frozen=True)
class PoseSetStats:
    """Dispersion of a set of poses around its centroid / mean rotation."""

    n: int
    centroid: np.ndarray
    dist_mm: np.ndarray = field(repr=False)
    rms_mm: float = 0.0
    mean_rotation: np.ndarray = field(default=None, repr=False)
    rot_deg: np.ndarray = field(default=None, repr=False)
    rot_rms_deg: float = 0.0


def pose_set_stats(poses, scale_mm: float = 1.0) -> PoseSetStats:
    """Translation and rotation spread of a pose set.

    Translations are measured as distances to the centroid, multiplied by
    ``scale_mm`` (the normalized-frame scale), rotations as geodesic angles
    to the chordal mean. Both are summarized by their root mean square.
    """
    poses = list(poses)
    if not poses:
        raise EmptySet("pose_set_stats of an empty set")
    ts = np.array([p.t for p in poses])
    Rs = np.array([p.matrix() for p in poses])
    centroid, dists, rms = rot.translation_stats(ts)
    mean_R, rot_deg, rot_rms = rot.rotation_stats(Rs)
    return PoseSetStats(
        n=len(poses),
        centroid=centroid,
        dist_mm=dists * scale_mm,
        rms_mm=rms * scale_mm,
        mean_rotation=mean_R,
        rot_deg=rot_deg,
        rot_rms_deg=rot_rms,
    )
