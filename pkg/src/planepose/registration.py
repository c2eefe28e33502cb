"""Volume-to-volume alignment: landmark-initialized 7-DOF similarity fit,
masked intensity refinement, and registration-quality reporting.

All point coordinates here are millimetres in a volume-centered frame (the
normalized frame of :mod:`planepose.volume` times ``scale_mm``), so a
transform fitted on landmarks applies directly to intensity refinement.

Transform JSON wire format: ``{"R": [[...]], "t_mm": [...], "s": ...}``.
Landmark CSV wire format: header ``label,x_mm,y_mm,z_mm``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import rotations as rot
from .errors import (
    Collinear,
    EmptyMask,
    FormatError,
    LabelMismatch,
    TooFewPoints,
)
from .volume import Volume

REFINE_MAX_SAMPLES = 200_000
REFINE_MAX_ITERS = 500
REFINE_XATOL = 1e-6
# initial simplex steps: axis-angle rad, mm, log-scale — sized to the few-mm
# few-degree disagreements the refinement is meant to absorb
REFINE_SIMPLEX_STEPS = (0.05, 0.05, 0.05, 2.0, 2.0, 2.0, 0.05)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> s * R @ x + t_mm, the 7-DOF map between centered mm frames."""

    R: np.ndarray
    t_mm: np.ndarray
    s: float = 1.0

    def __post_init__(self):
        R = rot.require_rotation(np.asarray(self.R, dtype=float))
        t = np.asarray(self.t_mm, dtype=float).reshape(3)
        if not self.s > 0:
            raise FormatError(f"scale must be positive, got {self.s}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t_mm", t)
        self.R.setflags(write=False)
        self.t_mm.setflags(write=False)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.s * (p @ self.R.T) + self.t_mm

    def inverse(self) -> "SimilarityTransform":
        Rt = self.R.T
        return SimilarityTransform(Rt, -(Rt @ self.t_mm) / self.s, 1.0 / self.s)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """This transform applied after ``other``."""
        return SimilarityTransform(
            self.R @ other.R,
            self.s * (self.R @ other.t_mm) + self.t_mm,
            self.s * other.s,
        )

    def to_json(self) -> str:
        return json.dumps(
            {"R": self.R.tolist(), "t_mm": self.t_mm.tolist(), "s": float(self.s)}
        )

    @staticmethod
    def from_json(text: str) -> "SimilarityTransform":
        try:
            obj = json.loads(text)
            R, t, s = obj["R"], obj["t_mm"], obj["s"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"transform JSON needs R, t_mm, s: {exc}") from exc
        return SimilarityTransform(np.asarray(R, float), np.asarray(t, float), float(s))


# -- landmarks ------------------------------------------------------------------

LANDMARK_HEADER = ("label", "x_mm", "y_mm", "z_mm")


@dataclass(frozen=True)
class Landmarks:
    """Labeled fiducial points (mm, volume-centered frame)."""

    labels: tuple
    points_mm: np.ndarray
    volume_id: str = ""

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        pts = np.asarray(self.points_mm, dtype=float).reshape(len(labels), 3)
        if len(set(labels)) != len(labels):
            raise FormatError("landmark labels must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "points_mm", pts)
        self.points_mm.setflags(write=False)

    def point(self, label: str) -> np.ndarray:
        return self.points_mm[self.labels.index(label)]


def read_landmarks(path, volume_id: str = "") -> Landmarks:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != LANDMARK_HEADER:
            raise FormatError(f"{path}: landmark header must be {','.join(LANDMARK_HEADER)}")
        labels, pts = [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 cells")
            labels.append(cells[0])
            try:
                pts.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad coordinate: {exc}") from exc
    return Landmarks(tuple(labels), np.array(pts).reshape(-1, 3), volume_id=volume_id)


def write_landmarks(lm: Landmarks, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LANDMARK_HEADER)
        for label, p in zip(lm.labels, lm.points_mm):
            writer.writerow([label, repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])


def _matched_points(src: Landmarks, dst: Landmarks) -> tuple[np.ndarray, np.ndarray]:
    common = sorted(set(src.labels) & set(dst.labels))
    if not common:
        raise LabelMismatch(
            f"no common landmark labels between {src.labels} and {dst.labels}"
        )
    X = np.array([src.point(l) for l in common])
    Y = np.array([dst.point(l) for l in common])
    return X, Y


def fit_similarity_landmarks(src: Landmarks, dst: Landmarks) -> SimilarityTransform:
    """Least-squares similarity (Umeyama closed form) on label-matched pairs.

    Minimizes sum ||s R x_i + t - y_i||^2; exact on noise-free similarity
    images of the source. Collinear point sets are rejected because the
    rotation about the line is unobservable.
    """
    X, Y = _matched_points(src, dst)
    n = X.shape[0]
    if n < 3:
        raise TooFewPoints(f"need >= 3 matched landmark pairs, got {n}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    for name, pts in (("source", Xc), ("destination", Yc)):
        sv = np.linalg.svd(pts.T @ pts / n, compute_uv=False)
        if sv[1] < 1e-9 * sv[0]:
            raise Collinear(f"{name} landmarks are collinear")
    cov = Yc.T @ Xc / n
    U, D, Vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = U @ np.diag(d) @ Vt
    var_x = (Xc**2).sum() / n
    s = float((D * d).sum() / var_x)
    t = my - s * (R @ mx)
    return SimilarityTransform(R, t, s)


def landmark_rms(transform: SimilarityTransform, src: Landmarks, dst: Landmarks) -> float:
    """RMS of ||T(x_i) - y_i|| in mm over label-matched pairs."""
    X, Y = _matched_points(src, dst)
    residuals = np.linalg.norm(transform.apply(X) - Y, axis=1)
    return float(np.sqrt(np.mean(residuals**2)))


# -- masked intensity refinement ---------------------------------------------------

def _masked_sample_points(fixed: Volume) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stride subsample of masked voxel centers (mm) and values."""
    if fixed.mask is None or not fixed.mask.any():
        raise EmptyMask("fixed volume has no usable mask")
    idx = np.argwhere(fixed.mask)
    stride = max(1, int(np.ceil(idx.shape[0] / REFINE_MAX_SAMPLES)))
    idx = idx[::stride]
    center = (np.asarray(fixed.dims, dtype=float) - 1.0) / 2.0
    pts_mm = (idx - center) * fixed.spacing_mm
    values = fixed.voxels[idx[:, 0], idx[:, 1], idx[:, 2]].astype(float)
    return pts_mm, values


def masked_msd(moving: Volume, fixed: Volume, transform: SimilarityTransform) -> float:
    """Mean squared intensity difference over the fixed mask.

    For each masked fixed voxel y the moving volume is sampled at the
    pre-image T^-1(y); out-of-support samples read as 0 (and so penalize
    transforms that push the anatomy out of view).
    """
    pts_mm, fixed_vals = _masked_sample_points(fixed)
    inv = transform.inverse()
    moving_pts = inv.apply(pts_mm) / moving.scale_mm
    moving_vals = moving.sample_trilinear(moving_pts)
    return float(np.mean((fixed_vals - moving_vals) ** 2))


def _params_to_transform(params: np.ndarray, init: SimilarityTransform) -> SimilarityTransform:
    inc = rot.quat_to_matrix(rot.rotvec_to_quat(params[:3]))
    return SimilarityTransform(
        inc @ init.R,
        init.t_mm + params[3:6],
        init.s * float(np.exp(params[6])),
    )


def refine_similarity_masked(
    moving: Volume,
    fixed: Volume,
    init: SimilarityTransform,
    max_iters: int = REFINE_MAX_ITERS,
) -> SimilarityTransform:
    """Nelder-Mead refinement of ``init`` under the masked-MSD objective.

    Seven parameters: an axis-angle rotation increment applied to init's
    rotation, a translation delta in mm, and a log-scale delta. Returns the
    refined transform, or ``init`` unchanged when no simplex vertex beats
    its objective (no-improvement is not an error).
    """
    pts_mm, fixed_vals = _masked_sample_points(fixed)

    def objective(params: np.ndarray) -> float:
        T = _params_to_transform(params, init)
        moving_pts = T.inverse().apply(pts_mm) / moving.scale_mm
        diff = fixed_vals - moving.sample_trilinear(moving_pts)
        return float(np.mean(diff**2))

    x0 = np.zeros(7)
    simplex = np.vstack([x0, x0 + np.diag(REFINE_SIMPLEX_STEPS)])
    result = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "maxiter": max_iters,
            "xatol": REFINE_XATOL,
            "fatol": 1e-12,
            "initial_simplex": simplex,
        },
    )
    if result.fun < objective(x0):
        return _params_to_transform(result.x, init)
    return init


# -- per-method error reporting -----------------------------------------------

REPORT_METHODS = ("initial", "automatic", "mask", "fid_mask")


def render_registration_report(entries: dict) -> str:
    """CSV comparing landmark RMS per method, one row per volume.

    ``entries`` maps a volume name to a dict with (a subset of) the method
    keys in REPORT_METHODS; values are RMS in mm, rendered to 2 decimals.
    """
    lines = ["volume," + ",".join(REPORT_METHODS)]
    for volume in entries:
        row = [volume]
        for method in REPORT_METHODS:
            value = entries[volume].get(method)
            row.append("" if value is None else f"{value:.2f}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_registration_report(entries: dict, path) -> None:
    Path(path).write_text(render_registration_report(entries))
