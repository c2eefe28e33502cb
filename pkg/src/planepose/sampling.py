"""Dataset generation: random plane poses plus dense near-standard-plane
clusters, written as PGM images with a CSV manifest.

Manifest CSV header (fixed wire format):

    path,volume_id,tx,ty,tz,qw,qx,qy,qz,category,aug_seed

Pose cells carry seven decimals. ``category`` is ``random`` or ``near_sp``;
``aug_seed`` is an integer when intensity augmentation was applied, empty
otherwise. A ``spec.json`` sidecar records the full SamplingSpec.

Reproducibility contract: every image on disk regenerates bit-exactly from
its manifest row alone. Poses are therefore serialized through the
seven-decimal CSV form *before* slicing, and near-SP draws are accepted
only if the serialized pose still lies within the configured steps of the
(serialized) standard-plane pose, so rounding can never push a stored row
out of its documented bounds. Rejected draws are redrawn deterministically.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rotations as rot
from .errors import BadStrength, FormatError
from .pose import Pose6D
from .slicing import augment, extract_slice, sample_augment_params, write_pgm
from .volume import Volume

MANIFEST_NAME = "manifest.csv"
SPEC_NAME = "spec.json"
PARTIAL_MARKER = ".partial"
MANIFEST_HEADER = ("path", "volume_id", "tx", "ty", "tz", "qw", "qx", "qy", "qz", "category", "aug_seed")

# full-corpus defaults: 20699 random + 1330 near-SP planes per volume,
# final annotation steps 0.001 (translation) / 1.9 degrees (rotation)
DEFAULT_N_RANDOM = 20699
DEFAULT_N_NEAR_SP = 1330
DEFAULT_T_RANGE = ((-0.35, 0.35), (-0.35, 0.35), (-0.35, 0.35))
DEFAULT_NEAR_SP_T_STEP = 0.001
DEFAULT_NEAR_SP_ROT_STEP_DEG = 1.9


@dataclass(frozen=True)
class SamplingSpec:
    n_random: int = DEFAULT_N_RANDOM
    n_near_sp: int = DEFAULT_N_NEAR_SP
    t_range: tuple = DEFAULT_T_RANGE
    rot_mode_random: str = "uniform"
    near_sp_t_step: float = DEFAULT_NEAR_SP_T_STEP
    near_sp_rot_step_deg: float = DEFAULT_NEAR_SP_ROT_STEP_DEG
    sp_pose: Pose6D = field(default_factory=Pose6D.identity)
    seed: int = 0
    side_norm: float = 2.0
    augment_strength: float = 0.0

    def __post_init__(self):
        if self.n_random < 0 or self.n_near_sp < 0:
            raise FormatError("sample counts must be >= 0")
        if not (self.near_sp_t_step > 0 and self.near_sp_rot_step_deg > 0):
            raise FormatError("near-SP steps must be > 0")
        tr = tuple((float(lo), float(hi)) for lo, hi in self.t_range)
        if len(tr) != 3 or any(not (-1.0 <= lo <= hi <= 1.0) for lo, hi in tr):
            raise FormatError(f"t_range must be 3 ordered intervals within [-1, 1], got {self.t_range}")
        if self.rot_mode_random != "uniform":
            raise FormatError(f"unsupported rot_mode_random {self.rot_mode_random!r}")
        if not 0.0 <= self.augment_strength <= 1.0:
            raise BadStrength(f"augment_strength must be in [0, 1], got {self.augment_strength}")
        object.__setattr__(self, "t_range", tr)

    def to_json_dict(self) -> dict:
        return {
            "n_random": self.n_random,
            "n_near_sp": self.n_near_sp,
            "t_range": [list(iv) for iv in self.t_range],
            "rot_mode_random": self.rot_mode_random,
            "near_sp_t_step": self.near_sp_t_step,
            "near_sp_rot_step_deg": self.near_sp_rot_step_deg,
            "sp_pose": self.sp_pose.to_json_dict(),
            "seed": self.seed,
            "side_norm": self.side_norm,
            "augment_strength": self.augment_strength,
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "SamplingSpec":
        try:
            kwargs = dict(obj)
            kwargs["t_range"] = tuple(tuple(iv) for iv in obj["t_range"])
            kwargs["sp_pose"] = Pose6D.from_json_dict(obj["sp_pose"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad sampling spec JSON: {exc}") from exc
        return SamplingSpec(**kwargs)


@dataclass(frozen=True)
class ManifestRow:
    path: str
    volume_id: str
    pose: Pose6D
    category: str
    aug_seed: int | None


def sample_random_pose(rng: np.random.Generator, spec: SamplingSpec) -> Pose6D:
    """Translation uniform per axis in t_range, rotation uniform on SO(3)."""
    lows = [iv[0] for iv in spec.t_range]
    highs = [iv[1] for iv in spec.t_range]
    return Pose6D(rng.uniform(lows, highs), rot.random_quaternion(rng))


def sample_near_sp_pose(rng: np.random.Generator, spec: SamplingSpec) -> Pose6D:
    """The SP pose nudged by a small uniform translation and rotation.

    Translation adds a per-axis uniform draw in [-t_step, t_step]; rotation
    composes a uniform-axis rotation with angle uniform in [0, rot_step].
    """
    dt = rng.uniform(-spec.near_sp_t_step, spec.near_sp_t_step, size=3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, spec.near_sp_rot_step_deg))
    dq = rot.rotvec_to_quat(axis * angle)
    return Pose6D(spec.sp_pose.t + dt, rot.quat_multiply(spec.sp_pose.q, dq))


def _near_sp_row_pose(rng: np.random.Generator, spec: SamplingSpec, sp_stored: Pose6D) -> Pose6D:
    """A near-SP pose that still honors the steps after CSV rounding."""
    bound_t = spec.near_sp_t_step * np.sqrt(3.0)
    while True:
        candidate = sample_near_sp_pose(rng, spec).round7()
        dist = float(np.linalg.norm(candidate.t - sp_stored.t))
        angle = rot.quaternion_angle_deg(sp_stored.q, candidate.q)
        if dist <= bound_t and angle <= spec.near_sp_rot_step_deg:
            return candidate


def generate_dataset(volume: Volume, spec: SamplingSpec, out_dir) -> list[ManifestRow]:
    """Write images + manifest.csv + spec.json; see module docstring.

    A ``.partial`` marker exists while writing and is removed on success, so
    an interrupted run (disk full, kill) is detectable.
    """
    out = Path(out_dir)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    marker = out / PARTIAL_MARKER
    marker.write_text("dataset generation in progress\n")

    # the spec that is actually honored (and recorded) uses the SP pose as it
    # survives CSV serialization, so all bounds refer to stored numbers
    spec = replace(spec, sp_pose=spec.sp_pose.round7())
    sp_stored = spec.sp_pose
    rng = np.random.default_rng(spec.seed)
    rows: list[ManifestRow] = []

    def emit(index: int, category: str, pose: Pose6D) -> None:
        aug_seed = None
        img = extract_slice(volume, pose, spec.side_norm)
        if spec.augment_strength > 0.0:
            aug_seed = int(rng.integers(0, 2**31))
            params = sample_augment_params(np.random.default_rng(aug_seed), spec.augment_strength)
            img = augment(img, params)
        rel = f"images/{category}_{index:05d}.pgm"
        write_pgm(img.pixels, out / rel)
        rows.append(ManifestRow(rel, volume.volume_id, pose, category, aug_seed))

    for i in range(spec.n_random):
        emit(i, "random", sample_random_pose(rng, spec).round7())
    for i in range(spec.n_near_sp):
        emit(i, "near_sp", _near_sp_row_pose(rng, spec, sp_stored))

    write_manifest(rows, out / MANIFEST_NAME)
    (out / SPEC_NAME).write_text(json.dumps(spec.to_json_dict(), indent=2) + "\n")
    marker.unlink()
    return rows


# -- manifest I/O -----------------------------------------------------------------

def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in rows:
            writer.writerow(
                [r.path, r.volume_id, *r.pose.csv_cells(), r.category,
                 "" if r.aug_seed is None else r.aug_seed]
            )


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_HEADER:
            raise FormatError(f"{path}: manifest header mismatch, got {header}")
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(MANIFEST_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} cells")
            pose = Pose6D.from_csv_cells(cells[2:9])
            category = cells[9]
            if category not in ("random", "near_sp"):
                raise FormatError(f"{path}:{lineno}: unknown category {category!r}")
            aug = cells[10].strip()
            rows.append(ManifestRow(cells[0], cells[1], pose, category, int(aug) if aug else None))
    return rows
