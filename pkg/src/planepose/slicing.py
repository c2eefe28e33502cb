"""Slice extraction at a plane pose, intensity augmentation, and PGM I/O.

Plane convention (used consistently by the sampler, pose recovery, and the
annotation service): the plane's in-plane x and y axes are columns 1 and 2
of the pose's rotation matrix, the plane normal is column 3. Pixel (i, j)
of a slice samples the volume at

    pose.t + u_j * R[:, 0] + v_i * R[:, 1]

with u_j = ((j + 0.5)/128 - 0.5) * side_norm and v_i likewise over rows, so
the image is the square of side ``side_norm`` centered on the plane origin.

Images are 128x128 uint8, persisted as binary PGM (P5, maxval 255).
Quantization everywhere is round half up, then clamp to [0, 255].
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadDims, BadStrength, DimensionMismatch, FormatError
from .pose import Pose6D
from .volume import Volume

IMAGE_SIZE = 128
DEFAULT_SIDE_NORM = 2.0


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round half up and clamp to the 8-bit range."""
    return np.clip(np.floor(np.asarray(values, dtype=float) + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SliceImage:
    pixels: np.ndarray
    pose: Pose6D
    volume_id: str
    pixel_pitch_norm: float

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.shape != (IMAGE_SIZE, IMAGE_SIZE) or px.dtype != np.uint8:
            raise BadDims(f"slice pixels must be uint8 {IMAGE_SIZE}x{IMAGE_SIZE}, got {px.dtype} {px.shape}")
        if not self.pixel_pitch_norm > 0:
            raise BadDims(f"pixel_pitch_norm must be positive, got {self.pixel_pitch_norm}")
        object.__setattr__(self, "pixels", px)
        self.pixels.setflags(write=False)


def plane_points(pose: Pose6D, side_norm: float, size: int = IMAGE_SIZE) -> np.ndarray:
    """Normalized-frame sample points, shape (size, size, 3), row-major pixels."""
    offsets = ((np.arange(size) + 0.5) / size - 0.5) * side_norm
    R = pose.matrix()
    U = offsets[None, :, None] * R[:, 0]
    V = offsets[:, None, None] * R[:, 1]
    return pose.t + U + V


def extract_slice(volume: Volume, pose: Pose6D, side_norm: float = DEFAULT_SIDE_NORM) -> SliceImage:
    """Resample the volume on the posed plane; see module docstring for geometry."""
    if not 0.0 < side_norm <= 4.0:
        raise BadDims(f"side_norm must be in (0, 4], got {side_norm}")
    values = volume.sample_trilinear(plane_points(pose, side_norm))
    return SliceImage(
        pixels=quantize_u8(values),
        pose=pose,
        volume_id=volume.volume_id,
        pixel_pitch_norm=side_norm / IMAGE_SIZE,
    )


# -- augmentation ---------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    """ColorJitter-style factors; saturation is a documented no-op on grayscale."""

    brightness_factor: float = 1.0
    contrast_factor: float = 1.0
    saturation_factor: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        for name in ("brightness_factor", "contrast_factor", "saturation_factor"):
            if not getattr(self, name) >= 0.0:
                raise BadStrength(f"{name} must be >= 0, got {getattr(self, name)}")


def augment(img: SliceImage, params: AugmentParams) -> SliceImage:
    """Brightness then contrast, clamped after each step, quantized once at the end.

    brightness: p' = clamp(p * b); contrast: p'' = clamp(m + c * (p' - m))
    with m the mean of the brightness-adjusted image.
    """
    x = img.pixels.astype(float)
    x = np.clip(x * params.brightness_factor, 0.0, 255.0)
    m = x.mean()
    x = np.clip(m + params.contrast_factor * (x - m), 0.0, 255.0)
    return SliceImage(quantize_u8(x), img.pose, img.volume_id, img.pixel_pitch_norm)


def sample_augment_params(rng: np.random.Generator, strength: float) -> AugmentParams:
    """Factors drawn uniformly from [max(0, 1 - strength), 1 + strength]."""
    if not 0.0 <= strength <= 1.0:
        raise BadStrength(f"strength must be in [0, 1], got {strength}")
    lo, hi = max(0.0, 1.0 - strength), 1.0 + strength
    b, c, s = rng.uniform(lo, hi, size=3)
    return AugmentParams(brightness_factor=b, contrast_factor=c, saturation_factor=s)


# -- PGM I/O ----------------------------------------------------------------------

def write_pgm(pixels: np.ndarray, path) -> None:
    px = np.asarray(pixels)
    if px.ndim != 2 or px.dtype != np.uint8:
        raise BadDims(f"PGM payload must be a 2D uint8 array, got {px.dtype} {px.shape}")
    h, w = px.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval as ASCII tokens; '#' starts a comment
    pos, fields = 2, []
    while len(fields) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", data[pos:])
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(int(m.group(1)))
        pos += m.end()
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:]
    if len(payload) != w * h:
        raise DimensionMismatch(f"{path}: payload is {len(payload)} bytes, expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()
