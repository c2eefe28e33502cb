"""Synthetic fetal-head-like test volume.

The phantom is an ellipsoidal "skull" with a handful of interior structures
placed asymmetrically, so that slices taken at different poses look
different and pose recovery has texture to lock onto:

* bright shell (230) where the ellipsoidal radius e is in [0.92, 1.0]
* interior tissue 90 +/- 25 of smooth per-seed noise
* bright midline echo sheet (160) at |y| < 0.015 normalized
* dark lens-shaped "ventricle" (30) offset toward +x, +y
* small bright "cavum" blob (210) offset toward -x

Gestational age scales every ellipsoid semi-axis by ``ga_weeks / 25``; a
25-week head therefore has semi-axes exactly 25/21 ~ 1.19x those of a
21-week head. Semi-axes at 25 weeks are (0.92, 0.88, 0.85) of the grid
half-extents. The mask marks the full ellipsoid interior (e <= 1).
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import BadDims
from .volume import Volume

AXIS_FRACTIONS = (0.92, 0.88, 0.85)
SHELL_INNER = 0.92

VAL_SHELL = 230
VAL_TISSUE = 90
VAL_MIDLINE = 160
VAL_VENTRICLE = 30
VAL_CAVUM = 210
NOISE_AMPLITUDE = 25.0


def make_phantom(
    seed: int,
    dims: tuple[int, int, int] = (80, 72, 72),
    spacing_mm: float = 1.0,
    ga_weeks: float = 23.0,
) -> Volume:
    """Deterministic synthetic head volume; see module docstring for anatomy."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 32:
        raise BadDims(f"phantom dims must be >= 32 per axis, got {dims}")

    scale_mm = max((d - 1) / 2.0 for d in dims) * spacing_mm
    step = spacing_mm / scale_mm
    half = [(d - 1) / 2.0 * step for d in dims]
    grow = ga_weeks / 25.0
    A, B, C = (f * h * grow for f, h in zip(AXIS_FRACTIONS, half))

    X = ((np.arange(dims[0]) - (dims[0] - 1) / 2.0) * step)[:, None, None]
    Y = ((np.arange(dims[1]) - (dims[1] - 1) / 2.0) * step)[None, :, None]
    Z = ((np.arange(dims[2]) - (dims[2] - 1) / 2.0) * step)[None, None, :]

    e = np.sqrt((X / A) ** 2 + (Y / B) ** 2 + (Z / C) ** 2)
    interior = e < SHELL_INNER

    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.uniform(-1.0, 1.0, size=dims), sigma=2.0)
    peak = np.abs(noise).max()
    if peak > 0:
        noise = noise / peak

    img = np.zeros(dims)
    img[interior] = VAL_TISSUE + NOISE_AMPLITUDE * noise[interior]
    img[interior & (np.abs(Y) < 0.015)] = VAL_MIDLINE

    def ellipsoid(center, semi):
        return (
            ((X - center[0]) / semi[0]) ** 2
            + ((Y - center[1]) / semi[1]) ** 2
            + ((Z - center[2]) / semi[2]) ** 2
        ) <= 1.0

    img[ellipsoid((0.25 * A, 0.18 * B, 0.10 * C), (0.30 * A, 0.16 * B, 0.08 * C))] = VAL_VENTRICLE
    img[ellipsoid((-0.15 * A, 0.0, 0.05 * C), (0.08 * A, 0.08 * B, 0.08 * C))] = VAL_CAVUM
    img[(e >= SHELL_INNER) & (e <= 1.0)] = VAL_SHELL

    voxels = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return Volume(
        voxels,
        spacing_mm,
        mask=e <= 1.0,
        volume_id=f"phantom-ga{ga_weeks:g}-s{seed}",
    )
