"""Isotropic 8-bit volumes: file I/O, normalized coordinates, trilinear sampling.

File format ``ppvol1``: a JSON header file
``{"magic": "ppvol1", "dims": [nx, ny, nz], "spacing_mm": s, "dtype": "u8",
"mask": bool}`` plus a raw sidecar at ``<header path>.raw`` holding
``nx*ny*nz`` voxel bytes in x-fastest order, followed by the same number of
0/1 mask bytes when ``mask`` is true.

Normalized frame: the volume center maps to (0, 0, 0) and one shared scale
maps the largest half-extent to 1.0, so rotations stay rigid. The scale in
mm per normalized unit is ``max_a((n_a - 1) / 2) * spacing_mm``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadDims, DimensionMismatch, FormatError

MAGIC = "ppvol1"
RAW_SUFFIX = ".raw"


@dataclass(frozen=True, eq=False)
class Volume:
    """Voxel grid indexed [x, y, z], immutable after construction."""

    voxels: np.ndarray
    spacing_mm: float
    mask: np.ndarray | None = None
    volume_id: str = "volume"

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3 or min(v.shape) < 2:
            raise BadDims(f"voxels must be 3D with every dim >= 2, got shape {v.shape}")
        if v.dtype != np.uint8:
            raise FormatError(f"voxels must be uint8, got {v.dtype}")
        if not self.spacing_mm > 0:
            raise FormatError(f"spacing_mm must be positive, got {self.spacing_mm}")
        object.__setattr__(self, "voxels", v)
        self.voxels.setflags(write=False)
        if self.mask is not None:
            m = np.asarray(self.mask).astype(bool)
            if m.shape != v.shape:
                raise DimensionMismatch(f"mask shape {m.shape} != voxel shape {v.shape}")
            object.__setattr__(self, "mask", m)
            self.mask.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def scale_mm(self) -> float:
        """Millimetres per normalized unit (largest half-extent -> 1.0)."""
        return max((n - 1) / 2.0 for n in self.dims) * self.spacing_mm

    # -- coordinate mappings --------------------------------------------------

    def normalized_to_index(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        center = (np.asarray(self.dims, dtype=float) - 1.0) / 2.0
        return p * (self.scale_mm / self.spacing_mm) + center

    def index_to_normalized(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=float)
        center = (np.asarray(self.dims, dtype=float) - 1.0) / 2.0
        return (idx - center) * (self.spacing_mm / self.scale_mm)

    def normalized_to_mm(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float) * self.scale_mm

    def mm_to_normalized(self, p_mm: np.ndarray) -> np.ndarray:
        return np.asarray(p_mm, dtype=float) / self.scale_mm

    # -- sampling ---------------------------------------------------------------

    def sample_trilinear(self, points: np.ndarray) -> np.ndarray:
        """Trilinear intensity at normalized point(s) (..., 3), zero outside support.

        Exact voxel centers return that voxel's value; between centers the 8
        surrounding voxels are blended; corners beyond the grid contribute 0.
        """
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        idx = self.normalized_to_index(p.reshape(-1, 3))
        i0 = np.floor(idx).astype(np.int64)
        f = idx - i0
        nx, ny, nz = self.dims
        out = np.zeros(idx.shape[0])
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1.0 - f[:, 0]
            ix = i0[:, 0] + dx
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                iy = i0[:, 1] + dy
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    iz = i0[:, 2] + dz
                    inb = (
                        (ix >= 0) & (ix < nx)
                        & (iy >= 0) & (iy < ny)
                        & (iz >= 0) & (iz < nz)
                    )
                    vals = self.voxels[
                        np.clip(ix, 0, nx - 1),
                        np.clip(iy, 0, ny - 1),
                        np.clip(iz, 0, nz - 1),
                    ]
                    out += wx * wy * wz * np.where(inb, vals, 0.0)
        return float(out[0]) if single else out.reshape(p.shape[:-1])


# -- file I/O -------------------------------------------------------------------

def raw_path_for(header_path) -> Path:
    return Path(str(header_path) + RAW_SUFFIX)


def save_volume(volume: Volume, path) -> None:
    """Write the JSON header to ``path`` and the raw payload to ``path + '.raw'``."""
    path = Path(path)
    header = {
        "magic": MAGIC,
        "dims": list(volume.dims),
        "spacing_mm": volume.spacing_mm,
        "dtype": "u8",
        "mask": volume.mask is not None,
    }
    payload = volume.voxels.ravel(order="F").tobytes()
    if volume.mask is not None:
        payload += volume.mask.astype(np.uint8).ravel(order="F").tobytes()
    path.write_text(json.dumps(header) + "\n")
    raw_path_for(path).write_bytes(payload)


def load_volume(path) -> Volume:
    """Read a ppvol1 header + raw sidecar; the file stem becomes the volume id."""
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise FormatError(f"{path}: bad magic, expected {MAGIC!r}")
    if header.get("dtype") != "u8":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d >= 2 for d in dims)
    ):
        raise FormatError(f"{path}: dims must be 3 integers >= 2, got {dims!r}")
    spacing = header.get("spacing_mm")
    if not isinstance(spacing, (int, float)) or not spacing > 0:
        raise FormatError(f"{path}: spacing_mm must be a positive number, got {spacing!r}")
    has_mask = header.get("mask", False)
    if not isinstance(has_mask, bool):
        raise FormatError(f"{path}: mask flag must be true or false")

    raw = raw_path_for(path).read_bytes()
    n = dims[0] * dims[1] * dims[2]
    expected = n * (2 if has_mask else 1)
    if len(raw) != expected:
        raise DimensionMismatch(
            f"{raw_path_for(path)}: payload is {len(raw)} bytes, dims {dims} need {expected}"
        )
    voxels = np.frombuffer(raw[:n], dtype=np.uint8).reshape(dims, order="F").copy()
    mask = None
    if has_mask:
        mask = np.frombuffer(raw[n:], dtype=np.uint8).reshape(dims, order="F") != 0
    return Volume(voxels, float(spacing), mask=mask, volume_id=path.stem)
