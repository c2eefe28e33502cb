"""Slice-to-volume pose recovery by multi-start Nelder-Mead optimization.

Estimates the 6-DOF pose at which a 2D image was cut from a volume by
maximizing intensity similarity between the image and re-extracted slices.
Two search modes share one local optimizer:

* ``local``: refinement from a caller-supplied initial pose, with jittered
  restarts when ``n_starts`` exceeds one.
* ``full``: a coarse-to-fine global search.  A precomputed bank of
  anti-aliased slice renders over orientation and depth is matched against
  spin/shift variants of the query image, and a second, spin-invariant
  channel (per-ring Fourier magnitudes on a polar resampling) admits
  orientations whose correct in-plane angle the spun thumbnails missed;
  that angle is then recovered by phase correlation over the polar
  spectra.  Pooled candidates are re-ranked at quarter resolution,
  deduplicated by two diversity walks, snapped to the best in-plane
  alignment, and refined by Nelder-Mead stages at increasing resolution,
  with the winner arbitrated at full resolution.

Rotation is parameterized during optimization as an axis-angle increment
about the current estimate, so no representation singularity is crossed.
Scores are oriented so larger is always better: ``ncc`` is normalized
cross-correlation, ``msd`` is the negated mean squared difference.

A plane and its 180-degree in-plane flip produce mirrored images that an
intensity metric cannot always tell apart.  The returned pose is the
best-scoring member of that symmetry pair; :func:`in_plane_flip` exposes
the partner so callers can report both scores.

The ``full`` funnel is correlation-driven throughout; ``cfg.metric``
governs ``local`` refinements and the score reported for the returned
pose.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.ndimage import rotate as ndrotate
from scipy.ndimage import shift as ndshift
from scipy.optimize import minimize

from . import rotations as rot
from .errors import BadDims, FlatImage, FormatError
from .pose import Pose6D
from .sampling import ManifestRow
from .slicing import DEFAULT_SIDE_NORM, IMAGE_SIZE, SliceImage, read_pgm
from .volume import Volume

METRICS = ("ncc", "msd")
SEARCH_MODES = ("full", "local")

# pixel pitch of the rendered slice in normalized units
_PX = DEFAULT_SIDE_NORM / IMAGE_SIZE

# -- global-search bank geometry ------------------------------------------
# orientation samples over the full sphere; depth rungs along each normal;
# in-plane spin and shift variants of the query image
_SCAN_NORMALS = 1024
_SCAN_DEPTH_STEP = 0.084
_SCAN_SPIN_STEP_DEG = 10.0
# shift grid half-width and step in pixels, centered on the content centroid
_SCAN_SHIFT_SPAN = 16
_SCAN_SHIFT_STEP = 8

# polar resampling grid of the spin-invariant descriptor channel
_DESC_SIDE = IMAGE_SIZE // 4
_N_RINGS = 10
_N_THETA = 48
_N_HARM = 8

# -- funnel widths ----------------------------------------------------------
_POOL = 900            # rows entering the pool from the thumbnail match
_DESC_POOL = 400       # extra rows admitted by the descriptor match
_VARIANTS_PER_ROW = 4  # distinct-spin image variants advanced per row
_KEPT_NEAR = 100       # tightly deduplicated walk over the re-ranked pool
_KEPT_WIDE = 22        # looser coverage walk appended to the first
_PER_NORMAL_CAP = 3    # near-walk slots any single scan normal may occupy
_FORCED = 14           # guaranteed launches from the descriptor channel
_FORCED_FROM = 60      # descriptor ranks eligible for guaranteed launches
_FINE_TOP = 10         # mids advanced to the fine refinement chain

_RERANK_SIGMA = 1.5
_MID_SIGMA = 1.25
_FINE_CAPTURE_SIGMA = 1.0

# local-mode restart jitter (axis-angle radians, normalized translation)
_JITTER_ROT = 0.035
_JITTER_T = 0.02


@dataclass(frozen=True)
class RecoveryConfig:
    """Knobs for :func:`recover_pose`.

    ``n_starts`` is a floor on the number of local optimizations: ``local``
    mode runs exactly that many (the first from the given init), while
    ``full`` mode always runs its internal funnel width and widens the final
    stage when ``n_starts`` exceeds it.  ``max_iters`` caps the Nelder-Mead
    iteration budget of every individual start.  ``tol`` is the simplex
    parameter tolerance.  ``t_search_range`` bounds the translation extent
    of the global search.  ``seed`` drives restart jitter in ``local`` mode
    and per-row determinism in batches; the ``full`` search is deterministic
    and ignores it.
    """

    n_starts: int = 32
    metric: str = "ncc"
    max_iters: int = 120
    tol: float = 1e-4
    t_search_range: float = 0.35
    rot_search_mode: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1:
            raise FormatError(f"n_starts must be >= 1, got {self.n_starts}")
        if self.metric not in METRICS:
            raise FormatError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.max_iters < 1:
            raise FormatError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise FormatError(f"tol must be positive, got {self.tol}")
        if not self.t_search_range > 0:
            raise FormatError(f"t_search_range must be positive, got {self.t_search_range}")
        if self.rot_search_mode not in SEARCH_MODES:
            raise FormatError(
                f"rot_search_mode must be one of {SEARCH_MODES}, got {self.rot_search_mode!r}"
            )


def _as_pixels(img) -> np.ndarray:
    px = img.pixels if isinstance(img, SliceImage) else np.asarray(img)
    if px.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise BadDims(f"query image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {px.shape}")
    return px.astype(float)


def in_plane_flip(pose: Pose6D, axis: str = "x") -> Pose6D:
    """The symmetry partner whose extracted slice is the mirrored image.

    Rotating the plane frame 180 degrees about one of its in-plane axes
    keeps the plane but reverses the other in-plane axis, so the render is
    flipped.  ``axis`` picks which in-plane axis stays fixed.
    """
    if axis == "x":
        rv = [math.pi, 0.0, 0.0]
    elif axis == "y":
        rv = [0.0, math.pi, 0.0]
    else:
        raise FormatError(f"flip axis must be 'x' or 'y', got {axis!r}")
    return Pose6D(pose.t, rot.quat_multiply(pose.q, rot.rotvec_to_quat(rv)))


def _similarity(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    a = a.astype(float).ravel()
    b = b.astype(float).ravel()
    if metric == "msd":
        return -float(np.mean((a - b) ** 2))
    az = a - a.mean()
    bz = b - b.mean()
    na, nb = np.linalg.norm(az), np.linalg.norm(bz)
    if na == 0 or nb == 0:
        return 0.0
    return float(az @ bz / (na * nb))


def score_pose(img, volume: Volume, pose: Pose6D, metric: str = "ncc") -> float:
    """Full-resolution similarity between ``img`` and the slice at ``pose``."""
    if metric not in METRICS:
        raise FormatError(f"metric must be one of {METRICS}, got {metric!r}")
    px = _as_pixels(img)
    R = rot.quat_to_matrix(pose.q)
    offs = _stride_offsets(1)
    sample = volume.sample_trilinear(
        pose.t + offs[:, 0, None] * R[:, 0] + offs[:, 1, None] * R[:, 1]
    )
    return _similarity(px.ravel(), sample, metric)


# -- sampling grids ----------------------------------------------------------


def _stride_offsets(stride: int) -> np.ndarray:
    """In-plane offsets matching ``pixels[::stride, ::stride]`` of the render."""
    c = (np.arange(0, IMAGE_SIZE, stride) + 0.5) / IMAGE_SIZE - 0.5
    uu, vv = np.meshgrid(c * DEFAULT_SIDE_NORM, c * DEFAULT_SIDE_NORM, indexing="xy")
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


_OFFS4 = _stride_offsets(4)
_OFFS2 = _stride_offsets(2)
_OFFS1 = _stride_offsets(1)


def _norm_rows(M: np.ndarray) -> np.ndarray:
    M = M.reshape(M.shape[0], -1).astype(np.float32)
    M = M - M.mean(axis=1, keepdims=True)
    n = np.linalg.norm(M, axis=1, keepdims=True)
    out = np.zeros_like(M)
    np.divide(M, n, out=out, where=n > 0)
    return out


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    # keep the elementwise-product form: the ranking of near-tied
    # candidates is sensitive to the summation pattern, and the funnel's
    # thresholds assume this exact arithmetic
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if nb == 0 or na == 0:
        return 0.0
    return float((a * b).sum() / (na * nb))


def _corr_metric(tgt: np.ndarray, side: int, sigma: float):
    """Correlation of a flat render against a fixed target vector.

    The render is blurred at the stage's working scale before comparison;
    the target comes in already blurred the same way.
    """

    def fn(sample: np.ndarray) -> float:
        s = sample
        if sigma > 0:
            s = gaussian_filter(s.reshape(side, side), sigma=sigma).ravel()
        return _ncc(tgt, s)

    return fn


def _full_corr(volume: Volume, tgt: np.ndarray, pose: Pose6D) -> float:
    """Correlation between the target vector and the full-resolution render."""
    R = rot.quat_to_matrix(pose.q)
    sample = volume.sample_trilinear(
        pose.t + _OFFS1[:, 0, None] * R[:, 0] + _OFFS1[:, 1, None] * R[:, 1]
    )
    return _ncc(tgt, sample)


def _polar_matrix() -> np.ndarray:
    """Bilinear gather from the descriptor grid onto rings r = 1.5 .. 15."""
    half = (_DESC_SIDE - 1) / 2
    G = np.zeros((_N_RINGS * _N_THETA, _DESC_SIDE * _DESC_SIDE), dtype=np.float32)
    k = 0
    for r in (np.arange(_N_RINGS) + 1) * 1.5:
        for th in np.arange(_N_THETA) * (2 * np.pi / _N_THETA):
            x = half + r * np.cos(th)
            y = half + r * np.sin(th)
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            fx, fy = x - x0, y - y0
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    yy, xx = y0 + dy, x0 + dx
                    if 0 <= yy < _DESC_SIDE and 0 <= xx < _DESC_SIDE:
                        G[k, yy * _DESC_SIDE + xx] += wy * wx
            k += 1
    return G


_GPOL = _polar_matrix()


def _descs_of(renders: np.ndarray):
    """Spin-invariant descriptors of quarter-resolution renders.

    Each render is centered on its intensity centroid, lightly blurred,
    resampled onto polar rings, and reduced to per-ring Fourier magnitudes:
    invariant to in-plane shift (the centering), spin, and flip (the
    magnitudes).  Returns the z-normalized descriptors, the complex ring
    spectra for phase-correlation spin recovery, and the centroids relative
    to the grid center.
    """
    n = len(renders)
    half = (_DESC_SIDE - 1) / 2
    cen = np.empty((n, _DESC_SIDE, _DESC_SIDE), dtype=np.float32)
    cents = np.zeros((n, 2), dtype=np.float32)
    ii = np.arange(_DESC_SIDE)
    for i in range(n):
        im = renders[i]
        m = im.sum()
        if m <= 0:
            cen[i] = im
            continue
        cy = (im.sum(axis=1) @ ii) / m
        cx = (im.sum(axis=0) @ ii) / m
        cents[i] = (cy - half, cx - half)
        cen[i] = ndshift(im, (half - cy, half - cx), order=1, mode="constant", cval=0.0)
    cen = gaussian_filter(cen, sigma=(0, 0.75, 0.75))
    pol = (cen.reshape(n, -1) @ _GPOL.T).reshape(n, _N_RINGS, _N_THETA)
    C = np.fft.rfft(pol, axis=2)
    spec = np.abs(C)[:, :, :_N_HARM]
    D = spec.reshape(n, -1)
    D = D - D.mean(axis=1, keepdims=True)
    nn = np.linalg.norm(D, axis=1, keepdims=True)
    z = np.zeros_like(D)
    np.divide(D, nn, out=z, where=nn > 0)
    return z, C.astype(np.complex64), cents


def _fib_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1
    )


def _base_frames(normals: np.ndarray) -> np.ndarray:
    # fixed helper tilted away from every lattice axis so the in-plane frame
    # varies smoothly over the sphere
    helper = np.array([0.29, 0.64, 0.71])
    helper /= np.linalg.norm(helper)
    frames = np.empty((len(normals), 3, 3))
    for i, n in enumerate(normals):
        h = helper if abs(n @ helper) < 0.95 else np.array([1.0, 0.0, 0.0])
        u = h - (n @ h) * n
        u /= np.linalg.norm(u)
        frames[i] = np.stack([u, np.cross(n, u), n], axis=1)
    return frames


@dataclass
class _ScanBank:
    Rs: np.ndarray        # (P, 3, 3) plane frames, depth-major per normal
    TS: np.ndarray        # (P, 3) plane centers
    quats: list           # per-normal base quaternion
    net: np.ndarray       # (P, 256) normalized anti-aliased renders
    descs: np.ndarray     # (P, rings * harmonics) spin-invariant descriptors
    spectra: np.ndarray   # (P, rings, theta // 2 + 1) complex ring spectra
    cents: np.ndarray     # (P, 2) render centroids, grid-center relative
    n_depths: int


_BANK_CACHE: list[tuple[int, float, Volume, _ScanBank]] = []
_BANK_CACHE_CAP = 4


def _scan_bank(volume: Volume, t_range: float) -> _ScanBank:
    key_range = round(float(t_range), 6)
    for vid, rng_, vref, bank in _BANK_CACHE:
        if vid == id(volume) and vref is volume and rng_ == key_range:
            return bank
    frames = _base_frames(_fib_sphere(_SCAN_NORMALS))
    # depth reach covers the worst-case |t . n| of a cube of half-side
    # t_range; rungs are rounded onto exact grid values so equal nominal
    # depths compare equal across banks
    levels = max(1, round(t_range * math.sqrt(3.0) / _SCAN_DEPTH_STEP))
    depths = [0.0]
    for k in range(1, levels + 1):
        d = round(k * _SCAN_DEPTH_STEP, 6)
        depths += [d, -d]
    depths = np.array(depths)
    Rs = np.repeat(frames, len(depths), axis=0)
    TS = np.concatenate([np.outer(depths, F[:, 2]) for F in frames])
    quats = [rot.matrix_to_quat(F) for F in frames]
    renders = np.empty((len(Rs), _DESC_SIDE, _DESC_SIDE), dtype=np.float32)
    # chunked to bound the transient point-array footprint
    for lo in range(0, len(Rs), 2560):
        hi = min(lo + 2560, len(Rs))
        pts = (
            TS[lo:hi, None, :]
            + _OFFS4[None, :, 0, None] * Rs[lo:hi, None, :, 0]
            + _OFFS4[None, :, 1, None] * Rs[lo:hi, None, :, 1]
        )
        renders[lo:hi] = volume.sample_trilinear(pts.reshape(-1, 3)).reshape(
            hi - lo, _DESC_SIDE, _DESC_SIDE
        )
    net = _norm_rows(
        gaussian_filter(renders, sigma=(0, _RERANK_SIGMA, _RERANK_SIGMA))[:, ::2, ::2]
    )
    descs, spectra, cents = _descs_of(renders)
    bank = _ScanBank(
        Rs=Rs, TS=TS, quats=quats, net=net,
        descs=descs, spectra=spectra, cents=cents, n_depths=len(depths),
    )
    _BANK_CACHE.append((id(volume), key_range, volume, bank))
    del _BANK_CACHE[:-_BANK_CACHE_CAP]
    return bank


def _int_shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    out[max(0, dy) : h - max(0, -dy), max(0, dx) : w - max(0, -dx)] = img[
        max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)
    ]
    return out


_SPINS_DEG = np.arange(int(360 / _SCAN_SPIN_STEP_DEG)) * _SCAN_SPIN_STEP_DEG
_SHIFT_GRID = [
    (dy, dx)
    for dy in range(-_SCAN_SHIFT_SPAN, _SCAN_SHIFT_SPAN + 1, _SCAN_SHIFT_STEP)
    for dx in range(-_SCAN_SHIFT_SPAN, _SCAN_SHIFT_SPAN + 1, _SCAN_SHIFT_STEP)
]


def _image_variants(imgf: np.ndarray):
    """Spin/shift variants of the query image for the bank match.

    The shift grid is centered on the negated intensity centroid of each
    rotated image: content displaced one way means the plane center moved
    the other way, so the variant that undoes the displacement is the one
    whose pose correction lands near the render grid's origin.
    """
    mats, vphi, vdy, vdx = [], [], [], []
    ii = np.arange(IMAGE_SIZE)
    for phi in _SPINS_DEG:
        rimg = (
            imgf
            if phi == 0
            else ndrotate(imgf, phi, reshape=False, order=1, mode="constant", cval=0.0)
        )
        m = rimg.sum()
        half = (IMAGE_SIZE - 1) / 2
        cy = -int(round((rimg.sum(axis=1) @ ii) / m - half)) if m > 0 else 0
        cx = -int(round((rimg.sum(axis=0) @ ii) / m - half)) if m > 0 else 0
        for gy, gx in _SHIFT_GRID:
            dy, dx = cy + gy, cx + gx
            mats.append(_int_shift(rimg, dy, dx)[::4, ::4])
            vphi.append(np.deg2rad(phi))
            vdy.append(float(dy))
            vdx.append(float(dx))
    V = _norm_rows(
        gaussian_filter(np.array(mats), sigma=(0, _RERANK_SIGMA, _RERANK_SIGMA))[:, ::2, ::2]
    )
    return V, np.array(vphi), np.array(vdy), np.array(vdx)


def _top_variants(row: np.ndarray, k: int) -> list[int]:
    # best k variants with all-distinct spins, so one pose row proposes
    # genuinely different in-plane alignments
    picks, spins = [], set()
    for vi in np.argsort(row)[::-1]:
        spin = vi // len(_SHIFT_GRID)
        if spin in spins:
            continue
        picks.append(int(vi))
        spins.add(spin)
        if len(picks) >= k:
            break
    return picks


_SNAP_SPINS = np.arange(-12, 12.1, 3.0)
_SNAP_SHIFTS = [(dy, dx) for dy in (-4, -2, 0, 2, 4) for dx in (-4, -2, 0, 2, 4)]


def _snap_bank(imgf: np.ndarray):
    """Small spin/shift bank of the query at half resolution.

    Candidates are snapped to the best in-plane alignment before the first
    Nelder-Mead stage; the optimizer then only has out-of-plane work to do.
    """
    t2 = imgf[::2, ::2]
    mats, meta = [], []
    for phi in _SNAP_SPINS:
        rimg = (
            ndrotate(t2, phi, reshape=False, order=1, mode="constant", cval=0.0)
            if phi
            else t2
        )
        for dy, dx in _SNAP_SHIFTS:
            mats.append(_int_shift(rimg, dy, dx))
            meta.append((phi, dy, dx))
    return _norm_rows(np.array(mats)), meta


# -- local optimizer ---------------------------------------------------------


def _working_metric(target: np.ndarray, metric: str, sigma: float):
    """Callable scoring a flat render against a strided target image.

    Both sides see the same blur, so the smoothed landscape the optimizer
    walks has the optimum in the same place as the sharp one.
    """
    side = target.shape[0]
    tgt = gaussian_filter(target, sigma=sigma) if sigma > 0 else target
    if metric == "msd":
        tflat = tgt.ravel()

        def fn(sample: np.ndarray) -> float:
            s = sample.reshape(side, side)
            if sigma > 0:
                s = gaussian_filter(s, sigma=sigma)
            return -float(np.mean((tflat - s.ravel()) ** 2))

        return fn
    tz = tgt.ravel() - tgt.mean()
    nt = np.linalg.norm(tz)
    if nt == 0:
        raise FlatImage("query image has zero intensity variance, ncc is undefined")
    tz = tz / nt

    def fn(sample: np.ndarray) -> float:
        s = sample.reshape(side, side)
        if sigma > 0:
            s = gaussian_filter(s, sigma=sigma)
        sz = s.ravel() - s.mean()
        ns = np.linalg.norm(sz)
        if ns == 0:
            return 0.0
        return float(tz @ sz / ns)

    return fn


def _nm_start(
    volume: Volume,
    init: Pose6D,
    metric_fn,
    offsets: np.ndarray,
    steps: list[float],
    max_iter: int,
    xatol: float,
    trace: list[float] | None = None,
) -> tuple[Pose6D, float]:
    """One Nelder-Mead start: axis-angle increment about ``init`` plus dt."""

    def objective(params: np.ndarray) -> float:
        q = rot.quat_multiply(rot.rotvec_to_quat(params[:3]), init.q)
        R = rot.quat_to_matrix(q)
        pts = (
            init.t
            + params[3:]
            + offsets[:, 0, None] * R[:, 0]
            + offsets[:, 1, None] * R[:, 1]
        )
        val = metric_fn(volume.sample_trilinear(pts))
        if trace is not None:
            trace.append(val if not trace else max(trace[-1], val))
        return -val

    x0 = np.zeros(6)
    simplex = np.vstack([x0, x0 + np.diag(steps)])
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options=dict(
            maxiter=max_iter, xatol=xatol, fatol=1e-10, initial_simplex=simplex
        ),
    )
    pose = Pose6D(
        init.t + res.x[3:], rot.quat_multiply(rot.rotvec_to_quat(res.x[:3]), init.q)
    )
    return pose, -float(res.fun)


def refine_pose(
    img, volume: Volume, init: Pose6D, cfg: RecoveryConfig | None = None
) -> tuple[Pose6D, float, list[float]]:
    """Single-start refinement exposing the optimizer's best-so-far trace.

    The trace is the running maximum of the working similarity at each
    objective evaluation, so it never decreases.  The returned score is the
    final trace entry.
    """
    cfg = cfg or RecoveryConfig()
    px = _as_pixels(img)
    if cfg.metric == "ncc" and float(px.std()) == 0.0:
        raise FlatImage("query image has zero intensity variance, ncc is undefined")
    fn = _working_metric(px[::2, ::2], cfg.metric, sigma=0.0)
    trace: list[float] = []
    pose, score = _nm_start(
        volume,
        init,
        fn,
        _OFFS2,
        steps=[0.05] * 3 + [0.02] * 3,
        max_iter=min(110, cfg.max_iters),
        xatol=cfg.tol,
        trace=trace,
    )
    return pose, score, trace


# -- search modes ------------------------------------------------------------


def _argmax_merge(results: list[tuple[Pose6D, float]]) -> tuple[Pose6D, float]:
    # strict improvement only, so ties resolve to the lowest start index
    best_i = 0
    for i in range(1, len(results)):
        if results[i][1] > results[best_i][1]:
            best_i = i
    return results[best_i]


def _local_chain(
    px: np.ndarray, volume: Volume, cfg: RecoveryConfig, start: Pose6D
) -> tuple[Pose6D, float]:
    # blurred capture pass, sharp pass, then a fresh-simplex polish; the
    # restart recovers cases where the first sharp simplex collapses early
    captured, _ = _nm_start(
        volume,
        start,
        _working_metric(px[::2, ::2], cfg.metric, sigma=_FINE_CAPTURE_SIGMA),
        _OFFS2,
        steps=[0.08] * 3 + [0.03] * 3,
        max_iter=min(45, cfg.max_iters),
        xatol=cfg.tol,
    )
    fn = _working_metric(px[::2, ::2], cfg.metric, sigma=0.0)
    pose, _ = _nm_start(
        volume,
        captured,
        fn,
        _OFFS2,
        steps=[0.03] * 3 + [0.012] * 3,
        max_iter=min(65, cfg.max_iters),
        xatol=cfg.tol,
    )
    return _nm_start(
        volume,
        pose,
        fn,
        _OFFS2,
        steps=[0.012] * 3 + [0.005] * 3,
        max_iter=min(70, cfg.max_iters),
        xatol=cfg.tol,
    )


def _recover_local(
    px: np.ndarray, volume: Volume, cfg: RecoveryConfig, init: Pose6D
) -> tuple[Pose6D, float]:
    results = []
    for i in range(cfg.n_starts):
        if i == 0:
            start = init
        else:
            # child streams keyed by start index: start i's init does not
            # depend on how many starts run, so best-of-N is monotone in N
            g = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
            dq = rot.rotvec_to_quat(g.normal(0.0, _JITTER_ROT, 3))
            start = Pose6D(init.t + g.normal(0.0, _JITTER_T, 3), rot.quat_multiply(dq, init.q))
        results.append(_local_chain(px, volume, cfg, start))
    return _argmax_merge(results)


def _recover_global(
    px: np.ndarray, volume: Volume, cfg: RecoveryConfig
) -> tuple[Pose6D, float]:
    bank = _scan_bank(volume, cfg.t_search_range)
    V, vphi, vdy, vdx = _image_variants(px)
    S = bank.net @ V.T

    # pool rows by their best thumbnail variant, then admit rows the
    # spin-invariant descriptor ranks highly: the two channels fail on
    # different images, so the union covers both failure modes
    row_best = S[np.arange(len(S)), np.argmax(S, axis=1)]
    order = list(np.argsort(row_best)[::-1][:_POOL])
    in_pool = set(order)
    dz, cimg, _ = _descs_of(px.astype(np.float32)[None, ::4, ::4])
    d_img = dz[0]
    ds = bank.descs @ d_img
    desc_order = np.argsort(ds)[::-1]
    for ci in desc_order[:_DESC_POOL]:
        if ci not in in_pool:
            order.append(int(ci))
            in_pool.add(int(ci))

    pose_idx, var_idx = [], []
    for ci in order:
        for vi in _top_variants(S[ci], _VARIANTS_PER_ROW):
            pose_idx.append(ci)
            var_idx.append(vi)
    pose_idx = np.array(pose_idx)
    var_idx = np.array(var_idx)

    # image variant (spin phi, integer shift dy/dx) maps back to a pose:
    # the shift was applied after rotation, so the translation correction
    # uses the unspun frame while the quaternion absorbs the spin
    phis = vphi[var_idx]
    dyx = np.stack([vdy[var_idx], vdx[var_idx]], axis=1)
    U = bank.Rs[pose_idx][:, :, 0]
    W = bank.Rs[pose_idx][:, :, 1]
    NV = bank.Rs[pose_idx][:, :, 2]
    c, s = np.cos(phis)[:, None], np.sin(phis)[:, None]
    U2 = c * U - s * W
    W2 = s * U + c * W
    cand_t = bank.TS[pose_idx] + dyx[:, 1:2] * _PX * U + dyx[:, 0:1] * _PX * W

    # re-rank candidates with blurred quarter-resolution renders
    p4 = (
        cand_t[:, None, :]
        + _OFFS4[None, :, 0, None] * U2[:, None, :]
        + _OFFS4[None, :, 1, None] * W2[:, None, :]
    )
    M4 = _norm_rows(
        gaussian_filter(
            volume.sample_trilinear(p4.reshape(-1, 3)).reshape(len(pose_idx), 32, 32),
            sigma=(0, _RERANK_SIGMA, _RERANK_SIGMA),
        )
    )
    t4 = gaussian_filter(px[::4, ::4], sigma=_RERANK_SIGMA)
    t4z = (t4 - t4.mean()).ravel()
    norm = np.linalg.norm(t4z)
    # a structureless image ranks everything equally (reachable under msd
    # only; ncc raises FlatImage before the search starts)
    rr = M4 @ (t4z / norm).astype(np.float32) if norm > 0 else np.zeros(len(M4))
    rorder = np.argsort(rr)[::-1]

    # quaternion of every candidate (spin -phi about the plane normal folded
    # into the base frame), vectorized for the dedup walks
    QN = np.array([bank.quats[n] for n in pose_idx // bank.n_depths])
    cz, sz = np.cos(phis / 2), -np.sin(phis / 2)
    q_cand = np.stack(
        [
            QN[:, 0] * cz - QN[:, 3] * sz,
            QN[:, 1] * cz + QN[:, 2] * sz,
            QN[:, 2] * cz - QN[:, 1] * sz,
            QN[:, 0] * sz + QN[:, 3] * cz,
        ],
        axis=1,
    )

    def far_from(picks: list, idx: int, t_thr: float, ang_thr: float) -> bool:
        if not picks:
            return True
        cosq = np.cos(np.deg2rad(ang_thr) / 2)
        kq = q_cand[picks]
        kt = cand_t[picks]
        near = (np.abs(kq @ q_cand[idx]) > cosq) & (
            np.linalg.norm(kt - cand_t[idx], axis=1) < t_thr
        )
        return not near.any()

    def walk(base: list, t_thr: float, ang_thr: float, want: int, normal_cap: int):
        picks = list(base)
        normal_ct: dict[int, int] = {}
        for b in base:
            nid = int(pose_idx[b]) // bank.n_depths
            normal_ct[nid] = normal_ct.get(nid, 0) + 1
        for idx in rorder:
            if len(picks) >= want:
                break
            nid = int(pose_idx[idx]) // bank.n_depths
            if normal_cap and normal_ct.get(nid, 0) >= normal_cap:
                continue
            if not far_from(picks, idx, t_thr, ang_thr):
                continue
            normal_ct[nid] = normal_ct.get(nid, 0) + 1
            picks.append(idx)
        return picks

    # two-radius diversity: a tight walk keeps the strongest distinct
    # candidates (capped per normal so one orientation cannot monopolize
    # the optimizer time), then a loose walk appends coarse coverage of
    # whatever pose space the first one missed
    kept = walk([], 0.05, 8.0, _KEPT_NEAR, _PER_NORMAL_CAP)
    cover = walk(kept, 0.12, 18.0, _KEPT_NEAR + _KEPT_WIDE, 0)

    quats: dict[int, np.ndarray] = {}

    def cand_quat(j: int) -> np.ndarray:
        if j not in quats:
            quats[j] = rot.quat_multiply(
                bank.quats[pose_idx[j] // bank.n_depths],
                rot.rotvec_to_quat([0.0, 0.0, -phis[j]]),
            )
        return quats[j]

    tgt4b = gaussian_filter(px[::4, ::4], sigma=_MID_SIGMA).ravel()
    launches = [
        (cand_t[idx].copy(), cand_quat(idx), np.stack([U2[idx], W2[idx], NV[idx]], axis=1))
        for idx in cover
    ]

    # guaranteed launches from the descriptor channel, with the in-plane
    # angle recovered by polar phase correlation: these rows earned their
    # rank with spin factored out, so the thumbnail spin grid (which
    # already failed on them) is not consulted
    ii = np.arange(IMAGE_SIZE)
    half = (IMAGE_SIZE - 1) / 2
    t4z4b = tgt4b - tgt4b.mean()
    t4z4b = t4z4b / max(np.linalg.norm(t4z4b), 1e-12)
    added = 0
    for ci in desc_order[:_FORCED_FROM]:
        if added >= _FORCED:
            break
        ci = int(ci)
        nid = ci // bank.n_depths
        xp = (np.conj(bank.spectra[ci][:, 1:]) * cimg[0][:, 1:]).sum(axis=0)
        corr = np.fft.irfft(np.concatenate([[0.0 + 0.0j], xp]), n=_N_THETA)
        best_h = None
        # the cross-power is multimodal on near-symmetric content, so the
        # two strongest angle peaks both get a hypothesis
        for b in np.argsort(corr)[::-1][:2]:
            a_deg = 360.0 * b / _N_THETA
            q0 = rot.quat_multiply(
                bank.quats[nid], rot.rotvec_to_quat([0.0, 0.0, -np.deg2rad(a_deg)])
            )
            near = False
            for tl, ql, _R in launches:
                if (
                    rot.quaternion_angle_deg(q0, ql) < 8.0
                    and np.linalg.norm(bank.TS[ci] - tl) < 0.05
                ):
                    near = True
                    break
            if near:
                continue
            rimg = (
                ndrotate(px, a_deg, reshape=False, order=1, mode="constant", cval=0.0)
                if a_deg
                else px
            )
            m = rimg.sum()
            if m <= 0:
                continue
            ciy = (rimg.sum(axis=1) @ ii) / m - half
            cix = (rimg.sum(axis=0) @ ii) / m - half
            dy = 4.0 * bank.cents[ci][0] - ciy
            dx = 4.0 * bank.cents[ci][1] - cix
            F = bank.Rs[nid * bank.n_depths]
            t0 = bank.TS[ci] + dx * _PX * F[:, 0] + dy * _PX * F[:, 1]
            R0 = rot.quat_to_matrix(q0)
            sl = volume.sample_trilinear(
                t0 + _OFFS4[:, 0, None] * R0[:, 0] + _OFFS4[:, 1, None] * R0[:, 1]
            )
            sc = _ncc(t4z4b, gaussian_filter(sl.reshape(32, 32), sigma=_RERANK_SIGMA).ravel())
            if best_h is None or sc > best_h[0]:
                best_h = (sc, t0, q0, R0)
        if best_h is not None:
            launches.append((best_h[1], best_h[2], best_h[3]))
            added += 1

    snap_V, snap_meta = _snap_bank(px)
    mid_fn = _corr_metric(tgt4b, 32, _MID_SIGMA)
    mid_iters = min(52, cfg.max_iters)
    mids: list[tuple[float, Pose6D]] = []
    for t0, q0, R0 in launches:
        # snap to the best in-plane alignment before optimizing
        sl = volume.sample_trilinear(
            t0 + _OFFS2[:, 0, None] * R0[:, 0] + _OFFS2[:, 1, None] * R0[:, 1]
        )
        slz = sl - sl.mean()
        nz = np.linalg.norm(slz)
        if nz > 0:
            scores = snap_V @ (slz / nz).astype(np.float32)
            sphi, sdy, sdx = snap_meta[int(np.argmax(scores))]
            q0 = rot.quat_multiply(q0, rot.rotvec_to_quat([0.0, 0.0, -np.deg2rad(sphi)]))
            # snap shifts live on the half-resolution grid, hence the factor 2
            t0 = t0 + 2 * sdx * _PX * R0[:, 0] + 2 * sdy * _PX * R0[:, 1]
        mid, _ = _nm_start(
            volume,
            Pose6D(t0, q0),
            mid_fn,
            _OFFS4,
            steps=[0.2] * 3 + [0.07] * 3,
            max_iter=mid_iters,
            xatol=cfg.tol,
        )
        # score the mid by its best in-plane snap variant and keep that
        # correction: residual spin and shift are what the fine chain
        # crosses slowest
        Rm = rot.quat_to_matrix(mid.q)
        sl = volume.sample_trilinear(
            mid.t + _OFFS2[:, 0, None] * Rm[:, 0] + _OFFS2[:, 1, None] * Rm[:, 1]
        )
        slz = sl - sl.mean()
        nz = np.linalg.norm(slz)
        if nz == 0:
            mids.append((-1.0, mid))
            continue
        scores = snap_V @ (slz / nz).astype(np.float32)
        vi = int(np.argmax(scores))
        sphi, sdy, sdx = snap_meta[vi]
        if sphi or sdy or sdx:
            mid = Pose6D(
                mid.t + 2 * sdx * _PX * Rm[:, 0] + 2 * sdy * _PX * Rm[:, 1],
                rot.quat_multiply(mid.q, rot.rotvec_to_quat([0.0, 0.0, -np.deg2rad(sphi)])),
            )
        mids.append((float(scores[vi]), mid))
    mids.sort(key=lambda x: -x[0])

    # fine chain: a mid-scale recapture, a blurred half-resolution pass to
    # pull in starts a few degrees off, then the sharp pass
    tgt2 = px[::2, ::2].ravel()
    tgt2b = gaussian_filter(px[::2, ::2], sigma=_FINE_CAPTURE_SIGMA).ravel()
    cap_fn = _corr_metric(tgt2b, 64, _FINE_CAPTURE_SIGMA)
    sharp_fn = _corr_metric(tgt2, 64, 0.0)
    fine_top = max(_FINE_TOP, cfg.n_starts - (_KEPT_NEAR + _KEPT_WIDE))
    fins: list[tuple[Pose6D, float]] = []
    used = 0
    keys: list[tuple[np.ndarray, np.ndarray]] = []
    for s0, p in mids:
        if any(
            rot.quaternion_angle_deg(p.q, qk) < 3 and np.linalg.norm(p.t - tk) < 0.04
            for qk, tk in keys
        ):
            continue
        keys.append((p.q, p.t))
        used += 1
        m2, _ = _nm_start(
            volume, p, mid_fn, _OFFS4,
            steps=[0.12] * 3 + [0.05] * 3, max_iter=min(45, cfg.max_iters), xatol=cfg.tol,
        )
        fa, _ = _nm_start(
            volume, m2, cap_fn, _OFFS2,
            steps=[0.08] * 3 + [0.03] * 3, max_iter=min(45, cfg.max_iters), xatol=cfg.tol,
        )
        fins.append(
            _nm_start(
                volume, fa, sharp_fn, _OFFS2,
                steps=[0.03] * 3 + [0.012] * 3, max_iter=min(65, cfg.max_iters), xatol=cfg.tol,
            )
        )
        if used >= fine_top:
            break
    if not fins:
        raise FlatImage("no informative candidates found, query image may be blank")

    # full-resolution arbitration, then a short polish of the leaders: the
    # half-resolution winner is not always the full-resolution one
    tgt1 = px.ravel()
    scored = [(_full_corr(volume, tgt1, fine), fine) for fine, _s in fins]
    scored.sort(key=lambda x: -x[0])
    best_pose, best_score = scored[0][1], scored[0][0]
    for _sc, fine in scored[:3]:
        pol, _ = _nm_start(
            volume, fine, sharp_fn, _OFFS2,
            steps=[0.012] * 3 + [0.005] * 3, max_iter=min(50, cfg.max_iters), xatol=cfg.tol,
        )
        full = _full_corr(volume, tgt1, pol)
        if full > best_score:
            best_pose, best_score = pol, full
    return best_pose, best_score


def recover_pose(
    img,
    volume: Volume,
    cfg: RecoveryConfig | None = None,
    init: Pose6D | None = None,
) -> tuple[Pose6D, float]:
    """Best pose over ``cfg.n_starts`` local optimizations, with its score.

    ``img`` may be a :class:`SliceImage` or a bare 128x128 array.  When
    ``init`` is given (or ``rot_search_mode`` is ``local``) the search stays
    near the initial pose; otherwise the full orientation funnel runs.  The
    returned score is the full-resolution similarity under ``cfg.metric``,
    and the returned pose is the better-scoring member of the in-plane flip
    pair.
    """
    cfg = cfg or RecoveryConfig()
    px = _as_pixels(img)
    if cfg.metric == "ncc" and float(px.std()) == 0.0:
        raise FlatImage("query image has zero intensity variance, ncc is undefined")
    if init is not None or cfg.rot_search_mode == "local":
        pose, _ = _recover_local(px, volume, cfg, init or Pose6D.identity())
    else:
        pose, _ = _recover_global(px, volume, cfg)
    candidates = [pose, in_plane_flip(pose, "x"), in_plane_flip(pose, "y")]
    scored = [(p, score_pose(px, volume, p, cfg.metric)) for p in candidates]
    return _argmax_merge(scored)


# -- batch --------------------------------------------------------------------


@dataclass(frozen=True)
class RecoveryResult:
    """One manifest row's outcome; ``pose`` is None when the row failed."""

    row: ManifestRow
    pose: Pose6D | None
    score: float
    error: str | None = None


def recover_pose_batch(
    rows, volume: Volume, cfg: RecoveryConfig | None = None, base_dir=None
) -> list[RecoveryResult]:
    """Recover every manifest row, isolating per-row failures.

    Output order matches input order.  Each row gets its own seed stream
    derived from ``cfg.seed`` and the row index, so results are
    deterministic regardless of chunking.  A row that raises is returned
    with ``pose None`` and the message in ``error`` instead of aborting the
    batch.
    """
    cfg = cfg or RecoveryConfig()
    base = Path(base_dir) if base_dir is not None else None
    out: list[RecoveryResult] = []
    for i, row in enumerate(rows):
        row_seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
        row_cfg = replace(cfg, seed=row_seed)
        try:
            path = Path(row.path)
            if base is not None and not path.is_absolute():
                path = base / path
            pixels = read_pgm(path)
            init = row.pose if row_cfg.rot_search_mode == "local" else None
            pose, score = recover_pose(pixels, volume, row_cfg, init=init)
            out.append(RecoveryResult(row=row, pose=pose, score=score))
        except Exception as exc:  # noqa: BLE001. row isolation is the contract
            out.append(
                RecoveryResult(row=row, pose=None, score=float("nan"), error=str(exc))
            )
    return out


PREDICTIONS_HEADER = [
    "path",
    "volume_id",
    "tx",
    "ty",
    "tz",
    "qw",
    "qx",
    "qy",
    "qz",
    "score",
    "error",
]


@dataclass(frozen=True)
class PredictionRecord:
    path: str
    volume_id: str
    pose: Pose6D | None
    score: float
    error: str | None = None


def write_predictions(results, path) -> None:
    """Predictions CSV: manifest pose columns plus score and error."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PREDICTIONS_HEADER)
        for r in results:
            cells = r.pose.csv_cells() if r.pose is not None else [""] * 7
            w.writerow(
                [r.row.path, r.row.volume_id, *cells,
                 "" if math.isnan(r.score) else f"{r.score:.7f}", r.error or ""]
            )


def read_predictions(path) -> list[PredictionRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTIONS_HEADER:
            raise FormatError(f"bad predictions header: {header}")
        out = []
        for cells in reader:
            if len(cells) != len(PREDICTIONS_HEADER):
                raise FormatError(f"bad predictions row: {cells}")
            failed = cells[2] == ""
            pose = None if failed else Pose6D.from_csv_cells(cells[2:9])
            score = float("nan") if cells[9] == "" else float(cells[9])
            out.append(
                PredictionRecord(
                    path=cells[0],
                    volume_id=cells[1],
                    pose=pose,
                    score=score,
                    error=cells[10] or None,
                )
            )
        return out
