"""End-to-end acceptance checks.

Every test here guards one release criterion and prints a single
``ACCEPTANCE <name>: PASS|FAIL`` line (run pytest with ``-s`` to see them
all together). The checks are intentionally independent of the unit
tests: oracles are recomputed inline with plain loops rather than
imported from the library under test.
"""

import csv
import math
import time

import numpy as np

from planepose import rotations as rot
from planepose.evaluation import FoldReport, StatSummary, loocv_aggregate
from planepose.phantom import make_phantom
from planepose.pose import Pose6D, pose_set_stats
from planepose.recovery import RecoveryConfig, in_plane_flip, recover_pose
from planepose.registration import (
    SimilarityTransform,
    fit_similarity_landmarks,
    refine_similarity_masked,
)
from planepose.sampling import SamplingSpec, generate_dataset
from planepose.slicing import IMAGE_SIZE, extract_slice, quantize_u8


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


# -- rotation math -----------------------------------------------------------


def test_rotation_math_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)

    six = rng.normal(size=(100_000, 6))
    R = rot.rot6d_to_matrix(six)
    worst_defect = rot.rotation_defect(R)
    back = rot.rot6d_to_matrix(rot.matrix_to_rot6d(R))
    worst_roundtrip = float(np.abs(back - R).max())

    qa = np.array([rot.random_quaternion(rng) for _ in range(10_000)])
    qb = np.array([rot.random_quaternion(rng) for _ in range(10_000)])
    Ra = np.array([rot.quat_to_matrix(q) for q in qa])
    Rb = np.array([rot.quat_to_matrix(q) for q in qb])
    worst_angle_gap = float(
        np.abs(rot.geodesic_deg(Ra, Rb) - rot.quaternion_angle_deg(qa, qb)).max()
    )

    dt = time.perf_counter() - t0
    ok = worst_defect < 1e-9 and worst_roundtrip < 1e-9 \
        and worst_angle_gap < 1e-9 and dt < 10.0
    _verdict(
        "rotation-math",
        ok,
        f"defect {worst_defect:.2e}, roundtrip {worst_roundtrip:.2e}, "
        f"angle gap {worst_angle_gap:.2e} deg, {dt:.1f}s",
    )


def test_chordal_mean_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)

    probes = np.array([rot.random_rotation(rng) for _ in range(10_000)])
    margin = np.inf
    for _ in range(100):
        Rs = np.array([rot.random_rotation(rng) for _ in range(5)])
        mean = rot.chordal_mean(Rs)
        c0 = rot.chordal_cost(mean, Rs)
        probe_costs = ((Rs[None, :] - probes[:, None]) ** 2).sum(axis=(1, 2, 3))
        margin = min(margin, float(probe_costs.min() - c0))

    # offsets symmetric about zero: the chordal optimum then sits exactly at
    # the arithmetic angle mean (odd terms of the cost gradient cancel)
    worst_axis = 0.0
    axis = np.array([0.3, -0.5, 0.81])
    axis /= np.linalg.norm(axis)
    for _ in range(50):
        mid = float(rng.uniform(-0.5, 0.5))
        step = float(rng.uniform(0.01, 0.3))
        angles = mid + step * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        Rs = [rot.quat_to_matrix(rot.rotvec_to_quat(axis * a)) for a in angles]
        mean = rot.chordal_mean(Rs)
        expect = rot.quat_to_matrix(rot.rotvec_to_quat(axis * angles.mean()))
        worst_axis = max(worst_axis, float(np.abs(mean - expect).max()))

    dt = time.perf_counter() - t0
    ok = margin >= 0.0 and worst_axis < 1e-9 and dt < 60.0
    _verdict(
        "chordal-mean",
        ok,
        f"probe margin {margin:.3e}, single-axis error {worst_axis:.2e}, {dt:.1f}s",
    )


# -- pose-set statistics against a brute-force oracle ------------------------


def _oracle_pose_stats(poses, scale_mm):
    """Same statistics as pose_set_stats, written with plain Python loops."""
    n = len(poses)
    cx = sum(float(p.t[0]) for p in poses) / n
    cy = sum(float(p.t[1]) for p in poses) / n
    cz = sum(float(p.t[2]) for p in poses) / n
    dists = [
        math.sqrt((p.t[0] - cx) ** 2 + (p.t[1] - cy) ** 2 + (p.t[2] - cz) ** 2)
        * scale_mm
        for p in poses
    ]
    rms_mm = math.sqrt(sum(d * d for d in dists) / n)

    # chordal mean by projecting the arithmetic mean back to SO(3)
    M = np.zeros((3, 3))
    for p in poses:
        M += p.matrix()
    U, _, Vt = np.linalg.svd(M / n)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    mean_R = U @ D @ Vt
    angles = []
    for p in poses:
        Rd = mean_R.T @ p.matrix()
        cos = (np.trace(Rd) - 1.0) / 2.0
        angles.append(math.degrees(math.acos(max(-1.0, min(1.0, cos)))))
    rot_rms = math.sqrt(sum(a * a for a in angles) / n)
    return (cx, cy, cz), dists, rms_mm, angles, rot_rms


def test_pose_set_statistics_match_brute_force():
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(200):
        poses = [
            Pose6D(rng.uniform(-0.5, 0.5, 3), rot.random_quaternion(rng))
            for _ in range(6)
        ]
        scale = float(rng.uniform(10.0, 40.0))
        got = pose_set_stats(poses, scale_mm=scale)
        cen, dists, rms_mm, angles, rot_rms = _oracle_pose_stats(poses, scale)

        def rel(a, b):
            return abs(a - b) / max(abs(a), abs(b), 1e-30)

        worst = max(worst, rel(got.rms_mm, rms_mm), rel(got.rot_rms_deg, rot_rms))
        for i in range(3):
            worst = max(worst, abs(float(got.centroid[i]) - cen[i]))
        for a, b in zip(got.dist_mm, dists):
            worst = max(worst, rel(float(a), b))
        for a, b in zip(got.rot_deg, angles):
            worst = max(worst, rel(float(a), b))
    ok = worst < 1e-12
    _verdict("pose-set-stats-oracle", ok, f"worst relative gap {worst:.2e}")


def test_published_median_fixture():
    """Aggregating the published per-fold medians must reproduce the
    published overall figures within half a printout unit (0.005)."""
    def single(value):
        return StatSummary(median=value, mean=value, sd=0.0, min=value, max=value)

    trans = [3.65, 3.76, 2.40, 3.66, 3.57, 4.12]
    rotd = [5.15, 7.53, 5.33, 4.79, 7.23, 8.45]
    folds = [
        FoldReport(fold_id=f"f{i}", n=1, translation=single(t), rotation=single(r))
        for i, (t, r) in enumerate(zip(trans, rotd))
    ]
    agg = loocv_aggregate(folds)
    t_gap = abs(agg.translation.median - 3.53)
    r_gap = abs(agg.rotation.median - 6.42)
    print(f"\nACCEPTANCE median-fixture-mm: {'PASS' if t_gap <= 0.005 else 'FAIL'} "
          f"(got {agg.translation.median:.5f}, want 3.53 +/- 0.005)")
    print(f"ACCEPTANCE median-fixture-deg: {'PASS' if r_gap <= 0.005 else 'FAIL'} "
          f"(got {agg.rotation.median:.5f}, want 6.42 +/- 0.005)")
    assert t_gap <= 0.005
    # the rotation figure is not the mean of its published per-fold medians
    # (6.41333 vs 6.42); the gap exceeds any rounding of the inputs, so this
    # half is expected to fail until the upstream figure is reconciled
    assert r_gap <= 0.005


# -- slicing ------------------------------------------------------------------


def _bilinear_zero_fill(plane, ix, iy):
    x0, y0 = int(math.floor(ix)), int(math.floor(iy))
    fx, fy = ix - x0, iy - y0
    total = 0.0
    for dx, wx in ((0, 1 - fx), (1, fx)):
        for dy, wy in ((0, 1 - fy), (1, fy)):
            x, y = x0 + dx, y0 + dy
            if 0 <= x < plane.shape[0] and 0 <= y < plane.shape[1]:
                total += wx * wy * plane[x, y]
    return total


def test_slice_oracle():
    t0 = time.perf_counter()
    ph = make_phantom(1, dims=(97, 73, 65))
    img = extract_slice(ph, Pose6D.identity(), side_norm=2.0)
    plane = ph.voxels[:, :, 32].astype(float)
    S = ph.scale_mm / ph.spacing_mm
    offs = ((np.arange(IMAGE_SIZE) + 0.5) / IMAGE_SIZE - 0.5) * 2.0
    expected = np.empty((IMAGE_SIZE, IMAGE_SIZE))
    for i in range(IMAGE_SIZE):
        for j in range(IMAGE_SIZE):
            expected[i, j] = _bilinear_zero_fill(
                plane, offs[j] * S + (97 - 1) / 2, offs[i] * S + (73 - 1) / 2
            )
    identity_gap = int(
        np.abs(img.pixels.astype(int) - quantize_u8(expected).astype(int)).max()
    )

    ph2 = make_phantom(2)
    pose = Pose6D([0.05, -0.02, 0.08], rot.rotvec_to_quat([0.3, -0.2, 0.5]))
    rz90 = Pose6D([0.0, 0.0, 0.0], rot.rotvec_to_quat([0.0, 0.0, np.pi / 2]))
    a = extract_slice(ph2, pose).pixels.astype(int)
    b = extract_slice(ph2, pose.compose(rz90)).pixels.astype(int)
    rot_gap = int(np.abs(b - np.rot90(a, 1)).max())

    dt = time.perf_counter() - t0
    ok = identity_gap <= 1 and rot_gap <= 1 and dt < 5.0
    _verdict(
        "slice-oracle",
        ok,
        f"identity gap {identity_gap}, 90-degree gap {rot_gap}, {dt:.1f}s",
    )


# -- dataset generation -------------------------------------------------------


def test_dataset_counts_and_determinism(tmp_path):
    vol = make_phantom(5, dims=(56, 56, 56))
    spec = SamplingSpec(n_random=20699, n_near_sp=1330, seed=404)

    d1 = tmp_path / "run1"
    d2 = tmp_path / "run2"
    generate_dataset(vol, spec, d1)
    generate_dataset(vol, spec, d2)

    with open(d1 / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    n_random = sum(1 for r in rows if r["category"] == "random")
    n_near = sum(1 for r in rows if r["category"] == "near_sp")

    byte_identical = (
        (d1 / "manifest.csv").read_bytes() == (d2 / "manifest.csv").read_bytes()
        and all(
            (d1 / r["path"]).read_bytes() == (d2 / r["path"]).read_bytes()
            for r in rows[:: max(1, len(rows) // 500)]
        )
    )

    sp = spec.sp_pose
    worst_ang = 0.0
    worst_t = 0.0
    for r in rows:
        if r["category"] != "near_sp":
            continue
        q = np.array([float(r["qw"]), float(r["qx"]), float(r["qy"]), float(r["qz"])])
        t = np.array([float(r["tx"]), float(r["ty"]), float(r["tz"])])
        worst_ang = max(worst_ang, rot.quaternion_angle_deg(q, sp.q))
        worst_t = max(worst_t, float(np.linalg.norm(t - sp.t)))

    ok = (
        len(rows) == 22029
        and n_random == 20699
        and n_near == 1330
        and byte_identical
        and worst_ang <= 1.9
        and worst_t <= 0.001 * math.sqrt(3.0) + 1e-12
    )
    _verdict(
        "dataset-determinism",
        ok,
        f"rows {len(rows)} ({n_random}+{n_near}), byte-identical {byte_identical}, "
        f"near-SP max {worst_ang:.3f} deg / {worst_t:.5f} norm",
    )


# -- registration -------------------------------------------------------------


def test_registration_recovery():
    from scipy.ndimage import gaussian_filter

    from planepose.registration import Landmarks
    from planepose.volume import Volume

    t0 = time.perf_counter()
    rng = np.random.default_rng(9)

    worst_lm = 0.0
    labels = [f"p{i}" for i in range(8)]
    for _ in range(25):
        T = SimilarityTransform(
            R=rot.random_rotation(rng),
            t_mm=rng.uniform(-5, 5, 3),
            s=float(rng.uniform(0.9, 1.12)),
        )
        pts = rng.uniform(-20, 20, (8, 3))
        fit = fit_similarity_landmarks(
            Landmarks(labels=labels, points_mm=pts),
            Landmarks(labels=labels, points_mm=T.apply(pts)),
        )
        worst_lm = max(
            worst_lm,
            float(np.abs(fit.R - T.R).max()),
            float(np.abs(fit.t_mm - T.t_mm).max()),
            abs(fit.s - T.s),
        )

    # constructed warp of a band-limited phantom: the masked-MSD optimum then
    # sits at the true transform, so recovery error is meaningful
    ph = make_phantom(21, dims=(64, 60, 56))
    fixed = Volume(
        quantize_u8(gaussian_filter(ph.voxels.astype(float), sigma=1.2)),
        ph.spacing_mm,
        mask=ph.mask,
        volume_id="smooth",
    )
    true_warp = SimilarityTransform(
        R=rot.quat_to_matrix(rot.rotvec_to_quat([0.0, 0.0, np.radians(4.0)])),
        t_mm=np.array([2.0, -1.0, 1.5]),
        s=1.05,
    )
    center = (np.asarray(fixed.dims, float) - 1.0) / 2.0
    idx = np.indices(fixed.dims).reshape(3, -1).T
    src_pts = true_warp.apply((idx - center) * fixed.spacing_mm) / fixed.scale_mm
    moving = Volume(
        quantize_u8(fixed.sample_trilinear(src_pts)).reshape(fixed.dims),
        fixed.spacing_mm,
        mask=fixed.mask,
        volume_id="warped",
    )
    init = SimilarityTransform(
        R=rot.quat_to_matrix(rot.rotvec_to_quat([0.0, np.radians(3.0), 0.0])) @ true_warp.R,
        t_mm=true_warp.t_mm + np.array([2.0, 0.0, -1.0]),
        s=true_warp.s * 1.02,
    )
    refined = refine_similarity_masked(moving, fixed, init)
    rot_err = float(rot.geodesic_deg(refined.R, true_warp.R))
    t_err = float(np.linalg.norm(refined.t_mm - true_warp.t_mm))
    s_err = abs(refined.s / true_warp.s - 1.0)

    dt = time.perf_counter() - t0
    ok = worst_lm <= 1e-9 and t_err < 0.5 and rot_err < 1.0 and s_err < 0.01 and dt < 120
    _verdict(
        "registration",
        ok,
        f"landmark max err {worst_lm:.2e}, refine {t_err:.3f} mm / "
        f"{rot_err:.3f} deg / {s_err * 100:.2f}% scale, {dt:.0f}s",
    )


# -- pose recovery ------------------------------------------------------------


def _flip_aware_deg(qa, qb) -> float:
    """Orientation gap modulo the in-plane flip ambiguity of a 2D slice."""
    pose = Pose6D(np.zeros(3), qa)
    cands = [qa, in_plane_flip(pose, "x").q, in_plane_flip(pose, "y").q]
    return min(float(rot.quaternion_angle_deg(q, qb)) for q in cands)


def test_pose_recovery_capture_range():
    vol = make_phantom(0)
    rng = np.random.default_rng(0)
    cases = []
    while len(cases) < 50:
        truth = Pose6D(rng.uniform(-0.35, 0.35, 3), rot.random_quaternion(rng))
        img = extract_slice(vol, truth)
        if (img.pixels > 0).mean() >= 0.3:
            cases.append((truth, img))
    mm = vol.scale_mm

    t0 = time.perf_counter()
    prng = np.random.default_rng(1)
    warm = 0
    for truth, img in cases:
        d = prng.normal(size=3)
        d *= prng.uniform(0.0, 0.05) / np.linalg.norm(d)
        ax = prng.normal(size=3)
        ax /= np.linalg.norm(ax)
        spin = rot.rotvec_to_quat(ax * np.deg2rad(prng.uniform(0.0, 5.0)))
        init = Pose6D(truth.t + d, rot.quat_multiply(spin, truth.q))
        pose, _ = recover_pose(img, vol, RecoveryConfig(n_starts=1, seed=11), init=init)
        if (
            rot.quaternion_angle_deg(pose.q, truth.q) <= 1.0
            and np.linalg.norm(pose.t - truth.t) * mm <= 1.0
        ):
            warm += 1

    cold = 0
    for truth, img in cases:
        pose, _ = recover_pose(img, vol, RecoveryConfig(n_starts=32, seed=5))
        if _flip_aware_deg(pose.q, truth.q) <= 5.0:
            cold += 1

    dt = time.perf_counter() - t0
    ok = warm >= 45 and cold >= 35 and dt < 600
    _verdict(
        "capture-range",
        ok,
        f"warm {warm}/50 (need 45), cold {cold}/50 (need 35), {dt:.0f}s",
    )


def test_loocv_pipeline(tmp_path):
    from planepose.cli import run
    from planepose.volume import save_volume

    t0 = time.perf_counter()
    paths = []
    for seed, ga in ((31, 21.0), (32, 25.0), (33, 29.0)):
        p = tmp_path / f"ph{seed}.json"
        save_volume(make_phantom(seed, ga_weeks=ga), p)
        paths.append(str(p))

    out = tmp_path / "loocv"
    rc = run(["loocv", "--volumes", *paths, "--out", str(out),
              "--seed", "4", "--n-slices", "3", "--starts", "32"])
    with open(out / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    folds = [r for r in rows if r["fold_id"] != "loocv_aggregate"]
    agg = [r for r in rows if r["fold_id"] == "loocv_aggregate"]

    fixed_point = bool(agg)
    if agg:
        a = agg[0]
        fixed_point = int(a["n"]) == sum(int(f["n"]) for f in folds)
        for col in (
            "trans_median_mm", "trans_mean_mm", "trans_sd_mm",
            "trans_min_mm", "trans_max_mm",
            "rot_median_deg", "rot_mean_deg", "rot_sd_deg",
            "rot_min_deg", "rot_max_deg",
        ):
            want = sum(float(f[col]) for f in folds) / len(folds)
            got = float(a[col])
            if abs(got - want) > 1e-9 * max(1.0, abs(want)):
                fixed_point = False

    dt = time.perf_counter() - t0
    ok = rc == 0 and len(folds) == 3 and fixed_point and dt < 900
    _verdict(
        "loocv-pipeline",
        ok,
        f"rc {rc}, folds {len(folds)}, aggregate fixed point {fixed_point}, {dt:.0f}s",
    )
