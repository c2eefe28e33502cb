import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from planepose import rotations as rot
from planepose.errors import EmptySet, FormatError, TooFewPoints
from planepose.evaluation import (
    ErrorRecord,
    FoldReport,
    StatSummary,
    distribution_stats,
    loocv_aggregate,
    parse_report_csv,
    plane_errors,
    pooled_aggregate,
    render_report_csv,
    render_report_markdown,
    render_sp_variance_table,
    sha256_bytes,
    sp_variance_by_method,
    sp_variance_report,
    write_report,
)
from planepose.pose import Pose6D


def const_fold(fold_id, t_med, r_med, n=10):
    return FoldReport(
        fold_id=fold_id, n=n,
        translation=StatSummary(t_med, t_med, 0.0, t_med, t_med),
        rotation=StatSummary(r_med, r_med, 0.0, r_med, r_med),
    )


def test_plane_errors_identical_poses_zero():
    p = Pose6D([0.1, -0.2, 0.05], rot.rotvec_to_quat([0.3, 0.1, -0.2]))
    rec = plane_errors(p, p, 100.0)
    assert rec.trans_mm == 0.0
    assert rec.rot_deg < 1e-9


def test_plane_errors_translation_scales_linearly():
    gt = Pose6D.identity()
    pred = Pose6D([0.1, 0.0, 0.0], [1, 0, 0, 0])
    assert plane_errors(gt, pred, 100.0).trans_mm == pytest.approx(10.0, abs=1e-12)
    assert plane_errors(gt, pred, 50.0).trans_mm == pytest.approx(5.0, abs=1e-12)


def test_plane_errors_matches_independent_recomputation():
    rng = np.random.default_rng(3)
    for _ in range(50):
        ga = Pose6D(rng.uniform(-1, 1, 3), rot.random_quaternion(rng))
        pb = Pose6D(rng.uniform(-1, 1, 3), rot.random_quaternion(rng))
        scale = rng.uniform(10, 200)
        rec = plane_errors(ga, pb, scale)
        want_t = np.linalg.norm(np.asarray(ga.t) - np.asarray(pb.t)) * scale
        ra = Rotation.from_matrix(ga.matrix())
        rb = Rotation.from_matrix(pb.matrix())
        want_r = np.degrees((ra.inv() * rb).magnitude())
        assert rec.trans_mm == pytest.approx(want_t, rel=1e-12)
        assert rec.rot_deg == pytest.approx(want_r, abs=1e-9)


def test_plane_errors_rejects_bad_scale():
    p = Pose6D.identity()
    with pytest.raises(FormatError):
        plane_errors(p, p, 0.0)


def test_error_record_rejects_negative():
    with pytest.raises(FormatError):
        ErrorRecord("r", -1.0, 2.0)


def test_distribution_stats_small_set():
    recs = [ErrorRecord(str(i), t, r) for i, (t, r) in enumerate([(1, 2), (2, 4), (3, 6)])]
    rep = distribution_stats(recs, fold_id="f")
    assert rep.n == 3
    assert rep.translation.median == 2.0
    assert rep.translation.mean == 2.0
    assert rep.translation.min == 1.0
    assert rep.translation.max == 3.0
    assert rep.rotation.median == 4.0


def test_distribution_stats_single_record_sd_zero():
    rep = distribution_stats([ErrorRecord("a", 5.0, 7.0)])
    assert rep.translation.sd == 0.0
    assert rep.rotation.sd == 0.0


def test_distribution_stats_even_median_is_central_pair_mean():
    recs = [ErrorRecord(str(i), t, 1.0) for i, t in enumerate([1.0, 2.0, 10.0, 20.0])]
    assert distribution_stats(recs).translation.median == 6.0


def test_distribution_stats_population_sd():
    vals = [1.0, 4.0, 7.0, 12.0]
    recs = [ErrorRecord(str(i), v, v) for i, v in enumerate(vals)]
    arr = np.array(vals)
    want = float(np.sqrt(np.mean((arr - arr.mean()) ** 2)))
    assert distribution_stats(recs).translation.sd == pytest.approx(want, rel=1e-14)


def test_distribution_stats_permutation_invariant():
    rng = np.random.default_rng(11)
    recs = [ErrorRecord(str(i), float(t), float(r))
            for i, (t, r) in enumerate(zip(rng.uniform(0, 10, 9), rng.uniform(0, 90, 9)))]
    a = distribution_stats(recs)
    b = distribution_stats(list(reversed(recs)))
    assert a.translation == b.translation
    assert a.rotation == b.rotation


def test_distribution_stats_empty_raises():
    with pytest.raises(EmptySet):
        distribution_stats([])


def test_loocv_aggregate_identity_fixed_point():
    fold = const_fold("f", 3.0, 5.0)
    agg = loocv_aggregate([fold] * 4)
    assert agg.translation == fold.translation
    assert agg.rotation == fold.rotation
    assert agg.n == 40


def test_loocv_aggregate_two_folds_mean_of_medians():
    agg = loocv_aggregate([const_fold("a", 2.0, 4.0), const_fold("b", 4.0, 8.0)])
    assert agg.translation.median == 3.0
    assert agg.rotation.median == 6.0


def test_loocv_aggregate_six_fold_medians():
    t_meds = [3.65, 3.76, 2.40, 3.66, 3.57, 4.12]
    r_meds = [5.15, 7.53, 5.33, 4.79, 7.23, 8.45]
    folds = [const_fold(f"fold{i}", t, r) for i, (t, r) in enumerate(zip(t_meds, r_meds))]
    agg = loocv_aggregate(folds)
    assert agg.translation.median == pytest.approx(sum(t_meds) / 6, rel=1e-14)
    assert agg.rotation.median == pytest.approx(sum(r_meds) / 6, rel=1e-14)
    assert abs(agg.translation.median - 3.53) <= 0.005


def test_loocv_aggregate_empty_raises():
    with pytest.raises(EmptySet):
        loocv_aggregate([])


def test_pooled_differs_from_fold_mean_on_unbalanced_folds():
    heavy = [ErrorRecord(str(i), 10.0, 10.0) for i in range(9)]
    light = [ErrorRecord("x", 1.0, 1.0)]
    fold_mean = loocv_aggregate([distribution_stats(heavy, "h"), distribution_stats(light, "l")])
    pooled = pooled_aggregate([heavy, light])
    assert fold_mean.translation.median == 5.5
    assert pooled.translation.median == 10.0
    assert pooled.n == fold_mean.n == 10


def test_sp_variance_identical_poses_zero():
    p = Pose6D([0.1, 0.2, 0.3], rot.rotvec_to_quat([0.2, -0.1, 0.4]))
    st = sp_variance_report([p, p, p], 120.0)
    assert st.rms_mm < 1e-9
    assert st.rot_rms_deg < 1e-6


def test_sp_variance_rz_pair_rms_ten_degrees():
    qa = rot.rotvec_to_quat([0, 0, np.deg2rad(10)])
    qb = rot.rotvec_to_quat([0, 0, np.deg2rad(-10)])
    st = sp_variance_report([Pose6D([0, 0, 0], qa), Pose6D([0, 0, 0], qb)], 100.0)
    assert st.rot_rms_deg == pytest.approx(10.0, abs=1e-6)


def test_sp_variance_requires_two_poses():
    with pytest.raises(TooFewPoints):
        sp_variance_report([Pose6D.identity()], 100.0)


def test_sp_variance_monte_carlo_matches_expectation():
    # 6 poses jittered by per-axis normal noise; the RMS about the mean
    # concentrates at sigma * sqrt(3 (n-1) / n).
    rng = np.random.default_rng(104)
    n, sig_t, sig_r, scale = 6, 0.02, 0.02, 100.0
    t_rms, r_rms = [], []
    for _ in range(100):
        poses = []
        base_q = rot.random_quaternion(rng)
        for _ in range(n):
            q = rot.quat_multiply(rot.rotvec_to_quat(rng.normal(0, sig_r, 3)), base_q)
            poses.append(Pose6D(rng.normal(0, sig_t, 3), q))
        st = sp_variance_report(poses, scale)
        t_rms.append(st.rms_mm)
        r_rms.append(st.rot_rms_deg)
    factor = np.sqrt(3 * (n - 1) / n)
    assert np.mean(t_rms) == pytest.approx(sig_t * factor * scale, rel=0.10)
    assert np.mean(r_rms) == pytest.approx(np.degrees(sig_r * factor), rel=0.10)


def test_sp_variance_by_method_preserves_order():
    p = Pose6D.identity()
    q = Pose6D([0.01, 0, 0], [1, 0, 0, 0])
    rows = sp_variance_by_method({"fid": [p, q], "auto": [p, p]}, 100.0)
    assert [m for m, _ in rows] == ["fid", "auto"]
    table = render_sp_variance_table(rows)
    assert "| fid |" in table and "| auto |" in table


def test_markdown_report_renders_paper_style_row():
    recs_t = [0.06, 2.40, 31.83]
    recs_r = [0.25, 5.33, 88.77]
    recs = [ErrorRecord(str(i), t, r) for i, (t, r) in enumerate(zip(recs_t, recs_r))]
    rep = distribution_stats(recs, fold_id="22w")
    md = render_report_markdown([rep])
    row = next(ln for ln in md.splitlines() if ln.startswith("| 22w"))
    cells = [c.strip() for c in row.strip("|").split("|")]
    assert cells[2] == "2.40"
    assert cells[6] == "5.33"
    assert cells[5] == "31.83"
    assert "population standard deviation" in md


def test_markdown_report_lists_input_hashes():
    rep = const_fold("f", 1.0, 2.0)
    md = render_report_markdown([rep], input_hashes={"preds.csv": "ab12", "gt.csv": "cd34"})
    assert "`preds.csv` sha256 `ab12`" in md
    assert "`gt.csv` sha256 `cd34`" in md


def test_csv_report_roundtrips_exactly():
    rng = np.random.default_rng(7)
    recs = [ErrorRecord(str(i), float(t), float(r))
            for i, (t, r) in enumerate(zip(rng.uniform(0, 30, 11), rng.uniform(0, 120, 11)))]
    folds = [distribution_stats(recs[:5], "a"), distribution_stats(recs[5:], "b")]
    agg = loocv_aggregate(folds)
    text = render_report_csv(folds, [agg])
    parsed = parse_report_csv(text)
    assert [p.fold_id for p in parsed] == ["a", "b", "aggregate_fold_mean"]
    for orig, back in zip(folds + [agg], parsed):
        assert back.translation == orig.translation
        assert back.rotation == orig.rotation
        assert back.n == orig.n
    assert render_report_csv(parsed[:2], parsed[2:]) == text


def test_parse_report_rejects_garbage():
    with pytest.raises(FormatError):
        parse_report_csv("nope\n1,2,3\n")


def test_write_report_files(tmp_path):
    rep = const_fold("f0", 2.5, 4.5)
    csv_path, md_path = write_report(
        tmp_path / "out", [rep], [loocv_aggregate([rep])],
        input_hashes={"preds.csv": sha256_bytes(b"data")},
    )
    assert csv_path.exists() and md_path.exists()
    parsed = parse_report_csv(csv_path.read_text())
    assert parsed[0].translation.median == 2.5
    assert sha256_bytes(b"data") in md_path.read_text()


def test_stat_summary_ordering_enforced():
    with pytest.raises(FormatError):
        StatSummary(median=5.0, mean=3.0, sd=1.0, min=6.0, max=7.0)
