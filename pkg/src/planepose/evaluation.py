"""Error metrics, fold statistics, and cross-validation reports.

Per-plane errors compare a predicted pose against ground truth: translation
as Euclidean distance scaled to millimetres, rotation as geodesic degrees.
Per-fold summaries and the leave-one-out aggregate reduce collections of
those errors to the usual five-number statistics.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptySet, FormatError, TooFewPoints
from .pose import Pose6D, PoseSetStats, pose_set_stats
from .rotations import geodesic_deg


@dataclass(frozen=True)
class ErrorRecord:
    """Errors of one predicted plane against its ground truth."""

    row_id: str
    trans_mm: float
    rot_deg: float
    category: str = ""

    def __post_init__(self):
        if self.trans_mm < 0 or self.rot_deg < 0:
            raise FormatError("error values must be nonnegative")


@dataclass(frozen=True)
class StatSummary:
    """Five-number summary of one error column."""

    median: float
    mean: float
    sd: float
    min: float
    max: float

    def __post_init__(self):
        if not (self.min <= self.median <= self.max):
            raise FormatError("summary must satisfy min <= median <= max")


@dataclass(frozen=True)
class FoldReport:
    fold_id: str
    n: int
    translation: StatSummary
    rotation: StatSummary

    def __post_init__(self):
        if self.n <= 0:
            raise FormatError("fold must contain at least one record")


def plane_errors(gt, pred, scale_mm_per_norm, row_id="", category=""):
    """Compare two plane poses.

    Translation error is the Euclidean distance between the plane origins in
    normalized units, converted to millimetres by ``scale_mm_per_norm``.
    Rotation error is the geodesic distance between orientations in degrees.
    """
    if scale_mm_per_norm <= 0:
        raise FormatError("scale_mm_per_norm must be positive")
    trans = float(np.linalg.norm(gt.t - pred.t)) * float(scale_mm_per_norm)
    rotd = float(geodesic_deg(gt.matrix(), pred.matrix()))
    return ErrorRecord(row_id=row_id, trans_mm=trans, rot_deg=rotd, category=category)


def _summary(values):
    # sorted so the summary is exactly permutation invariant
    arr = np.sort(np.asarray(values, dtype=float))
    return StatSummary(
        median=float(np.median(arr)),
        mean=float(arr.mean()),
        sd=float(arr.std()),
        min=float(arr.min()),
        max=float(arr.max()),
    )


def distribution_stats(records, fold_id=""):
    """Summarize a fold of error records.

    The median of an even-sized fold is the mean of the central pair and the
    standard deviation is the population SD (ddof 0).
    """
    records = list(records)
    if not records:
        raise EmptySet("no error records")
    return FoldReport(
        fold_id=fold_id,
        n=len(records),
        translation=_summary([r.trans_mm for r in records]),
        rotation=_summary([r.rot_deg for r in records]),
    )


def _mean_summary(summaries):
    return StatSummary(
        median=float(np.mean([s.median for s in summaries])),
        mean=float(np.mean([s.mean for s in summaries])),
        sd=float(np.mean([s.sd for s in summaries])),
        min=float(np.mean([s.min for s in summaries])),
        max=float(np.mean([s.max for s in summaries])),
    )


def loocv_aggregate(folds, fold_id="aggregate_fold_mean"):
    """Average per-fold statistics into one aggregate row.

    Every statistic is the unweighted mean of the corresponding per-fold
    statistics, so k identical folds aggregate to that fold unchanged. The
    aggregate n is the total record count.
    """
    folds = list(folds)
    if not folds:
        raise EmptySet("no folds")
    return FoldReport(
        fold_id=fold_id,
        n=sum(f.n for f in folds),
        translation=_mean_summary([f.translation for f in folds]),
        rotation=_mean_summary([f.rotation for f in folds]),
    )


def pooled_aggregate(record_lists, fold_id="aggregate_pooled"):
    """Aggregate by pooling all records and summarizing once."""
    pooled = [r for records in record_lists for r in records]
    if not pooled:
        raise EmptySet("no records to pool")
    return distribution_stats(pooled, fold_id=fold_id)


def sp_variance_report(sp_poses: Sequence[Pose6D], scale_mm_per_norm) -> PoseSetStats:
    """Spread of a set of annotated standard-plane poses.

    Translation spread is reported in millimetres about the centroid and
    rotation spread in degrees about the chordal mean orientation.
    """
    sp_poses = list(sp_poses)
    if len(sp_poses) < 2:
        raise TooFewPoints("variance needs at least 2 poses")
    return pose_set_stats(sp_poses, scale_mm=scale_mm_per_norm)


def sp_variance_by_method(groups: Mapping[str, Sequence[Pose6D]], scale_mm_per_norm):
    """Per-registration-method variance rows, in the given group order."""
    return [(method, sp_variance_report(poses, scale_mm_per_norm))
            for method, poses in groups.items()]


def render_sp_variance_table(rows) -> str:
    lines = [
        "| Method | n | Translation RMS [mm] | Rotation RMS [deg] |",
        "| --- | --- | --- | --- |",
    ]
    for method, stats in rows:
        lines.append(f"| {method} | {stats.n} | {stats.rms_mm:.3f} | {stats.rot_rms_deg:.3f} |")
    return "\n".join(lines) + "\n"


def _fmt_cell(value):
    return f"{value:.2f}"


def _md_row(report: FoldReport) -> str:
    t, r = report.translation, report.rotation
    cells = [
        report.fold_id, str(report.n),
        _fmt_cell(t.median), f"{_fmt_cell(t.mean)}±{_fmt_cell(t.sd)}",
        _fmt_cell(t.min), _fmt_cell(t.max),
        _fmt_cell(r.median), f"{_fmt_cell(r.mean)}±{_fmt_cell(r.sd)}",
        _fmt_cell(r.min), _fmt_cell(r.max),
    ]
    return "| " + " | ".join(cells) + " |"


def render_report_markdown(folds, aggregates=(), input_hashes=None) -> str:
    """Markdown report: one row per fold plus labeled aggregate rows.

    Columns follow the Median / Mean±SD / Min / Max layout for translation
    then rotation. Cell values are rounded to two decimals; the CSV report
    keeps full precision.
    """
    lines = [
        "# Plane pose error report",
        "",
        "| Fold | n | T median [mm] | T mean±SD | T min | T max | R median [deg] | R mean±SD | R min | R max |",
        "| --- | --- | --- | --- | --- | --- | --- | --- | --- | --- |",
    ]
    for report in folds:
        lines.append(_md_row(report))
    for report in aggregates:
        lines.append(_md_row(report))
    lines.append("")
    lines.append("SD is the population standard deviation (ddof 0).")
    if input_hashes:
        lines.append("")
        lines.append("## Inputs")
        lines.append("")
        for name in sorted(input_hashes):
            lines.append(f"- `{name}` sha256 `{input_hashes[name]}`")
    return "\n".join(lines) + "\n"


REPORT_CSV_HEADER = (
    "fold_id", "n",
    "trans_median_mm", "trans_mean_mm", "trans_sd_mm", "trans_min_mm", "trans_max_mm",
    "rot_median_deg", "rot_mean_deg", "rot_sd_deg", "rot_min_deg", "rot_max_deg",
)


def render_report_csv(folds, aggregates=()) -> str:
    lines = [",".join(REPORT_CSV_HEADER)]
    for report in list(folds) + list(aggregates):
        t, r = report.translation, report.rotation
        cells = [report.fold_id, str(report.n)]
        cells += [repr(v) for v in (t.median, t.mean, t.sd, t.min, t.max,
                                    r.median, r.mean, r.sd, r.min, r.max)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str):
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or tuple(lines[0].split(",")) != REPORT_CSV_HEADER:
        raise FormatError("unrecognized report header")
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(REPORT_CSV_HEADER):
            raise FormatError(f"expected {len(REPORT_CSV_HEADER)} cells, got {len(cells)}")
        vals = [float(c) for c in cells[2:]]
        out.append(FoldReport(
            fold_id=cells[0], n=int(cells[1]),
            translation=StatSummary(*vals[0:5]),
            rotation=StatSummary(*vals[5:10]),
        ))
    return out


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def write_report(out_dir, folds, aggregates=(), input_hashes=None):
    """Write report.csv (full precision) and report.md (rounded display)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    md_path = out / "report.md"
    csv_path.write_text(render_report_csv(folds, aggregates), encoding="ascii")
    md_path.write_text(
        render_report_markdown(folds, aggregates, input_hashes=input_hashes),
        encoding="utf-8",
    )
    return csv_path, md_path
