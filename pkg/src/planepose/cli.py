"""Command line for the plane-pose toolkit.

Subcommands:
  phantom         build a synthetic head volume
  slice           render one plane of a volume to a PGM image
  genplanes       generate a posed slice dataset with its manifest
  register        landmark + masked similarity registration
  recover         recover the pose of a slice image (single or batch)
  evaluate        score predicted poses against a ground-truth manifest
  annotate-serve  run the annotation HTTP service
  loocv           leave-one-volume-out recovery pipeline

Exit codes: 0 success, 1 domain or I/O failure, 2 usage error.

Every subcommand accepts ``--config FILE`` (TOML).  Keys use the long
flag names with underscores; values given on the command line override
the file, and keys that do not correspond to a flag of the subcommand
are rejected.  Effective seeds are logged to stderr and recorded in the
outputs that have a place for them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import rotations as rot
from .errors import EmptySet, FormatError, PlanePoseError
from .evaluation import (
    distribution_stats,
    loocv_aggregate,
    plane_errors,
    sha256_file,
    write_report,
)
from .phantom import make_phantom
from .pose import Pose6D
from .recovery import (
    RecoveryConfig,
    read_predictions,
    recover_pose,
    recover_pose_batch,
    write_predictions,
)
from .registration import (
    SimilarityTransform,
    fit_similarity_landmarks,
    landmark_rms,
    masked_msd,
    read_landmarks,
    refine_similarity_masked,
    write_registration_report,
)
from .sampling import SamplingSpec, generate_dataset, read_manifest
from .slicing import extract_slice, read_pgm, write_pgm
from .volume import load_volume, save_volume

log = logging.getLogger("planepose")

_REQUIRED = object()

# one entry per flag: (names, argparse kwargs). Defaults live here so the
# config file can fill anything the command line leaves out.
_SPECS = {
    "phantom": [
        (("--seed",), dict(type=int, default=0, help="phantom construction seed")),
        (("--dims",), dict(type=int, nargs=3, default=[80, 72, 72], metavar=("NX", "NY", "NZ"))),
        (("--spacing-mm",), dict(type=float, default=1.0)),
        (("--ga-weeks",), dict(type=float, default=23.0)),
        (("--out",), dict(required=True, help="volume header path (.json)")),
    ],
    "slice": [
        (("--volume",), dict(required=True, help="volume header path")),
        (("--pose",), dict(default=None, help="pose JSON file (default: identity)")),
        (("--out",), dict(required=True, help="output PGM path")),
    ],
    "genplanes": [
        (("--volume",), dict(required=True)),
        (("--out",), dict(required=True, help="dataset directory")),
        (("--n-random",), dict(type=int, default=20699)),
        (("--n-near",), dict(type=int, default=1330)),
        (("--seed",), dict(type=int, default=0)),
        (("--sp-pose",), dict(default=None, help="standard-plane pose JSON file")),
        (("--augment-strength",), dict(type=float, default=0.0)),
    ],
    "register": [
        (("--moving",), dict(required=True)),
        (("--fixed",), dict(required=True)),
        (("--landmarks-moving",), dict(required=True)),
        (("--landmarks-fixed",), dict(required=True)),
        (("--mask",), dict(action="store_true", default=False,
                           help="also run masked intensity refinement")),
        (("--out",), dict(required=True, help="transform JSON path")),
        (("--report",), dict(default=None, help="per-method RMS CSV path")),
    ],
    "recover": [
        (("--volume",), dict(required=True)),
        (("--image",), dict(default=None, help="query PGM (single-image mode)")),
        (("--manifest",), dict(default=None, help="manifest CSV (batch mode)")),
        (("--init",), dict(default=None, help="initial pose JSON (single-image mode)")),
        (("--starts",), dict(type=int, default=32)),
        (("--metric",), dict(choices=["ncc", "msd"], default="ncc")),
        (("--mode",), dict(choices=["full", "local"], default="full")),
        (("--seed",), dict(type=int, default=0)),
        (("--out",), dict(required=True, help="pose JSON or predictions CSV path")),
    ],
    "evaluate": [
        (("--gt",), dict(required=True, help="ground-truth manifest CSV")),
        (("--pred",), dict(required=True, help="predictions CSV")),
        (("--scale-mm",), dict(type=float, required=True,
                               help="millimetres per normalized unit")),
        (("--out",), dict(required=True, help="report directory")),
    ],
    "annotate-serve": [
        (("--addr",), dict(default=None, help="host:port (default $PLANEPOSE_ADDR or 127.0.0.1:8711)")),
        (("--volume-dir",), dict(required=True, help="directory of volume headers")),
        (("--data",), dict(default=None, help="annotation store dir (default $PLANEPOSE_DATA)")),
        (("--static",), dict(default=None, help="static UI bundle dir")),
    ],
    "loocv": [
        (("--volumes",), dict(nargs="+", required=True, help="volume header paths")),
        (("--out",), dict(required=True, help="report directory")),
        (("--seed",), dict(type=int, default=0)),
        (("--n-slices",), dict(type=int, default=5, help="test slices per fold")),
        (("--starts",), dict(type=int, default=32)),
    ],
}


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="planepose",
        description="synthesize, recover, and score oriented slice poses in 3D volumes",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools")
    subs = parser.add_subparsers(dest="command", required=True)
    defaults: dict[str, dict] = {}
    for name, spec in _SPECS.items():
        sub = subs.add_parser(name)
        sub.add_argument("--config", default=None, help="TOML config file")
        defaults[name] = {}
        for flags, kw in spec:
            kw = dict(kw)
            dest = flags[0].lstrip("-").replace("-", "_")
            defaults[name][dest] = _REQUIRED if kw.pop("required", False) else kw.get("default")
            kw["default"] = argparse.SUPPRESS
            sub.add_argument(*flags, **kw)
    return parser, defaults


def _load_toml(path):
    import tomli

    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise FormatError(f"bad TOML in {path}: {exc}") from exc


def _merge_options(parser, command, ns, defaults):
    merged = dict(defaults[command])
    config = getattr(ns, "config", None)
    if config:
        for key, value in _load_toml(config).items():
            key = key.replace("-", "_")
            if key not in merged:
                parser.error(f"unknown config key {key!r} for {command}")
            merged[key] = value
    explicit = {k: v for k, v in vars(ns).items()
                if k not in ("command", "config", "threads")}
    merged.update(explicit)
    for key, value in merged.items():
        if value is _REQUIRED:
            parser.error(f"{command}: --{key.replace('_', '-')} is required")
    return argparse.Namespace(**merged)


def _read_pose_json(path) -> Pose6D:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read pose file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad JSON in {path}: {exc}") from exc
    return Pose6D.from_json_dict(obj.get("pose", obj))


def cmd_phantom(o) -> int:
    log.info("phantom seed=%d dims=%s", o.seed, tuple(o.dims))
    volume = make_phantom(o.seed, dims=tuple(o.dims),
                          spacing_mm=o.spacing_mm, ga_weeks=o.ga_weeks)
    save_volume(volume, o.out)
    log.info("wrote %s (%s)", o.out, volume.volume_id)
    return 0


def cmd_slice(o) -> int:
    volume = load_volume(o.volume)
    pose = _read_pose_json(o.pose) if o.pose else Pose6D.identity()
    write_pgm(extract_slice(volume, pose).pixels, o.out)
    log.info("wrote %s", o.out)
    return 0


def cmd_genplanes(o) -> int:
    volume = load_volume(o.volume)
    spec = SamplingSpec(
        n_random=o.n_random,
        n_near_sp=o.n_near,
        seed=o.seed,
        sp_pose=_read_pose_json(o.sp_pose) if o.sp_pose else Pose6D.identity(),
        augment_strength=o.augment_strength,
    )
    log.info("genplanes seed=%d n_random=%d n_near=%d", o.seed, o.n_random, o.n_near)
    rows = generate_dataset(volume, spec, o.out)
    log.info("wrote %d rows under %s", len(rows), o.out)
    return 0


def cmd_register(o) -> int:
    moving = load_volume(o.moving)
    fixed = load_volume(o.fixed)
    lm_moving = read_landmarks(o.landmarks_moving)
    lm_fixed = read_landmarks(o.landmarks_fixed)
    entries = {"initial": landmark_rms(SimilarityTransform.identity(), lm_moving, lm_fixed)}
    fit = fit_similarity_landmarks(lm_moving, lm_fixed)
    entries["automatic"] = landmark_rms(fit, lm_moving, lm_fixed)
    best = fit
    if o.mask:
        refined = refine_similarity_masked(moving, fixed, fit)
        entries["fid_mask"] = landmark_rms(refined, lm_moving, lm_fixed)
        from_identity = refine_similarity_masked(moving, fixed, SimilarityTransform.identity())
        entries["mask"] = landmark_rms(from_identity, lm_moving, lm_fixed)
        best = min((refined, from_identity), key=lambda t: masked_msd(moving, fixed, t))
    Path(o.out).write_text(best.to_json() + "\n")
    if o.report:
        write_registration_report({f"{moving.volume_id}->{fixed.volume_id}": entries}, o.report)
    log.info("landmark RMS mm: %s", {k: round(v, 3) for k, v in entries.items()})
    return 0


def cmd_recover(o) -> int:
    if (o.image is None) == (o.manifest is None):
        raise FormatError("recover needs exactly one of --image or --manifest")
    volume = load_volume(o.volume)
    cfg = RecoveryConfig(n_starts=o.starts, metric=o.metric,
                         rot_search_mode=o.mode, seed=o.seed)
    log.info("recover seed=%d starts=%d metric=%s mode=%s",
             o.seed, o.starts, o.metric, o.mode)
    if o.manifest:
        rows = read_manifest(o.manifest)
        results = recover_pose_batch(rows, volume, cfg,
                                     base_dir=Path(o.manifest).parent)
        write_predictions(results, o.out)
        failed = sum(1 for r in results if r.error is not None)
        log.info("wrote %d predictions (%d failed) to %s", len(results), failed, o.out)
        return 0
    pixels = read_pgm(o.image)
    init = _read_pose_json(o.init) if o.init else None
    pose, score = recover_pose(pixels, volume, cfg, init=init)
    payload = {
        "pose": pose.to_json_dict(),
        "score": score,
        "metric": o.metric,
        "starts": o.starts,
        "seed": o.seed,
    }
    Path(o.out).write_text(json.dumps(payload, indent=2) + "\n")
    log.info("score %.4f -> %s", score, o.out)
    return 0


def cmd_evaluate(o) -> int:
    rows = read_manifest(o.gt)
    preds = {p.path: p for p in read_predictions(o.pred)}
    records = []
    skipped = 0
    for row in rows:
        pred = preds.get(row.path)
        if pred is None or pred.pose is None:
            skipped += 1
            continue
        records.append(plane_errors(row.pose, pred.pose, o.scale_mm,
                                    row_id=row.path, category=row.category))
    if not records:
        raise EmptySet("no prediction matched a manifest row")
    if skipped:
        log.warning("%d rows had no usable prediction", skipped)
    fold = distribution_stats(records, fold_id="all")
    hashes = {"gt": sha256_file(o.gt), "pred": sha256_file(o.pred)}
    csv_path, md_path = write_report(o.out, [fold], input_hashes=hashes)
    log.info("wrote %s and %s", csv_path, md_path)
    return 0


def _parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise FormatError(f"addr must look like host:port, got {addr!r}")
    return host, int(port)


def cmd_annotate_serve(o) -> int:
    import os

    import uvicorn

    from .service import create_app

    addr = o.addr or os.environ.get("PLANEPOSE_ADDR", "127.0.0.1:8711")
    host, port = _parse_addr(addr)
    static = o.static
    if static is None and Path("frontend/dist").is_dir():
        static = "frontend/dist"
    app = create_app(o.volume_dir, data_dir=o.data, static_dir=static)
    log.info("serving on %s:%d", host, port)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def cmd_loocv(o) -> int:
    volumes = [load_volume(p) for p in o.volumes]
    if len(volumes) < 2:
        raise FormatError("loocv needs at least 2 volumes")
    log.info("loocv seed=%d folds=%d slices/fold=%d", o.seed, len(volumes), o.n_slices)
    folds = []
    for i, held in enumerate(volumes):
        rng = np.random.default_rng([o.seed, i])
        records = []
        for k in range(o.n_slices):
            while True:
                truth = Pose6D(rng.uniform(-0.35, 0.35, 3), rot.random_quaternion(rng))
                img = extract_slice(held, truth)
                if (img.pixels > 0).mean() >= 0.3:
                    break
            best_pose, best_score = None, -np.inf
            for j, ref in enumerate(volumes):
                if ref is held:
                    continue
                cfg = RecoveryConfig(n_starts=o.starts,
                                     seed=int(np.random.SeedSequence([o.seed, i, k, j]).generate_state(1)[0]))
                pose, score = recover_pose(img.pixels, ref, cfg)
                if score > best_score:
                    best_pose, best_score = pose, score
            records.append(plane_errors(truth, best_pose, held.scale_mm,
                                        row_id=f"{held.volume_id}/{k}", category="loocv"))
            log.info("fold %s slice %d best score %.4f", held.volume_id, k, best_score)
        folds.append(distribution_stats(records, fold_id=held.volume_id))
    aggregate = loocv_aggregate(folds, fold_id="loocv_aggregate")
    csv_path, md_path = write_report(o.out, folds, aggregates=[aggregate])
    log.info("wrote %s and %s", csv_path, md_path)
    return 0


_COMMANDS = {
    "phantom": cmd_phantom,
    "slice": cmd_slice,
    "genplanes": cmd_genplanes,
    "register": cmd_register,
    "recover": cmd_recover,
    "evaluate": cmd_evaluate,
    "annotate-serve": cmd_annotate_serve,
    "loocv": cmd_loocv,
}


def run(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser, defaults = _build_parser()
    ns = parser.parse_args(argv)
    try:
        options = _merge_options(parser, ns.command, ns, defaults)
        if ns.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=ns.threads):
                return _COMMANDS[ns.command](options)
        return _COMMANDS[ns.command](options)
    except PlanePoseError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1


def main() -> None:
    sys.exit(run())
