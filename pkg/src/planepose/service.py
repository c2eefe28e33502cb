"""HTTP annotation service: sessions over loaded volumes, live slice
rendering, plane nudging, and durable standard-plane annotations.

State model: sessions are in-memory and lost on restart; annotations are
the only durable data, kept as an append-only JSON-lines log plus one
snapshot image per annotation.  A partial final log line (crash during
append) is ignored on reload; corruption anywhere else raises
StorageError.

Rotation nudges act about the plane's local axes, matching what an
operator watching the slice perceives; translation nudges move along the
volume axes.

Endpoints:
  POST /sessions {volume_id}                  -> 201 session state
  GET  /sessions/{sid}                        -> session state
  POST /sessions/{sid}/nudge {axis,dir,mult}  -> new pose
  POST /sessions/{sid}/undo                   -> restored pose
  GET  /sessions/{sid}/slice?format=png|pgm   -> image bytes, ETag = pose hash
  POST /sessions/{sid}/annotations {label,annotator} -> 201 annotation
  GET  /annotations?volume=ID                 -> stored annotations
  GET  /volumes                               -> registered volumes

Configuration comes from explicit arguments, falling back to the
PLANEPOSE_DATA environment variable for the data directory (the
annotate-serve CLI command reads PLANEPOSE_ADDR for the listen address).
"""

from __future__ import annotations

import io
import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import rotations as rot
from .errors import PlanePoseError, SessionGone, StorageError, UnknownVolume
from .pose import Pose6D
from .slicing import extract_slice, write_pgm
from .volume import Volume, load_volume

DEFAULT_T_STEP = 0.01
DEFAULT_ROT_STEP_DEG = 1.0
UNDO_LIMIT = 256

TRANSLATION_AXES = {"tx": 0, "ty": 1, "tz": 2}
ROTATION_AXES = {"rx": 0, "ry": 1, "rz": 2}


@dataclass
class Session:
    id: str
    volume_id: str
    pose: Pose6D
    t_step: float = DEFAULT_T_STEP
    rot_step_deg: float = DEFAULT_ROT_STEP_DEG
    undo: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def push_undo(self):
        self.undo.append(self.pose)
        del self.undo[:-UNDO_LIMIT]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "volume_id": self.volume_id,
            "pose": self.pose.to_json_dict(),
            "t_step": self.t_step,
            "rot_step_deg": self.rot_step_deg,
            "undo_depth": len(self.undo),
        }


@dataclass(frozen=True)
class Annotation:
    id: str
    volume_id: str
    label: str
    pose: Pose6D
    annotator: str
    timestamp: str
    snapshot: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "volume_id": self.volume_id,
            "label": self.label,
            "pose": self.pose.to_json_dict(),
            "annotator": self.annotator,
            "timestamp": self.timestamp,
            "snapshot": self.snapshot,
        }

    @staticmethod
    def from_dict(obj: dict) -> "Annotation":
        return Annotation(
            id=obj["id"],
            volume_id=obj["volume_id"],
            label=obj["label"],
            pose=Pose6D.from_json_dict(obj["pose"]),
            annotator=obj["annotator"],
            timestamp=obj["timestamp"],
            snapshot=obj["snapshot"],
        )


class AnnotationStore:
    """Append-only JSON-lines log with per-annotation image snapshots."""

    def __init__(self, data_dir):
        self.dir = Path(data_dir)
        self.log_path = self.dir / "annotations.jsonl"
        self.snap_dir = self.dir / "snapshots"
        self._lock = threading.Lock()
        self._records: list[Annotation] = []
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            self.snap_dir.mkdir(exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create data directory {self.dir}: {exc}") from exc
        self._load()

    def _load(self):
        if not self.log_path.exists():
            return
        try:
            lines = self.log_path.read_text().split("\n")
        except OSError as exc:
            raise StorageError(f"cannot read {self.log_path}: {exc}") from exc
        while lines and lines[-1] == "":
            lines.pop()
        for i, line in enumerate(lines):
            try:
                self._records.append(Annotation.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, PlanePoseError) as exc:
                if i == len(lines) - 1:
                    # torn final append from a crash; drop it
                    break
                raise StorageError(
                    f"{self.log_path} line {i + 1} is corrupt: {exc}"
                ) from exc

    def append(self, volume: Volume, volume_id: str, pose: Pose6D,
               label: str, annotator: str) -> Annotation:
        ann_id = uuid.uuid4().hex[:12]
        snap_rel = f"snapshots/{ann_id}.pgm"
        record = Annotation(
            id=ann_id,
            volume_id=volume_id,
            label=label,
            pose=pose,
            annotator=annotator,
            timestamp=datetime.now(timezone.utc).isoformat(),
            snapshot=snap_rel,
        )
        img = extract_slice(volume, pose)
        with self._lock:
            try:
                write_pgm(img.pixels, self.dir / snap_rel)
                with open(self.log_path, "a") as fh:
                    fh.write(json.dumps(record.to_dict()) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"cannot persist annotation: {exc}") from exc
            self._records.append(record)
        return record

    def list(self, volume_id: str | None = None) -> list[Annotation]:
        with self._lock:
            records = list(self._records)
        if volume_id is not None:
            records = [r for r in records if r.volume_id == volume_id]
        return sorted(records, key=lambda r: (r.timestamp, r.id))


def _load_volumes(volume_dir) -> dict[str, Volume]:
    volumes = {}
    vdir = Path(volume_dir)
    for header in sorted(vdir.glob("*.json")):
        volumes[header.stem] = load_volume(header)
    return volumes


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _nudged(pose: Pose6D, axis: str, direction: int, mult: float,
            t_step: float, rot_step_deg: float) -> Pose6D:
    if axis in TRANSLATION_AXES:
        t = pose.t.copy()
        t[TRANSLATION_AXES[axis]] += direction * mult * t_step
        return Pose6D(t, pose.q)
    rv = np.zeros(3)
    rv[ROTATION_AXES[axis]] = np.deg2rad(direction * mult * rot_step_deg)
    # right-multiply: rotation about the plane's own axis, not the volume's
    return Pose6D(pose.t, rot.quat_multiply(pose.q, rot.rotvec_to_quat(rv)))


def create_app(volume_dir, data_dir=None, static_dir=None) -> FastAPI:
    """Build the service around a volume directory and a data directory.

    ``volume_dir`` holds volume JSON headers (id = file stem).  ``data_dir``
    defaults to the PLANEPOSE_DATA environment variable.  ``static_dir``,
    when given and existing, is served at /ui (the browser client bundle).
    """
    if data_dir is None:
        data_dir = os.environ.get("PLANEPOSE_DATA", "planepose-data")
    volumes = _load_volumes(volume_dir)
    store = AnnotationStore(data_dir)
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()

    app = FastAPI(title="planepose annotation service")

    def get_session(sid: str) -> Session:
        with sessions_lock:
            if sid not in sessions:
                raise SessionGone(f"no session {sid}")
            return sessions[sid]

    @app.exception_handler(PlanePoseError)
    def planepose_error(_req: Request, exc: PlanePoseError):
        status = 404 if isinstance(exc, (UnknownVolume, SessionGone)) else 500
        return _error(status, str(exc))

    @app.get("/volumes")
    def list_volumes():
        return {
            "volumes": [
                {
                    "id": vid,
                    "dims": list(v.dims),
                    "spacing_mm": float(v.spacing_mm),
                }
                for vid, v in sorted(volumes.items())
            ]
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        vid = body.get("volume_id")
        if not isinstance(vid, str) or not vid:
            return _error(400, "volume_id is required")
        if vid not in volumes:
            raise UnknownVolume(f"no volume {vid!r} registered")
        session = Session(id=uuid.uuid4().hex[:12], volume_id=vid, pose=Pose6D.identity())
        with sessions_lock:
            sessions[session.id] = session
        return session.to_dict()

    @app.get("/sessions/{sid}")
    def show_session(sid: str):
        return get_session(sid).to_dict()

    @app.post("/sessions/{sid}/nudge")
    def nudge(sid: str, body: dict):
        axis = body.get("axis")
        direction = body.get("dir")
        mult = body.get("mult", 1.0)
        if axis not in TRANSLATION_AXES and axis not in ROTATION_AXES:
            return _error(400, f"axis must be one of tx,ty,tz,rx,ry,rz, got {axis!r}")
        if direction not in (1, -1):
            return _error(400, f"dir must be 1 or -1, got {direction!r}")
        if not isinstance(mult, (int, float)) or mult < 0:
            return _error(400, f"mult must be a non-negative number, got {mult!r}")
        session = get_session(sid)
        with session.lock:
            session.push_undo()
            session.pose = _nudged(
                session.pose, axis, direction, float(mult),
                session.t_step, session.rot_step_deg,
            )
            return {"pose": session.pose.to_json_dict(), "undo_depth": len(session.undo)}

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str):
        session = get_session(sid)
        with session.lock:
            if not session.undo:
                return _error(409, "undo stack is empty")
            session.pose = session.undo.pop()
            return {"pose": session.pose.to_json_dict(), "undo_depth": len(session.undo)}

    @app.get("/sessions/{sid}/slice")
    def render(sid: str, request: Request, format: str = "png"):
        if format not in ("png", "pgm"):
            return _error(400, f"format must be png or pgm, got {format!r}")
        session = get_session(sid)
        with session.lock:
            pose = session.pose
        etag = f'"{pose.pose_hash()}"'
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers={"ETag": etag})
        img = extract_slice(volumes[session.volume_id], pose)
        if format == "pgm":
            payload = b"P5\n128 128\n255\n" + img.pixels.tobytes()
            media = "image/x-portable-graymap"
        else:
            from PIL import Image

            buf = io.BytesIO()
            Image.fromarray(img.pixels, mode="L").save(buf, format="PNG")
            payload = buf.getvalue()
            media = "image/png"
        return Response(content=payload, media_type=media, headers={"ETag": etag})

    @app.post("/sessions/{sid}/annotations", status_code=201)
    def save_annotation(sid: str, body: dict):
        label = body.get("label")
        annotator = body.get("annotator", "")
        if not isinstance(label, str) or not label.strip():
            return _error(400, "label must be a nonempty string")
        if not isinstance(annotator, str):
            return _error(400, "annotator must be a string")
        session = get_session(sid)
        with session.lock:
            pose = session.pose
        record = store.append(
            volumes[session.volume_id], session.volume_id, pose, label.strip(), annotator
        )
        return record.to_dict()

    @app.get("/annotations")
    def list_annotations(volume: str | None = None):
        return {"annotations": [a.to_dict() for a in store.list(volume)]}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
