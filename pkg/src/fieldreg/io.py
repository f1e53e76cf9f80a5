"""Versioned text file formats.

Detection and pose files are JSON Lines: a header object on the first line,
then one object per frame with strictly increasing frame indices.

Detection file::

    {"format": "fieldreg.detections", "version": 1, "width": 1920, "height": 1080,
     "fps": 25.0, "template": "basketball"}
    {"frame": 0, "timestamp": 0.0,
     "detections": [{"kind": "semantic", "id": 3, "u": 812.5, "v": 430.1, "confidence": 1.0},
                    {"kind": "player", "u": 1001.2, "v": 702.9, "confidence": 1.0}],
     "players_world": [[10.2, 4.1], ...]}

Pose file::

    {"format": "fieldreg.poses", "version": 1, "width": 1920, "height": 1080, "template": "basketball"}
    {"frame": 0, "status": "registered", "reinitialized": false,
     "f": 1500.0, "R": [9 values, row-major], "t": [3 values]}

``f``, ``R`` and ``t`` are null for unregistered frames. Simulation and
pipeline configs are single JSON documents with a ``format``/``version``
stamp; every other key is optional and defaults to the library defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .association import PLAYER_KIND, SEMANTIC, Detection
from .errors import FileFormatError, InputError
from .geometry.homography import RansacConfig
from .geometry.types import Intrinsics, Pose
from .simulator import NoiseModel, PlayerConfig, SimulationConfig, TrajectoryConfig
from .temporal import REGISTERED, UNREGISTERED, FilterConfig, PipelineConfig

VERSION = 1
DETECTIONS_FORMAT = "fieldreg.detections"
POSES_FORMAT = "fieldreg.poses"
SIMULATION_FORMAT = "fieldreg.simulation"
PIPELINE_FORMAT = "fieldreg.pipeline"
STATUSES = ("registered", "coasting", "unregistered")


@dataclass(frozen=True)
class FrameDetections:
    frame: int
    timestamp: float
    detections: tuple[Detection, ...]
    players_world: np.ndarray | None = None


@dataclass(frozen=True)
class DetectionFile:
    width: int
    height: int
    fps: float
    template: str
    frames: tuple[FrameDetections, ...]


@dataclass(frozen=True)
class PoseRecord:
    frame: int
    status: str
    reinitialized: bool = False
    intrinsics: Intrinsics | None = None
    pose: Pose | None = None


@dataclass(frozen=True)
class PoseFile:
    width: int
    height: int
    template: str
    records: tuple[PoseRecord, ...]


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), allow_nan=False)


def _read_lines(path) -> list[dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    out = []
    for n, ln in enumerate(text.splitlines(), 1):
        if not ln.strip():
            continue
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise FileFormatError(f"{path}:{n}: expected a JSON object")
        out.append(obj)
    if not out:
        raise FileFormatError(f"{path}: empty file")
    return out


def _check_header(head: Mapping, fmt: str, path) -> None:
    if head.get("format") != fmt:
        raise FileFormatError(f"{path}: expected format {fmt!r}, got {head.get('format')!r}")
    if head.get("version") != VERSION:
        raise FileFormatError(f"{path}: unsupported {fmt} version {head.get('version')!r}")


def _image_size(head: Mapping, path) -> tuple[int, int]:
    try:
        w, h = int(head["width"]), int(head["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: header needs integer width and height") from exc
    if w <= 0 or h <= 0:
        raise FileFormatError(f"{path}: image size must be positive")
    return w, h


def _check_increasing(frames: Sequence[int], path) -> None:
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise FileFormatError(f"{path}: frame indices must be strictly increasing")


def detection_to_dict(d: Detection) -> dict:
    out: dict[str, Any] = {"kind": d.kind}
    if d.kind == SEMANTIC:
        out["id"] = int(d.id)
    out.update(u=float(d.u), v=float(d.v), confidence=float(d.confidence))
    return out


def detection_from_dict(obj: Mapping) -> Detection:
    try:
        kind = obj.get("kind", SEMANTIC)
        kid = obj.get("id")
        return Detection(float(obj["u"]), float(obj["v"]), kind, None if kid is None else int(kid), float(obj.get("confidence", 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"bad detection record {dict(obj)!r}") from exc


def write_detections(path, df: DetectionFile) -> None:
    lines = [
        _dumps(
            {
                "format": DETECTIONS_FORMAT,
                "version": VERSION,
                "width": int(df.width),
                "height": int(df.height),
                "fps": float(df.fps),
                "template": df.template,
            }
        )
    ]
    for fr in df.frames:
        rec: dict[str, Any] = {
            "frame": int(fr.frame),
            "timestamp": float(fr.timestamp),
            "detections": [detection_to_dict(d) for d in fr.detections],
        }
        if fr.players_world is not None:
            rec["players_world"] = np.asarray(fr.players_world, dtype=float).reshape(-1, 2).tolist()
        lines.append(_dumps(rec))
    _write(path, lines)


def read_detections(path) -> DetectionFile:
    head, *rows = _read_lines(path)
    _check_header(head, DETECTIONS_FORMAT, path)
    w, h = _image_size(head, path)
    frames = []
    for obj in rows:
        try:
            frame = int(obj["frame"])
            dets = tuple(detection_from_dict(d) for d in obj.get("detections", []))
            pw = obj.get("players_world")
            pw = None if pw is None else np.asarray(pw, dtype=float).reshape(-1, 2)
            ts = float(obj.get("timestamp", frame / float(head.get("fps", 25.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise FileFormatError(f"{path}: bad frame record ({exc})") from exc
        frames.append(FrameDetections(frame, ts, dets, pw))
    _check_increasing([f.frame for f in frames], path)
    return DetectionFile(w, h, float(head.get("fps", 25.0)), str(head.get("template", "")), tuple(frames))


def write_poses(path, pf: PoseFile) -> None:
    lines = [
        _dumps(
            {
                "format": POSES_FORMAT,
                "version": VERSION,
                "width": int(pf.width),
                "height": int(pf.height),
                "template": pf.template,
            }
        )
    ]
    for r in pf.records:
        rec: dict[str, Any] = {"frame": int(r.frame), "status": r.status, "reinitialized": bool(r.reinitialized)}
        if r.pose is None or r.intrinsics is None:
            rec.update(f=None, R=None, t=None)
        else:
            rec.update(f=float(r.intrinsics.f), R=r.pose.R.ravel().tolist(), t=r.pose.t.tolist())
        lines.append(_dumps(rec))
    _write(path, lines)


def read_poses(path) -> PoseFile:
    head, *rows = _read_lines(path)
    _check_header(head, POSES_FORMAT, path)
    w, h = _image_size(head, path)
    records = []
    for obj in rows:
        try:
            frame = int(obj["frame"])
            status = obj.get("status", REGISTERED)
            if status not in STATUSES:
                raise ValueError(f"unknown status {status!r}")
            K = pose = None
            if obj.get("f") is not None and obj.get("R") is not None and obj.get("t") is not None:
                K = Intrinsics(float(obj["f"]), w, h)
                pose = Pose(np.asarray(obj["R"], dtype=float).reshape(3, 3), np.asarray(obj["t"], dtype=float))
            elif status != UNREGISTERED:
                raise ValueError(f"frame {frame} is {status} but has no pose")
        except (KeyError, TypeError, ValueError, InputError) as exc:
            raise FileFormatError(f"{path}: bad pose record ({exc})") from exc
        records.append(PoseRecord(frame, status, bool(obj.get("reinitialized", False)), K, pose))
    _check_increasing([r.frame for r in records], path)
    return PoseFile(w, h, str(head.get("template", "")), tuple(records))


def _write(path, lines: Iterable[str]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FileFormatError(f"cannot write {path}: {exc}") from exc


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def dataclass_from_dict(cls, obj: Mapping | None, where: str):
    """Build a config dataclass from a (partial) mapping, rejecting unknown keys."""
    if obj is None:
        return cls()
    if not isinstance(obj, Mapping):
        raise InputError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(obj) - set(names)
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in obj.items():
        kwargs[k] = _tuplify(v)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InputError(f"{where}: {exc}") from exc


def dataclass_to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = dataclass_to_dict(v)
        elif isinstance(v, tuple):
            v = json.loads(json.dumps(v))
        out[f.name] = v
    return out


def _load_doc(path, fmt: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: expected a JSON object")
    _check_header(doc, fmt, path)
    return {k: v for k, v in doc.items() if k not in ("format", "version")}


def simulation_config_from_dict(doc: Mapping) -> SimulationConfig:
    doc = dict(doc)
    unknown = set(doc) - {"trajectory", "noise", "players", "template", "seed"}
    if unknown:
        raise InputError(f"simulation config: unknown keys {sorted(unknown)}")
    return SimulationConfig(
        trajectory=dataclass_from_dict(TrajectoryConfig, doc.get("trajectory"), "trajectory"),
        noise=dataclass_from_dict(NoiseModel, doc.get("noise"), "noise"),
        players=dataclass_from_dict(PlayerConfig, doc.get("players"), "players"),
        template=str(doc.get("template", "basketball")),
        seed=int(doc.get("seed", 0)),
    )


def load_simulation_config(path) -> SimulationConfig:
    return simulation_config_from_dict(_load_doc(path, SIMULATION_FORMAT))


def simulation_config_to_dict(cfg: SimulationConfig) -> dict:
    return {"format": SIMULATION_FORMAT, "version": VERSION, **dataclass_to_dict(cfg)}


def pipeline_config_from_dict(doc: Mapping) -> PipelineConfig:
    doc = dict(doc)
    flat = {k: v for k, v in doc.items() if k not in ("ransac", "filter")}
    base = dataclass_from_dict(PipelineConfig, flat, "pipeline")
    return dataclasses.replace(
        base,
        ransac=dataclass_from_dict(RansacConfig, doc.get("ransac"), "ransac"),
        filter=dataclass_from_dict(FilterConfig, doc.get("filter"), "filter"),
    )


def load_pipeline_config(path) -> PipelineConfig:
    return pipeline_config_from_dict(_load_doc(path, PIPELINE_FORMAT))


def pipeline_config_to_dict(cfg: PipelineConfig) -> dict:
    return {"format": PIPELINE_FORMAT, "version": VERSION, **dataclass_to_dict(cfg)}


def write_text(path, text: str) -> None:
    _write(path, text.rstrip("\n").split("\n"))
