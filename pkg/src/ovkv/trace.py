"""Line-delimited JSON trace of engine inputs and the metrics they produced.

The first line is a header (dims, config, intrinsics, seed, config hash). Every further line
holds one frame: base64 little-endian float32 token blocks, the pose as 12 reals, base64
float64 points and confidences, and the deterministic metrics record of that step.
"""
from __future__ import annotations

import base64
import dataclasses
import hashlib
import json
from typing import Iterator

import numpy as np

from .core import EngineConfig, ModelDims
from .engine import FrameInput, StepMetrics
from .geometry import Intrinsics, PointMap, Pose

VERSION = 1


class TraceError(ValueError):
    pass


def encode_array(a, dtype="<f4") -> dict:
    a = np.ascontiguousarray(a, dtype=dtype)
    return {"dtype": dtype, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"], validate=True)
        return np.frombuffer(raw, dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"bad array block: {exc}") from None


def config_to_dict(cfg: EngineConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["dims"] = dataclasses.asdict(cfg.dims)
    return d


def config_from_dict(d: dict) -> EngineConfig:
    d = dict(d)
    d["dims"] = ModelDims(**d["dims"])
    return EngineConfig(**d)


def config_hash(cfg: EngineConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def header_record(cfg: EngineConfig, cam: Intrinsics, seed: int, **extra) -> dict:
    return {
        "type": "header",
        "version": VERSION,
        "dims": dataclasses.asdict(cfg.dims),
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "intrinsics": dataclasses.asdict(cam),
        "seed": seed,
        **extra,
    }


def frame_record(frame: FrameInput, metrics: StepMetrics | None = None) -> dict:
    rec = {
        "type": "frame",
        "frame_index": frame.frame_index,
        "keys": encode_array(frame.keys),
        "values": encode_array(frame.values),
        "residuals": encode_array(frame.residuals),
        "camera_key": encode_array(frame.camera_key),
        "camera_value": encode_array(frame.camera_value),
        "pose": frame.pose.as_row_major().tolist(),
        "points": encode_array(frame.points.points, "<f8"),
        "confidence": encode_array(frame.points.confidence, "<f8"),
    }
    if frame.queries is not None:
        rec["queries"] = encode_array(frame.queries)
    if metrics is not None:
        rec["metrics"] = metrics.to_record()
    return rec


def frame_from_record(rec: dict) -> FrameInput:
    try:
        return FrameInput(
            frame_index=int(rec["frame_index"]),
            keys=decode_array(rec["keys"]),
            values=decode_array(rec["values"]),
            residuals=decode_array(rec["residuals"]),
            pose=Pose.from_row_major(rec["pose"]),
            points=PointMap(decode_array(rec["points"]), decode_array(rec["confidence"])),
            queries=decode_array(rec["queries"]) if "queries" in rec else None,
            camera_key=decode_array(rec["camera_key"]),
            camera_value=decode_array(rec["camera_value"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"bad frame record: {exc}") from None


class TraceWriter:
    def __init__(self, path, cfg: EngineConfig, cam: Intrinsics, seed: int, **extra):
        self._fh = open(path, "w", encoding="utf-8")
        self._write(header_record(cfg, cam, seed, **extra))

    def _write(self, rec):
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def write(self, frame: FrameInput, metrics: StepMetrics):
        self._write(frame_record(frame, metrics))

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace(path) -> tuple[dict | None, Iterator[dict]]:
    """Header (None for an empty file) and an iterator over the frame records."""
    fh = open(path, encoding="utf-8")
    first = fh.readline()
    if not first.strip():
        fh.close()
        return None, iter(())
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        fh.close()
        raise TraceError(f"unreadable header: {exc}") from None
    if header.get("type") != "header":
        fh.close()
        raise TraceError("trace does not start with a header record")

    def frames():
        with fh:
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise TraceError(f"line {lineno}: {exc}") from None
                if rec.get("type") != "frame":
                    raise TraceError(f"line {lineno}: expected a frame record")
                yield rec

    return header, frames()
