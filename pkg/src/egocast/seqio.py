"""JSON-lines sequence files.

A file holds one or more sequences.  Each starts with a header line::

    {"format": "egocast-seq", "version": 1, "skeleton": {...}, "fps": 30, "activity": "walk"}

followed by one line per frame::

    {"i": 0, "t": 0.0, "p": [x, y, z], "y": [w, x, y, z], "q": [[x, y, z], ...] | null, "v": [...]}

``q`` is null when ground truth is withheld; ``v`` (a precomputed visual
feature) is optional.  Floats are written with ``repr`` precision, so a
write/read round trip is exact.  All sequences in a file share one skeleton.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from egocast.pose import HeadsetPose, PoseFrame, PoseSequence, SkeletonSpec

FORMAT_NAME = "egocast-seq"
FORMAT_VERSION = 1


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class FormatError(ParseError):
    """Structurally valid lines that disagree with each other (e.g. skeleton mismatch)."""


def _header(seq: PoseSequence) -> dict:
    fps = int(seq.fps) if float(seq.fps).is_integer() else seq.fps
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "skeleton": seq.skeleton.to_json(),
        "fps": fps,
        "activity": seq.activity_label,
    }


def _frame(fr: PoseFrame) -> dict:
    obj = {
        "i": fr.frame_index,
        "t": fr.timestamp_s,
        "p": fr.headset.position.tolist(),
        "y": fr.headset.rotation.tolist(),
        "q": None if fr.body is None else fr.body.tolist(),
    }
    if fr.visual_feature is not None:
        obj["v"] = np.asarray(fr.visual_feature, dtype=np.float64).tolist()
    return obj


def dumps_sequences(sequences: Iterable[PoseSequence]) -> str:
    lines = []
    for seq in sequences:
        lines.append(json.dumps(_header(seq), separators=(",", ":")))
        lines.extend(json.dumps(_frame(fr), separators=(",", ":")) for fr in seq.frames)
    return "".join(line + "\n" for line in lines)


def write_sequences(path, sequences: Iterable[PoseSequence]) -> None:
    Path(path).write_text(dumps_sequences(sequences), encoding="utf-8")


def _floats(value, shape, lineno: int, what: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(lineno, f"{what} is not numeric") from None
    if shape is not None and arr.shape != shape:
        raise ParseError(lineno, f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(lineno, f"{what} contains non-finite values")
    return arr


def loads_sequences(text: str) -> list[PoseSequence]:
    sequences: list[PoseSequence] = []
    skeleton: SkeletonSpec | None = None
    header: dict | None = None
    frames: list[PoseFrame] = []

    def flush():
        if header is not None:
            try:
                sequences.append(PoseSequence(skeleton, list(frames), header.get("activity"), float(header.get("fps", 30))))
            except ValueError as exc:
                raise ParseError(header_line, str(exc)) from None

    header_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(lineno, "expected a JSON object")

        if "format" in obj:
            if obj["format"] != FORMAT_NAME or obj.get("version") != FORMAT_VERSION:
                raise ParseError(lineno, f"unsupported format {obj.get('format')!r} v{obj.get('version')!r}")
            try:
                sk = SkeletonSpec.from_json(obj["skeleton"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(lineno, f"bad skeleton: {exc}") from None
            if skeleton is not None and sk != skeleton:
                raise FormatError(lineno, "skeleton differs from earlier sequences in this file")
            flush()
            skeleton, header, frames, header_line = sk, obj, [], lineno
            continue

        if header is None:
            raise ParseError(lineno, "frame line before any header")
        try:
            i = obj["i"]
            t = obj["t"]
            p_raw, y_raw = obj["p"], obj["y"]
        except KeyError as exc:
            raise ParseError(lineno, f"missing field {exc.args[0]!r}") from None
        if not isinstance(i, int) or i != len(frames):
            raise ParseError(lineno, f"frame index {i!r} out of order (expected {len(frames)})")
        if not isinstance(t, (int, float)) or not math.isfinite(t):
            raise ParseError(lineno, f"frame {i}: bad timestamp")
        p = _floats(p_raw, (3,), lineno, f"frame {i}: position")
        y = _floats(y_raw, (4,), lineno, f"frame {i}: rotation")
        if abs(np.linalg.norm(y) - 1.0) > 1e-9:
            raise ParseError(lineno, f"frame {i}: rotation quaternion is not unit-norm (|y|={np.linalg.norm(y):.6g})")
        if y[0] < 0:
            y = -y
        body = None
        if obj.get("q") is not None:
            q = _floats(obj["q"], None, lineno, f"frame {i}: body")
            if q.shape != (skeleton.J, 3):
                raise FormatError(lineno, f"frame {i}: body has shape {q.shape}, skeleton needs ({skeleton.J}, 3)")
            body = q
        v = _floats(obj["v"], None, lineno, f"frame {i}: visual feature").reshape(-1) if "v" in obj else None
        if frames and not float(t) > frames[-1].timestamp_s:
            raise ParseError(lineno, f"frame {i}: timestamp not increasing")
        frames.append(PoseFrame(i, float(t), HeadsetPose(p, y), body, v))
    flush()
    return sequences


def read_sequences(path) -> list[PoseSequence]:
    return loads_sequences(Path(path).read_text(encoding="utf-8"))
