"""Checkpoint files: a JSON manifest followed by raw little-endian float64 tensors.

Layout::

    b"EGOCKPT1"                 8-byte magic
    uint64 little-endian        manifest length in bytes
    manifest                    UTF-8 JSON, sorted keys, no whitespace
    payload                     tensors back to back, '<f8', C order

The manifest carries ``version``, ``kind`` (``estimator`` | ``forecaster``),
``config`` (echo of the training config), ``step``, ``extra`` (provider and
loss-weight settings, loss trace) and ``tensors``: a list of
``{"name", "shape", "offset"}`` with byte offsets into the payload.  Adam
moments are stored as ``adam.m/<param>`` and ``adam.v/<param>``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from egocast.optim import AdamState

MAGIC = b"EGOCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    step: int
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        entries = []
        chunks = []
        offset = 0
        for name, arr in self.tensors.items():
            buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"name": name, "offset": offset, "shape": list(arr.shape)})
            chunks.append(buf)
            offset += len(buf)
        manifest = {
            "version": VERSION,
            "kind": self.kind,
            "config": self.config,
            "step": self.step,
            "extra": self.extra,
            "tensors": entries,
        }
        head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (n,) = struct.unpack("<Q", data[8:16])
        try:
            manifest = json.loads(data[16:16 + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt manifest: {exc}") from None
        if manifest.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
        payload = memoryview(data)[16 + n:]
        tensors = {}
        for e in manifest["tensors"]:
            count = int(np.prod(e["shape"], dtype=np.int64))
            end = e["offset"] + 8 * count
            if end > len(payload):
                raise CheckpointError(f"tensor {e['name']!r} runs past the end of the file")
            arr = np.frombuffer(payload[e["offset"]:end], dtype="<f8").astype(np.float64)
            tensors[e["name"]] = arr.reshape(e["shape"])
        return cls(manifest["kind"], manifest["config"], manifest["step"], tensors, manifest.get("extra", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def adam_state(self, lr: float) -> AdamState:
        state = AdamState(lr=lr, t=self.step)
        for k, v in self.tensors.items():
            if k.startswith("adam.m/"):
                state.m[k[7:]] = v.copy()
            elif k.startswith("adam.v/"):
                state.v[k[7:]] = v.copy()
        return state


def load_checkpoint(path, kind: str | None = None, expected_config: dict | None = None,
                    ignore: tuple[str, ...] = ()) -> Checkpoint:
    """Read a checkpoint; fail if its kind or config echo disagrees with the caller's.

    Keys listed in ``ignore`` (e.g. training-schedule fields) are not compared.
    """
    ckpt = Checkpoint.from_bytes(Path(path).read_bytes())
    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {ckpt.kind}")
    if expected_config is not None:
        want = {k: v for k, v in json.loads(json.dumps(expected_config)).items() if k not in ignore}
        have = {k: v for k, v in ckpt.config.items() if k not in ignore}
        if want != have:
            diff = sorted(k for k in set(want) | set(have) if want.get(k) != have.get(k))
            raise CheckpointError(f"{path}: config echo differs from the loading config in {diff}")
    return ckpt


def make_checkpoint(kind: str, config: dict, model, state: AdamState | None = None,
                    extra: dict | None = None) -> Checkpoint:
    tensors = dict(model.state_dict())
    step = 0
    if state is not None:
        step = state.t
        for name in tensors.copy():
            if name in state.m:
                tensors[f"adam.m/{name}"] = state.m[name]
                tensors[f"adam.v/{name}"] = state.v[name]
    return Checkpoint(kind, json.loads(json.dumps(config)), step, tensors, extra or {})
