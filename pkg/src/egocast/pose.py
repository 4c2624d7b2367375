"""Skeletons, headset proprioception, pose sequences and the forecast-token layout.

Lengths are meters in a z-up world frame.  Quaternions are stored (w, x, y, z)
with unit norm and w >= 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from egocast.tensor import ContractError


class DegenerateRotationError(ValueError):
    pass


def normalize_quaternion(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ContractError(f"quaternion must have 4 components, got shape {q.shape}")
    n = np.linalg.norm(q)
    if not n > 1e-12:
        raise DegenerateRotationError(f"cannot normalize near-zero quaternion {q.tolist()}")
    q = q / n
    return -q if q[0] < 0 else q


def canonicalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Flip rows of an ``[..., 4]`` array so that w >= 0 (no renormalisation)."""
    q = np.asarray(q, dtype=np.float64)
    return np.where(q[..., :1] < 0, -q, q)


def is_unit_quaternion(q, tol: float = 1e-9) -> bool:
    q = np.asarray(q, dtype=np.float64)
    return q.shape == (4,) and abs(np.linalg.norm(q) - 1.0) <= tol and q[0] >= 0


@dataclass(frozen=True)
class SkeletonSpec:
    joints: tuple[str, ...]
    root: tuple[str, ...]
    head: str
    name: str = "custom"

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ContractError("a skeleton needs at least one joint")
        if len(set(self.joints)) != len(self.joints):
            raise ContractError("joint names must be unique")
        missing = [j for j in (*self.root, self.head) if j not in self.joints]
        if not self.root or missing:
            raise ContractError(f"root/head rule references unknown joints {missing}")

    @property
    def J(self) -> int:
        return len(self.joints)

    def index(self, joint: str) -> int:
        return self.joints.index(joint)

    @property
    def root_indices(self) -> list[int]:
        return [self.index(j) for j in self.root]

    def to_json(self) -> dict:
        return {"name": self.name, "joints": list(self.joints), "root_rule": list(self.root), "head": self.head}

    @classmethod
    def from_json(cls, obj: dict) -> "SkeletonSpec":
        root = obj["root_rule"]
        if isinstance(root, str):
            root = [root]
        return cls(tuple(obj["joints"]), tuple(root), obj.get("head", obj["joints"][0]), obj.get("name", "custom"))


SKELETON_17 = SkeletonSpec(
    joints=(
        "nose", "left_eye", "right_eye", "left_ear", "right_ear",
        "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
        "left_wrist", "right_wrist", "left_hip", "right_hip",
        "left_knee", "right_knee", "left_ankle", "right_ankle",
    ),
    root=("left_hip", "right_hip"),
    head="nose",
    name="body17",
)

SKELETON_21 = SkeletonSpec(
    joints=(
        "pelvis", "spine", "chest", "neck", "head",
        "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
        "left_wrist", "right_wrist", "left_hand", "right_hand",
        "left_hip", "right_hip", "left_knee", "right_knee",
        "left_ankle", "right_ankle", "left_foot", "right_foot",
    ),
    root=("pelvis",),
    head="head",
    name="body21",
)

SKELETONS = {"body17": SKELETON_17, "body21": SKELETON_21}


def get_skeleton(name_or_j) -> SkeletonSpec:
    if isinstance(name_or_j, SkeletonSpec):
        return name_or_j
    if name_or_j in (17, "17"):
        return SKELETON_17
    if name_or_j in (21, "21"):
        return SKELETON_21
    try:
        return SKELETONS[name_or_j]
    except KeyError:
        raise ContractError(f"unknown skeleton {name_or_j!r}") from None


@dataclass(frozen=True)
class HeadsetPose:
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        rot = np.asarray(self.rotation, dtype=np.float64)
        if not is_unit_quaternion(rot):
            raise ContractError(f"headset rotation {rot.tolist()} is not a canonical unit quaternion")
        object.__setattr__(self, "rotation", rot)


@dataclass(frozen=True)
class PoseFrame:
    frame_index: int
    timestamp_s: float
    headset: HeadsetPose
    body: np.ndarray | None = None  # J x 3, None when ground truth is withheld
    visual_feature: np.ndarray | None = None


@dataclass
class PoseSequence:
    skeleton: SkeletonSpec
    frames: list[PoseFrame]
    activity_label: str | None = None
    fps: float = 30.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for i, fr in enumerate(self.frames):
            if fr.frame_index != i:
                raise ContractError(f"frame indices must be contiguous from 0; frame {i} has index {fr.frame_index}")
            if fr.body is not None and fr.body.shape != (self.skeleton.J, 3):
                raise ContractError(f"frame {i}: body shape {fr.body.shape} does not match skeleton J={self.skeleton.J}")
            if i and not fr.timestamp_s > self.frames[i - 1].timestamp_s:
                raise ContractError(f"timestamps must increase strictly (frame {i})")

    def __len__(self) -> int:
        return len(self.frames)

    def positions(self) -> np.ndarray:
        if "p" not in self._cache:
            self._cache["p"] = np.stack([f.headset.position for f in self.frames])
        return self._cache["p"]

    def rotations(self) -> np.ndarray:
        if "y" not in self._cache:
            self._cache["y"] = np.stack([f.headset.rotation for f in self.frames])
        return self._cache["y"]

    def has_body(self) -> bool:
        return all(f.body is not None for f in self.frames)

    def bodies(self) -> np.ndarray:
        """All ground-truth poses as ``[T, J, 3]``; raises if any frame lacks one."""
        if "q" not in self._cache:
            missing = [f.frame_index for f in self.frames if f.body is None]
            if missing:
                raise ContractError(f"frames {missing[:5]}... carry no ground-truth body pose")
            self._cache["q"] = np.stack([f.body for f in self.frames])
        return self._cache["q"]

    def without_bodies(self) -> "PoseSequence":
        frames = [PoseFrame(f.frame_index, f.timestamp_s, f.headset, None, f.visual_feature) for f in self.frames]
        return PoseSequence(self.skeleton, frames, self.activity_label, self.fps)


def token_dim(J: int) -> int:
    if J < 1:
        raise ContractError(f"joint count must be positive, got {J}")
    return 3 * J + 7


def build_forecast_token(q, p, y) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (4,) or abs(np.linalg.norm(y) - 1.0) > 1e-6:
        raise ContractError(f"rotation {y.tolist()} is not a unit quaternion")
    return np.concatenate([q.reshape(-1), np.asarray(p, dtype=np.float64).reshape(3), y])


def build_forecast_tokens(q: np.ndarray, p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorised layout for ``[T, J, 3]``, ``[T, 3]``, ``[T, 4]`` -> ``[T, 3J+7]``."""
    T = q.shape[0]
    return np.concatenate([q.reshape(T, -1), p.reshape(T, 3), y.reshape(T, 4)], axis=1)


def split_forecast_token(token, skeleton: SkeletonSpec):
    token = np.asarray(token, dtype=np.float64)
    J = skeleton.J
    if token.shape[-1] != token_dim(J):
        raise ContractError(f"token dimension {token.shape[-1]} != 3*{J}+7")
    lead = token.shape[:-1]
    return (token[..., : 3 * J].reshape(*lead, J, 3), token[..., 3 * J: 3 * J + 3], token[..., 3 * J + 3:])


def past_window(seq: PoseSequence | Sequence, t: int, k: int) -> list:
    """Frames ``max(0, t-k+1) .. t``; shrinks near the sequence start instead of failing."""
    n = len(seq.frames) if isinstance(seq, PoseSequence) else len(seq)
    if not 0 <= t < n:
        raise ContractError(f"frame {t} out of range for sequence of length {n}")
    if k < 1:
        raise ContractError(f"window length must be >= 1, got {k}")
    frames = seq.frames if isinstance(seq, PoseSequence) else seq
    return list(frames[max(0, t - k + 1): t + 1])


def window_bounds(t: int, k: int) -> tuple[int, int]:
    return max(0, t - k + 1), t + 1


def derive_root(body: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    """Root position(s) of ``[..., J, 3]`` poses as ``[..., 3]``."""
    body = np.asarray(body, dtype=np.float64)
    return body[..., skeleton.root_indices, :].mean(axis=-2)
