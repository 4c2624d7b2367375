"""Visual-feature providers: a window of past frames in, a fixed-size vector out.

Real systems would run a video encoder here.  The providers below are
stand-ins that make the contribution of a visual channel measurable:

* :class:`NullProvider` returns zeros (proprioception-only arm);
* :class:`InformativeProvider` returns a noisy random projection of the
  current frame's ground-truth pose;
* :class:`StoredFeatureProvider` reads features precomputed into
  ``PoseFrame.visual_feature``, so inference never touches ground truth.
"""
from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from egocast.pose import PoseFrame, PoseSequence, SkeletonSpec, get_skeleton
from egocast.tensor import ContractError


class VisualFeatureProvider:
    dim: int
    kind: str = "base"

    def __call__(self, window: Sequence[PoseFrame]) -> np.ndarray:
        raise NotImplementedError

    def sequence_features(self, seq: PoseSequence, k: int) -> np.ndarray:
        """Feature for every frame's past window, ``[T, dim]``."""
        return np.stack([self(seq.frames[max(0, t - k + 1): t + 1]) for t in range(len(seq))])

    def to_json(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


class NullProvider(VisualFeatureProvider):
    kind = "null"

    def __init__(self, dim: int):
        if dim < 1:
            raise ContractError("feature dimension must be >= 1")
        self.dim = dim

    def __call__(self, window):
        return np.zeros(self.dim)

    def sequence_features(self, seq, k):
        return np.zeros((len(seq), self.dim))


class InformativeProvider(VisualFeatureProvider):
    """``projection @ vec(pose) + noise`` for the newest frame in the window.

    With ``frame="headset"`` the pose is first expressed relative to the
    headset position, as a head-mounted camera would observe the body.  The
    noise for a frame is drawn from a generator keyed on ``seed`` and the
    frame's content, so the same window always yields the same feature.
    """

    kind = "informative"

    def __init__(self, skeleton: SkeletonSpec, dim: int, noise_sigma: float, seed: int,
                 frame: str = "headset", projection: np.ndarray | None = None):
        if dim < 1:
            raise ContractError("feature dimension must be >= 1")
        if frame not in ("headset", "world"):
            raise ContractError(f"unknown feature frame {frame!r}")
        self.skeleton = skeleton
        self.dim = dim
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        self.frame = frame
        n_in = 3 * skeleton.J
        if projection is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 0x7155])))
            projection = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(dim, n_in))
        projection = np.asarray(projection, dtype=np.float64)
        if projection.shape != (dim, n_in):
            raise ContractError(f"projection shape {projection.shape} != {(dim, n_in)}")
        self.projection = projection

    def _noise(self, frame: PoseFrame) -> np.ndarray:
        if self.noise_sigma == 0:
            return np.zeros(self.dim)
        digest = hashlib.blake2b(frame.body.tobytes() + frame.headset.position.tobytes(), digest_size=16).digest()
        key = [self.seed, *np.frombuffer(digest, dtype=np.uint32).tolist()]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
        return rng.normal(0.0, self.noise_sigma, self.dim)

    def __call__(self, window):
        if not window:
            raise ContractError("empty window")
        cur = window[-1]
        if cur.body is None:
            raise ContractError(f"frame {cur.frame_index} has no ground-truth body pose to observe")
        pose = cur.body - cur.headset.position if self.frame == "headset" else cur.body
        return self.projection @ pose.reshape(-1) + self._noise(cur)

    def to_json(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "noise_sigma": self.noise_sigma, "seed": self.seed,
                "frame": self.frame, "skeleton": self.skeleton.name}


class StoredFeatureProvider(VisualFeatureProvider):
    kind = "stored"

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, window):
        cur = window[-1]
        if cur.visual_feature is None:
            raise ContractError(f"frame {cur.frame_index} carries no stored visual feature")
        v = np.asarray(cur.visual_feature, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ContractError(f"stored feature has dimension {v.shape}, expected {self.dim}")
        return v


def make_informative_provider(skeleton, D_v: int, noise_sigma: float, seed: int, **kw) -> InformativeProvider:
    return InformativeProvider(get_skeleton(skeleton), D_v, noise_sigma, seed, **kw)


def make_null_provider(D_v: int) -> NullProvider:
    return NullProvider(D_v)


def provider_from_json(obj: dict, skeleton=None) -> VisualFeatureProvider:
    kind = obj["kind"]
    if kind == "null":
        return NullProvider(obj["dim"])
    if kind == "stored":
        return StoredFeatureProvider(obj["dim"])
    if kind == "informative":
        sk = get_skeleton(skeleton if skeleton is not None else obj["skeleton"])
        return InformativeProvider(sk, obj["dim"], obj["noise_sigma"], obj["seed"], obj.get("frame", "headset"))
    raise ContractError(f"unknown provider kind {kind!r}")


def attach_features(seq: PoseSequence, provider: VisualFeatureProvider, k: int = 1,
                    withhold_body: bool = True) -> PoseSequence:
    """Precompute ``provider`` features into each frame (and optionally drop ground truth)."""
    feats = provider.sequence_features(seq, k)
    frames = [
        PoseFrame(f.frame_index, f.timestamp_s, f.headset, None if withhold_body else f.body, feats[i])
        for i, f in enumerate(seq.frames)
    ]
    return PoseSequence(seq.skeleton, frames, seq.activity_label, seq.fps)
