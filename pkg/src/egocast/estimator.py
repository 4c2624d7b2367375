"""Current-frame body pose estimation from headset translations plus a visual feature.

Past headset positions are expressed relative to the newest one, projected to
the encoder width, tagged with learned positional embeddings counted from the
window's end, and run through a transformer encoder.  The newest token's
output is concatenated with the visual feature and decoded by a two-layer MLP
into joint offsets from the current headset position.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from egocast.nn import MLP, Linear, Module, TransformerEncoder, positional_slice
from egocast.optim import AdamState, adam_step
from egocast.pose import PoseFrame, PoseSequence, SkeletonSpec, get_skeleton
from egocast.providers import VisualFeatureProvider
from egocast.synth import DataError
from egocast.tensor import ConfigurationError, ContractError, Tensor, concat, l1_loss, zero_grad

log = logging.getLogger(__name__)


@dataclass
class EstimatorConfig:
    k: int = 20
    d: int = 64
    layers: int = 2
    heads: int = 4
    head_hidden: int = 256
    visual_dim: int = 256
    lr: float = 1e-4
    batch_size: int = 24
    iterations: int = 2000
    seed: int = 0
    skeleton: str = "body17"
    warmup_prob: float = 0.1

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigurationError(f"window length k must be >= 1, got {self.k}")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigurationError(f"width d={self.d} is not divisible by heads={self.heads}")
        if self.visual_dim < 1 or self.batch_size < 1 or self.layers < 0:
            raise ConfigurationError("visual_dim and batch_size must be >= 1, layers >= 0")

    @classmethod
    def full_scale(cls, **overrides) -> "EstimatorConfig":
        base = dict(k=20, d=256, layers=3, heads=8, head_hidden=512, visual_dim=256,
                    lr=1e-4, batch_size=24, iterations=200_000)
        base.update(overrides)
        return cls(**base)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


class CurrentFrameModel(Module):
    def __init__(self, config: EstimatorConfig, skeleton: SkeletonSpec | None = None):
        config.validate()
        self._config = config
        self._skeleton = skeleton or get_skeleton(config.skeleton)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 1])))
        d = config.d
        self.in_proj = Linear(3, d, rng)
        self.pos = Tensor(rng.normal(0.0, 0.02, (config.k, d)), requires_grad=True)
        self.encoder = TransformerEncoder(d, config.layers, config.heads, rng)
        self.head = MLP(d + config.visual_dim, config.head_hidden, 3 * self._skeleton.J, rng)

    @property
    def config(self) -> EstimatorConfig:
        return self._config

    @property
    def skeleton(self) -> SkeletonSpec:
        return self._skeleton

    def encode(self, positions: np.ndarray) -> Tensor:
        """``[B, w, 3]`` headset positions -> ``[B, d]`` newest-token encodings."""
        positions = np.asarray(positions, dtype=np.float64)
        w = positions.shape[-2]
        if w < 1:
            raise ContractError("empty proprioception window")
        if w > self._config.k:
            raise ContractError(f"window of {w} frames exceeds k={self._config.k}")
        rel = positions - positions[..., -1:, :]
        x = self.in_proj(Tensor(rel)) + positional_slice(self.pos, w)
        h = self.encoder(x)
        return h[..., -1, :]

    def __call__(self, positions: np.ndarray, features: np.ndarray) -> Tensor:
        """Joint positions ``[B, J, 3]`` in world meters."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self._config.visual_dim:
            raise ContractError(f"visual feature has dimension {features.shape[-1]}, model expects "
                                f"{self._config.visual_dim}")
        e_t = self.encode(positions)
        out = self.head(concat([e_t, Tensor(features)], axis=-1))
        lead = out.shape[:-1]
        offsets = out.reshape(*lead, self._skeleton.J, 3)
        current = np.asarray(positions, dtype=np.float64)[..., -1:, :]
        return offsets + Tensor(current)


def _window_positions(window: Sequence[PoseFrame]) -> np.ndarray:
    if not window:
        raise ContractError("empty proprioception window")
    return np.stack([f.headset.position for f in window])


def encode_proprio(window: Sequence[PoseFrame] | np.ndarray, model: CurrentFrameModel) -> np.ndarray:
    pos = window if isinstance(window, np.ndarray) else _window_positions(window)
    return model.encode(pos[None])[0].data.copy()


def estimate_current_pose(window, e_v, model: CurrentFrameModel, skeleton: SkeletonSpec | None = None) -> np.ndarray:
    """``q^t = H_c(e^t ++ e^v)`` as a ``[J, 3]`` array."""
    if skeleton is not None and skeleton != model.skeleton:
        raise ConfigurationError("skeleton does not match the model's skeleton")
    pos = window if isinstance(window, np.ndarray) else _window_positions(window)
    e_v = np.asarray(e_v, dtype=np.float64)
    if e_v.shape != (model.config.visual_dim,):
        raise ContractError(f"visual feature has shape {e_v.shape}, expected ({model.config.visual_dim},)")
    return model(pos[None], e_v[None])[0].data.copy()


def estimate_sequence(model: CurrentFrameModel, seq: PoseSequence, provider: VisualFeatureProvider,
                      features: np.ndarray | None = None) -> np.ndarray:
    """Pseudo-groundtruth pose for every frame, each from its own past window: ``[T, J, 3]``.

    Equal to calling :func:`estimate_current_pose` frame by frame; full windows
    are batched together.
    """
    k = model.config.k
    P = seq.positions()
    F = provider.sequence_features(seq, k) if features is None else features
    T = len(seq)
    out = np.empty((T, model.skeleton.J, 3))
    for t in range(min(k - 1, T)):
        out[t] = model(P[None, : t + 1], F[t][None])[0].data
    if T >= k:
        idx = np.arange(k - 1, T)
        windows = np.stack([P[t - k + 1: t + 1] for t in idx])
        for s in range(0, len(idx), 256):
            out[idx[s:s + 256]] = model(windows[s:s + 256], F[idx[s:s + 256]]).data
    return out


@dataclass
class _SeqArrays:
    P: np.ndarray
    F: np.ndarray
    Q: np.ndarray


class TrainResult:
    def __init__(self, model, state: AdamState, trace: list[float]):
        self.model = model
        self.state = state
        self.trace = trace

    def __iter__(self):
        return iter((self.model, self.trace))


def _batch_window(rng: np.random.Generator, k: int, warmup_prob: float) -> int:
    if k > 1 and rng.uniform() < warmup_prob:
        return int(rng.integers(1, k))
    return k


def _sample_anchors(rng, lengths: np.ndarray, lo: int, hi_pad: int, batch: int):
    """(sequence, t) pairs with ``lo <= t < len - hi_pad``, uniform over all valid anchors."""
    counts = np.maximum(lengths - hi_pad - lo, 0)
    total = counts.sum()
    flat = rng.integers(0, total, size=batch)
    cum = np.cumsum(counts)
    seq_idx = np.searchsorted(cum, flat, side="right")
    t = flat - (cum[seq_idx] - counts[seq_idx]) + lo
    return seq_idx, t


def train_current_module(
    dataset: Sequence[PoseSequence],
    provider: VisualFeatureProvider,
    config: EstimatorConfig,
    resume: TrainResult | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Adam on mean L1 joint error.  Batch ``s`` depends only on ``(seed, s)``, so resuming is exact."""
    config.validate()
    seqs = [s for s in dataset if len(s) and s.has_body()]
    if not seqs:
        raise DataError("no sequences with ground-truth body poses to train on")
    if provider.dim != config.visual_dim:
        raise ConfigurationError(f"provider dimension {provider.dim} != visual_dim {config.visual_dim}")
    skeleton = seqs[0].skeleton
    arrays = [_SeqArrays(s.positions(), provider.sequence_features(s, config.k), s.bodies()) for s in seqs]
    lengths = np.array([len(s) for s in seqs])

    if resume is None:
        model = CurrentFrameModel(config, skeleton)
        state = AdamState(lr=config.lr)
        trace: list[float] = []
    else:
        model, state, trace = resume.model, resume.state, list(resume.trace)
    params = model.named_parameters()

    for step in range(state.t, config.iterations):
        rng = np.random.default_rng([config.seed, 2, step])
        w = _batch_window(rng, config.k, config.warmup_prob)
        if not (lengths >= w).any():
            w = int(lengths.max())
        si, ti = _sample_anchors(rng, lengths, w - 1, 0, config.batch_size)
        pos = np.stack([arrays[s].P[t - w + 1: t + 1] for s, t in zip(si, ti)])
        feat = np.stack([arrays[s].F[t] for s, t in zip(si, ti)])
        target = np.stack([arrays[s].Q[t] for s, t in zip(si, ti)])

        loss = l1_loss(model(pos, feat), target)
        zero_grad(params.values())
        loss.backward()
        adam_step(params, state)
        trace.append(loss.item())
        if callback is not None:
            callback(step, trace[-1])
    return TrainResult(model, state, trace)
