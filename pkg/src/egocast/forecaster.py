"""Multi-second pose forecasting from past pose/translation/rotation tokens.

Each past frame becomes a token ``q ++ p ++ y`` (``3J + 7`` values).  Positions
in the tokens are taken relative to the newest headset position, projected to
width ``d``, tagged with positional embeddings, encoded, mean-pooled over the
token axis and decoded by a two-layer MLP into all ``n`` future frames at once.
Predicted positions are shifted back to world coordinates and predicted
quaternions are normalised.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from egocast.estimator import CurrentFrameModel, TrainResult, _batch_window, _sample_anchors, estimate_sequence
from egocast.nn import MLP, Linear, Module, TransformerEncoder, positional_slice
from egocast.optim import AdamState, adam_step
from egocast.pose import (
    PoseSequence,
    SkeletonSpec,
    build_forecast_tokens,
    canonicalize_quaternions,
    get_skeleton,
    past_window,
    token_dim,
)
from egocast.providers import VisualFeatureProvider
from egocast.synth import DataError
from egocast.tensor import (
    ConfigurationError,
    ContractError,
    Tensor,
    as_tensor,
    l1_loss,
    mean_pool_tokens,
    sqrt,
    zero_grad,
)

log = logging.getLogger(__name__)


@dataclass
class ForecastConfig:
    k: int = 20
    n: int = 150
    d: int = 64
    layers: int = 2
    heads: int = 4
    head_hidden: int = 256
    lr: float = 1e-4
    batch_size: int = 24
    iterations: int = 2000
    seed: int = 0
    skeleton: str = "body17"
    warmup_prob: float = 0.1
    gt_past: bool = False

    def validate(self) -> None:
        if self.k < 1 or self.n < 1:
            raise ConfigurationError(f"k and n must be >= 1 (k={self.k}, n={self.n})")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigurationError(f"width d={self.d} is not divisible by heads={self.heads}")

    @classmethod
    def full_scale(cls, **overrides) -> "ForecastConfig":
        base = dict(k=20, n=150, d=256, layers=3, heads=8, head_hidden=512, lr=1e-4,
                    batch_size=24, iterations=30_000)
        base.update(overrides)
        return cls(**base)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class LossWeights:
    pose: float = 1.0
    translation: float = 1.0
    rotation: float = 1.0

    def __post_init__(self):
        w = (self.pose, self.translation, self.rotation)
        if min(w) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if max(w) == 0:
            raise ConfigurationError("at least one loss weight must be positive")


@dataclass
class ForecastOutput:
    """Future body poses ``[n, J, 3]``, headset translations ``[n, 3]`` and rotations ``[n, 4]``.

    Fields may be numpy arrays or Tensors (the training path keeps a leading batch axis).
    """

    Q: np.ndarray | Tensor
    P: np.ndarray | Tensor
    Y: np.ndarray | Tensor

    @property
    def n(self) -> int:
        return self.Q.shape[-3]


class ForecastModel(Module):
    def __init__(self, config: ForecastConfig, skeleton: SkeletonSpec | None = None):
        config.validate()
        self._config = config
        self._skeleton = skeleton or get_skeleton(config.skeleton)
        self._m = token_dim(self._skeleton.J)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 3])))
        d = config.d
        self.proj = Linear(self._m, d, rng)
        self.pos = Tensor(rng.normal(0.0, 0.02, (config.k, d)), requires_grad=True)
        self.encoder = TransformerEncoder(d, config.layers, config.heads, rng)
        self.head = MLP(d, config.head_hidden, config.n * self._m, rng)

    @property
    def config(self) -> ForecastConfig:
        return self._config

    @property
    def skeleton(self) -> SkeletonSpec:
        return self._skeleton

    @property
    def token_dim(self) -> int:
        return self._m

    def __call__(self, tokens: np.ndarray) -> ForecastOutput:
        """Batched forward: ``[B, w, m]`` tokens -> ForecastOutput of Tensors with a batch axis."""
        tokens = np.asarray(tokens, dtype=np.float64)
        B, w, m = tokens.shape
        if m != self._m:
            raise ContractError(f"token dimension {m} != 3J+7 = {self._m}")
        if not 1 <= w <= self._config.k:
            raise ContractError(f"need 1..{self._config.k} tokens, got {w}")
        J, n = self._skeleton.J, self._config.n
        anchor = tokens[:, -1, 3 * J: 3 * J + 3]                       # newest headset position
        shift = np.concatenate([np.tile(anchor, J + 1), np.zeros((B, 4))], axis=1)
        rel = tokens - shift[:, None, :]

        x = self.proj(Tensor(rel)) + positional_slice(self.pos, w)
        pooled = mean_pool_tokens(self.encoder(x))
        out = self.head(pooled).reshape(B, n, m)

        Q = out[:, :, : 3 * J].reshape(B, n, J, 3) + Tensor(anchor[:, None, None, :])
        P = out[:, :, 3 * J: 3 * J + 3] + Tensor(anchor[:, None, :])
        Yr = out[:, :, 3 * J + 3:]
        Y = Yr / sqrt((Yr * Yr).sum(axis=-1, keepdims=True) + 1e-12)
        return ForecastOutput(Q, P, Y)


def forecast(tokens: Sequence[np.ndarray] | np.ndarray, model: ForecastModel) -> ForecastOutput:
    """Single-window inference; returns numpy arrays with canonical (w >= 0) unit quaternions."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ContractError(f"expected a [w, m] token window, got shape {tokens.shape}")
    out = model(tokens[None])
    Y = out.Y.data[0]
    Y = canonicalize_quaternions(Y / np.linalg.norm(Y, axis=-1, keepdims=True))
    return ForecastOutput(out.Q.data[0].copy(), out.P.data[0].copy(), Y)


def _canonical_sign(Y: Tensor) -> Tensor:
    sign = np.where(Y.data[..., :1] < 0, -1.0, 1.0)
    return Y * Tensor(sign)


def forecast_loss(pred: ForecastOutput, gt: ForecastOutput, weights: LossWeights | None = None) -> Tensor:
    """Weighted sum of per-component mean absolute errors; quaternions compared in w >= 0 form."""
    w = weights or LossWeights()
    Qp, Pp, Yp = as_tensor(pred.Q), as_tensor(pred.P), as_tensor(pred.Y)
    Qg, Pg = np.asarray(as_tensor(gt.Q).data), np.asarray(as_tensor(gt.P).data)
    Yg = canonicalize_quaternions(as_tensor(gt.Y).data)
    for a, b, what in ((Qp, Qg, "pose"), (Pp, Pg, "translation"), (Yp, Yg, "rotation")):
        if a.shape != b.shape:
            raise ContractError(f"{what} shape mismatch: prediction {a.shape} vs ground truth {b.shape}")
    total = Tensor(0.0)
    if w.pose:
        total = total + w.pose * l1_loss(Qp, Qg)
    if w.rotation:
        total = total + w.rotation * l1_loss(_canonical_sign(Yp), Yg)
    if w.translation:
        total = total + w.translation * l1_loss(Pp, Pg)
    return total


def sequence_tokens(seq: PoseSequence, poses: np.ndarray) -> np.ndarray:
    """Token for every frame, ``[T, 3J+7]``, using ``poses`` for the body part."""
    return build_forecast_tokens(poses, seq.positions(), seq.rotations())


def end_to_end_infer(seq: PoseSequence, t: int, estimator: CurrentFrameModel,
                     provider: VisualFeatureProvider, forecaster: ForecastModel) -> ForecastOutput:
    """Forecast from frame ``t`` feeding estimator outputs as past poses; never reads ``frame.body``."""
    if estimator.skeleton != forecaster.skeleton or seq.skeleton != forecaster.skeleton:
        raise ConfigurationError("estimator, forecaster and sequence skeletons disagree")
    window = past_window(seq, t, forecaster.config.k)
    ke = estimator.config.k
    P = seq.positions()
    poses = []
    for fr in window:
        j = fr.frame_index
        lo = max(0, j - ke + 1)
        feat = provider(seq.frames[lo: j + 1])
        poses.append(estimator(P[None, lo: j + 1], feat[None])[0].data)
    j0 = window[0].frame_index
    tokens = build_forecast_tokens(np.stack(poses), P[j0: t + 1], seq.rotations()[j0: t + 1])
    return forecast(tokens, forecaster)


class SequenceForecaster:
    """Caches per-frame pseudo-groundtruth so many anchors on one sequence share estimator work.

    Produces exactly what :func:`end_to_end_infer` produces, since every
    frame's estimate depends only on its own past window.
    """

    def __init__(self, estimator: CurrentFrameModel | None, provider: VisualFeatureProvider | None,
                 forecaster: ForecastModel, use_ground_truth: bool = False):
        self.estimator = estimator
        self.provider = provider
        self.forecaster = forecaster
        self.use_ground_truth = use_ground_truth
        # id -> (sequence, tokens); holding the sequence keeps its id from being reused
        self._tokens: dict[int, tuple[PoseSequence, np.ndarray]] = {}

    def tokens(self, seq: PoseSequence) -> np.ndarray:
        key = id(seq)
        if key not in self._tokens:
            if self.use_ground_truth:
                poses = seq.bodies()
            else:
                poses = estimate_sequence(self.estimator, seq, self.provider)
            self._tokens[key] = (seq, sequence_tokens(seq, poses))
        return self._tokens[key][1]

    def __call__(self, seq: PoseSequence, t: int) -> ForecastOutput:
        k = self.forecaster.config.k
        toks = self.tokens(seq)
        return forecast(toks[max(0, t - k + 1): t + 1], self.forecaster)


def train_forecaster(
    dataset: Sequence[PoseSequence],
    estimator: CurrentFrameModel | None,
    provider: VisualFeatureProvider | None,
    config: ForecastConfig,
    weights: LossWeights | None = None,
    resume: TrainResult | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Adam on :func:`forecast_loss` over (past window -> next ``n`` frames) samples.

    Past tokens carry the frozen estimator's pseudo-groundtruth poses unless
    ``config.gt_past`` is set.  Sequences shorter than ``k + n`` are skipped.
    """
    config.validate()
    weights = weights or LossWeights()
    usable = []
    for s in dataset:
        if not s.has_body():
            raise DataError("training sequences need ground-truth body poses")
        if len(s) < config.k + config.n:
            log.warning("skipping sequence of %d frames (< k + n = %d)", len(s), config.k + config.n)
            continue
        usable.append(s)
    if not usable:
        raise DataError(f"no sequence is long enough for k + n = {config.k + config.n} frames")
    if not config.gt_past and (estimator is None or provider is None):
        raise ConfigurationError("pseudo-groundtruth training needs an estimator and a provider")
    skeleton = usable[0].skeleton

    past = [sequence_tokens(s, s.bodies() if config.gt_past else estimate_sequence(estimator, s, provider))
            for s in usable]
    futQ = [s.bodies() for s in usable]
    futP = [s.positions() for s in usable]
    futY = [canonicalize_quaternions(s.rotations()) for s in usable]
    lengths = np.array([len(s) for s in usable])
    n, k = config.n, config.k

    if resume is None:
        model = ForecastModel(config, skeleton)
        state = AdamState(lr=config.lr)
        trace: list[float] = []
    else:
        model, state, trace = resume.model, resume.state, list(resume.trace)
    params = model.named_parameters()

    for step in range(state.t, config.iterations):
        rng = np.random.default_rng([config.seed, 4, step])
        w = _batch_window(rng, k, config.warmup_prob)
        si, ti = _sample_anchors(rng, lengths, w - 1, n, config.batch_size)
        toks = np.stack([past[s][t - w + 1: t + 1] for s, t in zip(si, ti)])
        gt = ForecastOutput(
            np.stack([futQ[s][t + 1: t + 1 + n] for s, t in zip(si, ti)]),
            np.stack([futP[s][t + 1: t + 1 + n] for s, t in zip(si, ti)]),
            np.stack([futY[s][t + 1: t + 1 + n] for s, t in zip(si, ti)]),
        )
        loss = forecast_loss(model(toks), gt, weights)
        zero_grad(params.values())
        loss.backward()
        adam_step(params, state)
        trace.append(loss.item())
        if callback is not None:
            callback(step, trace[-1])
    return TrainResult(model, state, trace)
