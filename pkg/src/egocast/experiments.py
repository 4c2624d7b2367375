"""Orchestration behind the CLI: data generation, training, evaluation, ablations.

Every function takes a finalized :class:`RunConfig` and writes its outputs
under ``config.run_dir``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from egocast import plots
from egocast.checkpoint import Checkpoint, CheckpointError, load_checkpoint, make_checkpoint
from egocast.config import RunConfig
from egocast.estimator import CurrentFrameModel, EstimatorConfig, TrainResult, estimate_sequence, train_current_module
from egocast.forecaster import ForecastConfig, ForecastModel, LossWeights, SequenceForecaster, train_forecaster
from egocast.metrics import (
    EvalReport,
    evaluate,
    ground_truth_infer,
    last_pose_infer,
    mpjpe,
    per_joint_error,
    translated_gt_infer,
)
from egocast.pose import PoseSequence, get_skeleton
from egocast.providers import (
    StoredFeatureProvider,
    VisualFeatureProvider,
    attach_features,
    make_informative_provider,
    make_null_provider,
    provider_from_json,
)
from egocast.seqio import read_sequences, write_sequences
from egocast.synth import DataError, generate_dataset
from egocast.tensor import ConfigurationError

log = logging.getLogger(__name__)

ESTIMATOR_CKPT = "estimator.ckpt"
# training-only fields (schedule, init seed); they do not change the architecture
SCHEDULE_KEYS = ("iterations", "lr", "batch_size", "warmup_prob", "seed")
FORECASTER_CKPT = "forecaster.ckpt"


def run_path(cfg: RunConfig, name: str) -> Path:
    p = Path(cfg.run_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p / name


def write_config_echo(cfg: RunConfig, name: str = "config.json") -> Path:
    path = run_path(cfg, name)
    path.write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def write_rows(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return Path(path)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------
def generate(cfg: RunConfig) -> tuple[Path, Path]:
    ds = generate_dataset(cfg.generator)
    train, test = Path(cfg.data.train), Path(cfg.data.test)
    for p in (train, test):
        p.parent.mkdir(parents=True, exist_ok=True)
    write_sequences(train, ds.train)
    write_sequences(test, ds.test)
    return train, test


def load_split(path: str | Path) -> list[PoseSequence]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    seqs = read_sequences(path)
    if not seqs:
        raise DataError(f"{path} contains no sequences")
    return seqs


# ---------------------------------------------------------------------------
# providers / models
# ---------------------------------------------------------------------------
def make_provider(cfg: RunConfig, kind: str | None = None) -> VisualFeatureProvider:
    kind = kind or cfg.provider.kind
    dim = cfg.estimator.visual_dim
    if kind == "null":
        return make_null_provider(dim)
    return make_informative_provider(cfg.skeleton, dim, cfg.provider.noise_sigma, cfg.seed,
                                     frame=cfg.provider.frame)


def _trace_extra(trace: Sequence[float]) -> dict:
    return {"loss_trace": [float(x) for x in trace]}


def _resume_result(ckpt: Checkpoint, model, lr: float) -> TrainResult:
    model.load_state_dict(ckpt.params())
    return TrainResult(model, ckpt.adam_state(lr), list(ckpt.extra.get("loss_trace", [])))


def _check_resume_config(ckpt: Checkpoint, config: dict) -> None:
    a = {k: v for k, v in ckpt.config.items() if k != "iterations"}
    b = {k: v for k, v in json.loads(json.dumps(config)).items() if k != "iterations"}
    if a != b:
        diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
        raise CheckpointError(f"cannot resume: checkpoint config differs in {diff}")


def train_current(cfg: RunConfig, resume: bool = False, provider_kind: str | None = None,
                  data: Sequence[PoseSequence] | None = None, ckpt_name: str = ESTIMATOR_CKPT) -> TrainResult:
    train = list(data) if data is not None else load_split(cfg.data.train)
    provider = make_provider(cfg, provider_kind)
    ecfg = cfg.estimator
    previous = None
    if resume:
        ckpt = load_checkpoint(run_path(cfg, ckpt_name), kind="estimator")
        _check_resume_config(ckpt, ecfg.to_json())
        previous = _resume_result(ckpt, CurrentFrameModel(ecfg, get_skeleton(cfg.skeleton)), ecfg.lr)
    result = train_current_module(train, provider, ecfg, resume=previous)
    ckpt = make_checkpoint("estimator", ecfg.to_json(), result.model, result.state,
                           extra={"provider": provider.to_json(), **_trace_extra(result.trace)})
    ckpt.save(run_path(cfg, ckpt_name))
    stem = Path(ckpt_name).stem
    write_rows(run_path(cfg, f"loss_{stem}.csv"), ["iteration", "loss"], list(enumerate(result.trace)))
    plots.plot_loss_trace(result.trace, run_path(cfg, f"loss_{stem}.png"))
    return result


def load_estimator(cfg: RunConfig, ckpt_name: str = ESTIMATOR_CKPT) -> tuple[CurrentFrameModel, VisualFeatureProvider]:
    path = run_path(cfg, ckpt_name)
    if not path.exists():
        raise CheckpointError(f"estimator checkpoint not found: {path} (run train-current first)")
    ckpt = load_checkpoint(path, kind="estimator", expected_config=cfg.estimator.to_json(), ignore=SCHEDULE_KEYS)
    model = CurrentFrameModel(EstimatorConfig(**ckpt.config), get_skeleton(cfg.skeleton))
    model.load_state_dict(ckpt.params())
    return model, provider_from_json(ckpt.extra["provider"], cfg.skeleton)


def train_forecast(cfg: RunConfig, resume: bool = False, data: Sequence[PoseSequence] | None = None,
                   estimator=None, provider=None, ckpt_name: str = FORECASTER_CKPT) -> TrainResult:
    train = list(data) if data is not None else load_split(cfg.data.train)
    fcfg = cfg.forecaster
    if not fcfg.gt_past and estimator is None:
        estimator, provider = load_estimator(cfg)
    previous = None
    if resume:
        ckpt = load_checkpoint(run_path(cfg, ckpt_name), kind="forecaster")
        _check_resume_config(ckpt, fcfg.to_json())
        previous = _resume_result(ckpt, ForecastModel(fcfg, get_skeleton(cfg.skeleton)), fcfg.lr)
    result = train_forecaster(train, estimator, provider, fcfg, cfg.loss_weights, resume=previous)
    weights = {"pose": cfg.loss_weights.pose, "translation": cfg.loss_weights.translation,
               "rotation": cfg.loss_weights.rotation}
    ckpt = make_checkpoint("forecaster", fcfg.to_json(), result.model, result.state,
                           extra={"loss_weights": weights, **_trace_extra(result.trace)})
    ckpt.save(run_path(cfg, ckpt_name))
    stem = Path(ckpt_name).stem
    write_rows(run_path(cfg, f"loss_{stem}.csv"), ["iteration", "loss"], list(enumerate(result.trace)))
    plots.plot_loss_trace(result.trace, run_path(cfg, f"loss_{stem}.png"))
    return result


def load_forecaster(cfg: RunConfig, ckpt_name: str = FORECASTER_CKPT) -> ForecastModel:
    path = run_path(cfg, ckpt_name)
    if not path.exists():
        raise CheckpointError(f"forecaster checkpoint not found: {path} (run train-forecast first)")
    ckpt = load_checkpoint(path, kind="forecaster", expected_config=cfg.forecaster.to_json(),
                           ignore=SCHEDULE_KEYS)
    model = ForecastModel(ForecastConfig(**ckpt.config), get_skeleton(cfg.skeleton))
    model.load_state_dict(ckpt.params())
    return model


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
class ChainedPredictor:
    """Estimator -> forecaster inference that never sees ground-truth poses.

    Visual features are computed once per sequence and stored on a copy whose
    body poses are removed; the chain then runs on that copy only.
    """

    def __init__(self, estimator, provider, forecaster, use_ground_truth: bool = False):
        self._blind: dict[int, tuple[PoseSequence, PoseSequence]] = {}   # id -> (original, blind copy)
        self._provider = provider
        self._k = estimator.config.k if estimator is not None else 1
        stored = StoredFeatureProvider(provider.dim) if provider is not None else None
        self._use_gt = use_ground_truth
        self._inner = SequenceForecaster(estimator, stored, forecaster, use_ground_truth)

    def __call__(self, seq: PoseSequence, t: int):
        if self._use_gt:
            return self._inner(seq, t)
        key = id(seq)
        if key not in self._blind:
            self._blind[key] = (seq, attach_features(seq, self._provider, self._k, withhold_body=True))
        return self._inner(self._blind[key][1], t)


def make_predictor(cfg: RunConfig, predictor: str, gt_past: bool = False):
    n = cfg.forecaster.n
    if predictor == "groundtruth":
        return ground_truth_infer(n)
    if predictor == "translated":
        return translated_gt_infer(n, seed=cfg.seed)
    if predictor == "last-pose":
        return last_pose_infer(n)
    if predictor == "model":
        forecaster = load_forecaster(cfg)
        if gt_past:
            return ChainedPredictor(None, None, forecaster, use_ground_truth=True)
        estimator, provider = load_estimator(cfg)
        return ChainedPredictor(estimator, provider, forecaster)
    raise ConfigurationError(f"unknown predictor {predictor!r}")


def run_eval(cfg: RunConfig, predictor: str = "model", oracle: bool = False, gt_past: bool = False,
             data: Sequence[PoseSequence] | None = None, infer_fn=None) -> dict[str, EvalReport]:
    test = list(data) if data is not None else load_split(cfg.data.test)
    infer = infer_fn or make_predictor(cfg, predictor, gt_past)
    m = cfg.metrics
    need = int(round(max(m.horizons) * m.fps))
    if cfg.forecaster.n < need and predictor == "model":
        raise ConfigurationError(f"forecaster emits {cfg.forecaster.n} frames; horizons need {need}")
    reports = {"raw": evaluate(infer, test, m.horizons, m.fps, m.anchor_stride)}
    if oracle:
        reports["oracle"] = evaluate(infer, test, m.horizons, m.fps, m.anchor_stride, oracle=True)
    out = Path(cfg.run_dir)
    curves = {}
    for tag, rep in reports.items():
        prefix = "" if tag == "raw" else "oracle_"
        rep.write(out, prefix)
        plots.plot_per_joint(rep.per_joint, out / f"{prefix}per_joint.png")
        curves[tag] = rep.curve
    plots.plot_horizon_curves(curves, out / "curves.png")
    return reports


def current_frame_errors(estimator: CurrentFrameModel, provider: VisualFeatureProvider,
                         seqs: Sequence[PoseSequence]) -> tuple[float, np.ndarray]:
    """Held-out current-frame MPJPE (cm) and per-joint errors over every frame."""
    preds, gts = [], []
    for s in seqs:
        preds.append(estimate_sequence(estimator, s, provider))
        gts.append(s.bodies())
    pred, gt = np.concatenate(preds), np.concatenate(gts)
    return mpjpe(pred, gt), per_joint_error(pred, gt)


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------
def ablate_window(cfg: RunConfig, k_list: Sequence[int], horizon: float = 1.0,
                  train: Sequence[PoseSequence] | None = None,
                  test: Sequence[PoseSequence] | None = None) -> list[tuple]:
    """One forecaster per past-window length; rows ``(k, mpjpe_cm at horizon, auc_cm)``."""
    if not k_list:
        raise ConfigurationError("k_list is empty")
    train = list(train) if train is not None else load_split(cfg.data.train)
    test = list(test) if test is not None else load_split(cfg.data.test)
    est_ckpt = run_path(cfg, ESTIMATOR_CKPT)
    if cfg.forecaster.gt_past:
        estimator = provider = None
    elif est_ckpt.exists():
        estimator, provider = load_estimator(cfg)
    else:
        res = train_current(cfg, data=train)
        estimator, provider = res.model, make_provider(cfg)

    m = cfg.metrics
    horizons = tuple(sorted(set(m.horizons) | {float(horizon)}))
    rows = []
    for k in k_list:
        fcfg = replace(cfg.forecaster, k=int(k))
        sub = replace(cfg, forecaster=fcfg)
        res = train_forecast(sub, data=train, estimator=estimator, provider=provider,
                             ckpt_name=f"forecaster_k{k}.ckpt")
        infer = ChainedPredictor(estimator, provider, res.model, use_ground_truth=fcfg.gt_past)
        rep = evaluate(infer, test, horizons, m.fps, m.anchor_stride)
        rows.append((int(k), rep.curve.at(horizon), rep.auc))
        log.info("k=%d: %.3f cm at %.1fs", k, rows[-1][1], horizon)
    write_rows(run_path(cfg, "ablate_window.csv"), ["k", f"mpjpe_{horizon:g}s_cm", "auc_cm"], rows)
    plots.plot_bars([r[0] for r in rows], [r[1] for r in rows], run_path(cfg, "ablate_window.png"),
                    f"MPJPE at {horizon:g} s [cm]")
    return rows


def ablate_visual(cfg: RunConfig, train: Sequence[PoseSequence] | None = None,
                  test: Sequence[PoseSequence] | None = None) -> list[tuple]:
    """Train the current-frame module with the informative and the null provider on identical data."""
    train = list(train) if train is not None else load_split(cfg.data.train)
    test = list(test) if test is not None else load_split(cfg.data.test)
    rows = []
    joint_rows = {}
    for arm in ("informative", "null"):
        res = train_current(cfg, provider_kind=arm, data=train, ckpt_name=f"estimator_{arm}.ckpt")
        err, per_joint = current_frame_errors(res.model, make_provider(cfg, arm), test)
        rows.append((arm, err, float(np.mean(res.trace[-max(1, len(res.trace) // 20):]))))
        joint_rows[arm] = per_joint
    write_rows(run_path(cfg, "ablate_visual.csv"), ["arm", "mpjpe_cm", "final_train_loss"], rows)
    sk = get_skeleton(cfg.skeleton)
    write_rows(run_path(cfg, "ablate_visual_per_joint.csv"), ["joint", "informative_cm", "null_cm"],
               [(j, float(joint_rows["informative"][i]), float(joint_rows["null"][i]))
                for i, j in enumerate(sk.joints)])
    plots.plot_bars([r[0] for r in rows], [r[1] for r in rows], run_path(cfg, "ablate_visual.png"),
                    "current-frame MPJPE [cm]")
    return rows
