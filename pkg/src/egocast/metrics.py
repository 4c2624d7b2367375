"""Evaluation protocol: MPJPE, per-joint error, horizon curves, normalised AUC, oracle alignment.

All errors are reported in centimeters.  No alignment of any kind is applied
unless :func:`oracle_align` is requested explicitly.
"""
from __future__ import annotations

import csv
import json
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from egocast.forecaster import ForecastOutput
from egocast.pose import PoseSequence, SkeletonSpec, derive_root
from egocast.synth import DataError
from egocast.tensor import ContractError

DEFAULT_HORIZONS = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    if pred.ndim < 2 or pred.shape[-1] != 3:
        raise ContractError(f"poses must be [..., J, 3], got {pred.shape}")
    return pred, gt


def mpjpe(pred, gt) -> float:
    """Mean per-joint Euclidean distance in cm over all frames and joints."""
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * 100.0)


def per_joint_error(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    d = np.linalg.norm(pred - gt, axis=-1) * 100.0
    return d.reshape(-1, d.shape[-1]).mean(axis=0)


@dataclass(frozen=True)
class HorizonCurve:
    horizons: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        h = np.asarray(self.horizons, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if h.shape != v.shape or h.ndim != 1:
            raise ContractError("horizons and values must be 1-D and equally long")
        if np.any(np.diff(h) <= 0):
            raise ContractError("horizons must be strictly increasing")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ContractError("curve values must be finite and non-negative")
        object.__setattr__(self, "horizons", tuple(float(x) for x in h))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    def at(self, horizon: float) -> float:
        return self.values[self.horizons.index(float(horizon))]


def auc(curve: HorizonCurve) -> float:
    """Trapezoidal area under the curve after minmax-normalising the horizon axis to [0, 1].

    The result keeps the curve's unit (cm); a flat curve at ``c`` has area ``c``.
    """
    if len(curve.horizons) < 2:
        raise ContractError("AUC needs at least two horizons")
    h = np.asarray(curve.horizons)
    x = (h - h[0]) / (h[-1] - h[0])
    y = np.asarray(curve.values)
    # integrate relative to the first value (the widths sum to 1) so a flat curve is exact in floating point
    r = y - y[0]
    return float(y[0] + np.sum((x[1:] - x[:-1]) * (r[1:] + r[:-1]) / 2.0))


def horizon_offsets(horizons: Sequence[float], fps: float = 30.0) -> list[int]:
    """Future-frame offsets ``round(h * fps)``; the forecast row for ``h`` is ``offset - 1``."""
    return [int(round(h * fps)) for h in horizons]


def oracle_align(pred: ForecastOutput, gt_poses, skeleton: SkeletonSpec) -> ForecastOutput:
    """Translate each predicted frame so its root coincides with the ground-truth root."""
    Q = np.asarray(pred.Q, dtype=np.float64)
    if gt_poses is None or any(g is None for g in gt_poses):
        raise ContractError("oracle alignment needs ground truth for every predicted frame")
    gt = np.asarray(gt_poses, dtype=np.float64)
    if gt.shape != Q.shape:
        raise ContractError(f"ground truth {gt.shape} does not cover prediction {Q.shape}")
    shift = derive_root(gt, skeleton) - derive_root(Q, skeleton)
    return ForecastOutput(Q + shift[..., None, :], np.asarray(pred.P).copy(), np.asarray(pred.Y).copy())


@dataclass
class SequenceResult:
    index: int
    activity: str | None
    anchors: int
    errors: np.ndarray          # [anchors, H] cm
    joint_sums: np.ndarray      # [J] summed cm over anchors x horizons

    @property
    def curve_values(self) -> np.ndarray:
        return self.errors.mean(axis=0)


@dataclass
class EvalReport:
    horizons: tuple[float, ...]
    curve: HorizonCurve
    auc: float
    per_sequence: list[dict] = field(default_factory=list)
    per_activity: dict[str, dict] = field(default_factory=dict)
    per_joint: dict[str, float] = field(default_factory=dict)
    oracle: bool = False
    anchors: int = 0

    def to_json(self) -> dict:
        return {
            "horizons_s": list(self.horizons),
            "mpjpe_cm": list(self.curve.values),
            "auc_cm": self.auc,
            "oracle": self.oracle,
            "anchors": self.anchors,
            "per_activity": self.per_activity,
            "per_joint_cm": self.per_joint,
            "per_sequence": self.per_sequence,
        }

    def write(self, out_dir, prefix: str = "") -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "curves": out_dir / f"{prefix}curves.csv",
            "report": out_dir / f"{prefix}report.json",
            "per_joint": out_dir / f"{prefix}per_joint.csv",
        }
        write_curve_csv(paths["curves"], self.curve)
        paths["report"].write_text(json.dumps(self.to_json(), indent=2) + "\n")
        with open(paths["per_joint"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["joint", "mpjpe_cm"])
            for name, v in self.per_joint.items():
                w.writerow([name, repr(v)])
        return paths


def write_curve_csv(path, curve: HorizonCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon_s", "mpjpe_cm"])
        for h, v in zip(curve.horizons, curve.values):
            w.writerow([repr(h), repr(v)])


def read_curve_csv(path) -> HorizonCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return HorizonCurve(tuple(float(r["horizon_s"]) for r in rows), tuple(float(r["mpjpe_cm"]) for r in rows))


InferFn = Callable[[PoseSequence, int], ForecastOutput]


def _anchor_times(seq: PoseSequence, max_offset: int, stride: int, start: int) -> list[int]:
    return list(range(start, len(seq) - max_offset, stride))


def _evaluate_sequence(i, seq, infer_fn, offsets, stride, start, oracle) -> SequenceResult:
    gt_all = seq.bodies()
    anchors = _anchor_times(seq, max(offsets), stride, start)
    rows = np.asarray(offsets) - 1
    errs = np.zeros((len(anchors), len(offsets)))
    joint_sums = np.zeros(seq.skeleton.J)
    for a, t in enumerate(anchors):
        out = infer_fn(seq, t)
        Q = np.asarray(out.Q)
        if Q.shape[0] < max(offsets):
            raise ContractError(f"forecast covers {Q.shape[0]} frames; horizon needs {max(offsets)}")
        gt = gt_all[t + np.asarray(offsets)]
        pred = ForecastOutput(Q[rows], np.asarray(out.P)[rows], np.asarray(out.Y)[rows])
        if oracle:
            pred = oracle_align(pred, gt, seq.skeleton)
        dist = np.linalg.norm(pred.Q - gt, axis=-1) * 100.0     # [H, J]
        errs[a] = dist.mean(axis=-1)
        joint_sums += dist.sum(axis=0)
    return SequenceResult(i, seq.activity_label, len(anchors), errs, joint_sums)


def evaluate(
    infer_fn: InferFn,
    eval_set: Sequence[PoseSequence],
    horizons: Sequence[float] = DEFAULT_HORIZONS,
    fps: float = 30.0,
    stride: int = 30,
    oracle: bool = False,
    start: int = 0,
    threads: int | None = None,
) -> EvalReport:
    """Run ``infer_fn`` at every anchor and reduce to per-horizon MPJPE.

    Anchors are ``start, start + stride, ...`` while ground truth exists at the
    furthest horizon.  Sequences are evaluated independently (optionally on
    ``threads`` workers, default ``$EGOCAST_THREADS`` or 1) and reduced in
    input order, so results do not depend on the thread count.
    """
    if not horizons:
        raise ContractError("no horizons requested")
    offsets = horizon_offsets(horizons, fps)
    if min(offsets) < 1:
        raise ContractError("every horizon must be at least one frame ahead")
    threads = threads or int(os.environ.get("EGOCAST_THREADS", "1") or 1)

    def job(args):
        i, seq = args
        return _evaluate_sequence(i, seq, infer_fn, offsets, stride, start, oracle)

    items = list(enumerate(eval_set))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, items))
    else:
        results = [job(it) for it in items]
    results = [r for r in results if r.anchors]
    if not results:
        raise DataError("no evaluation anchor has ground truth at every horizon")

    all_errs = np.concatenate([r.errors for r in results])
    total = all_errs.shape[0]
    curve = HorizonCurve(tuple(horizons), tuple(all_errs.mean(axis=0)))
    skeleton = eval_set[results[0].index].skeleton
    joints = sum(r.joint_sums for r in results) / (total * len(offsets))

    by_act: dict[str, list[SequenceResult]] = defaultdict(list)
    for r in results:
        by_act[r.activity or "unlabeled"].append(r)
    per_activity = {}
    for act, rs in sorted(by_act.items()):
        e = np.concatenate([r.errors for r in rs])
        c = HorizonCurve(tuple(horizons), tuple(e.mean(axis=0)))
        per_activity[act] = {"anchors": int(e.shape[0]), "mpjpe_cm": list(c.values),
                             "auc_cm": auc(c) if len(horizons) > 1 else c.values[0]}

    return EvalReport(
        horizons=tuple(horizons),
        curve=curve,
        auc=auc(curve) if len(horizons) > 1 else curve.values[0],
        per_sequence=[{"index": r.index, "activity": r.activity, "anchors": r.anchors,
                       "mpjpe_cm": r.curve_values.tolist()} for r in results],
        per_activity=per_activity,
        per_joint={name: float(v) for name, v in zip(skeleton.joints, joints)},
        oracle=oracle,
        anchors=total,
    )


def horizon_curve(infer_fn: InferFn, eval_set: Sequence[PoseSequence],
                  horizons: Sequence[float] = DEFAULT_HORIZONS, fps: float = 30.0,
                  stride: int = 30, oracle: bool = False) -> HorizonCurve:
    return evaluate(infer_fn, eval_set, horizons, fps, stride, oracle).curve


def ground_truth_infer(n: int) -> InferFn:
    """Predictor that returns the true future (a perfect oracle)."""

    def infer(seq: PoseSequence, t: int) -> ForecastOutput:
        Q = seq.bodies()
        P, Y = seq.positions(), seq.rotations()
        sl = slice(t + 1, t + 1 + n)
        if Q[sl].shape[0] < n:
            raise ContractError("ground truth ends before the forecast horizon")
        return ForecastOutput(Q[sl].copy(), P[sl].copy(), Y[sl].copy())

    return infer


def last_pose_infer(n: int) -> InferFn:
    """Constant baseline: repeat the pose, position and rotation seen at ``t``."""

    def infer(seq: PoseSequence, t: int) -> ForecastOutput:
        q = seq.bodies()[t]
        return ForecastOutput(np.repeat(q[None], n, 0), np.repeat(seq.positions()[t][None], n, 0),
                              np.repeat(seq.rotations()[t][None], n, 0))

    return infer


def translated_gt_infer(n: int, seed: int = 0, scale: float = 0.5) -> InferFn:
    """Ground truth plus a random rigid translation per future frame (pose shape intact)."""
    base = ground_truth_infer(n)

    def infer(seq: PoseSequence, t: int) -> ForecastOutput:
        out = base(seq, t)
        rng = np.random.default_rng([seed, t, len(seq)])
        drift = rng.normal(0.0, scale, size=(n, 1, 3))
        return ForecastOutput(out.Q + drift, out.P + drift[:, 0], out.Y)

    return infer
