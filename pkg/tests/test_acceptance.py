"""Exit criteria for the package.  Slow: trains desk-scale models (about ten minutes on one CPU core).

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
prints one PASS/FAIL line per criterion.
"""
import json
import math

import numpy as np
import pytest
from sklearn.isotonic import IsotonicRegression

from egocast import experiments
from egocast import tensor as T
from egocast.checkpoint import load_checkpoint
from egocast.cli import main
from egocast.config import RunConfig
from egocast.estimator import CurrentFrameModel, EstimatorConfig
from egocast.forecaster import ForecastConfig, ForecastModel, ForecastOutput, end_to_end_infer, forecast_loss
from egocast.gradcheck import finite_diff_check, module_grad_check
from egocast.metrics import HorizonCurve, auc, evaluate, mpjpe, per_joint_error, translated_gt_infer
from egocast.nn import AttentionParams, multi_head_self_attention
from egocast.pose import SKELETON_17, SKELETON_21
from egocast.providers import StoredFeatureProvider, attach_features, make_informative_provider
from egocast.seqio import ParseError, dumps_sequences, loads_sequences, read_sequences, write_sequences
from egocast.synth import GeneratorConfig, generate_dataset, generate_sequence

from factories import TINY_SKELETON, random_quaternion, random_sequence
from oracles import auc_loops, mpjpe_loops, per_joint_loops

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def acceptance(n, label):
    return pytest.mark.acceptance(n, label)


# ---------------------------------------------------------------------------
# 1. gradients
# ---------------------------------------------------------------------------
def _op_cases(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    w34, w32 = T.Tensor(rng.normal(size=(3, 4))), T.Tensor(rng.normal(size=(3, 2)))
    row = rng.normal(size=(1, 4))
    pos = np.abs(a) + 0.5
    g, beta = rng.normal(size=4), rng.normal(size=4)
    att = [rng.normal(size=(4, 4)) / 2 for _ in range(4)]
    tgt = a + rng.choice([-1, 1], size=a.shape) * rng.uniform(0.01, 1.0, size=a.shape)
    return {
        "add": (lambda t: T.tsum((t + T.Tensor(row)) * w34), a),
        "sub": (lambda t: T.tsum((T.Tensor(a) - t) * w34), row),
        "mul": (lambda t: T.tsum(t * T.Tensor(a) * w34), a),
        "div": (lambda t: T.tsum(w34 / t), pos),
        "sqrt": (lambda t: T.tsum(T.sqrt(t) * w34), pos),
        "tanh": (lambda t: T.tsum(T.tanh(t) * w34), a),
        "gelu": (lambda t: T.tsum(T.gelu(t) * w34), a),
        "matmul": (lambda t: T.tsum(T.tanh(T.matmul(t, T.Tensor(b))) * w32), a),
        "softmax": (lambda t: T.tsum(T.softmax(t, axis=-1) * w34), a),
        "layer_norm": (lambda t: T.tsum(T.layer_norm(t, T.Tensor(g), T.Tensor(beta)) * w34), a),
        "attention": (lambda t: T.tsum(multi_head_self_attention(t, AttentionParams(*map(T.Tensor, att)), 2) * w34), a),
        "mean_pool": (lambda t: T.tsum(T.tanh(T.mean_pool_tokens(t)) * T.Tensor(g)), a),
        "l1_loss": (lambda t: T.l1_loss(t, T.Tensor(tgt)), a),
        "reshape": (lambda t: T.tsum(T.reshape(t, (4, 3)) * T.Tensor(a.reshape(4, 3))), a),
        "transpose": (lambda t: T.tsum(T.transpose(t) * T.Tensor(a.T)), a),
        "getitem": (lambda t: T.tsum(t[[0, 2, 2], 1:] * T.Tensor(a[[0, 2, 2], 1:])), a),
        "concat": (lambda t: T.tsum(T.concat([t, t * 2.0], axis=1) * T.Tensor(np.hstack([a, a]))), a),
        "sum/mean": (lambda t: T.tsum(T.mean(t, axis=0) * T.Tensor(g)), a),
    }


@acceptance(1, "gradient suite: every op and both model paths, FD rel. err < 1e-4 (eps 1e-5)")
def test_criterion_1_gradients():
    import time

    start = time.perf_counter()
    worst = {}
    for seed in range(20):
        for name, (f, x) in _op_cases(np.random.default_rng(seed)).items():
            worst[name] = max(worst.get(name, 0.0), finite_diff_check(f, x, eps=1e-5))

    rng = np.random.default_rng(0)
    est = CurrentFrameModel(EstimatorConfig(k=3, d=8, layers=1, heads=2, head_hidden=8, visual_dim=4,
                                            skeleton="tiny2"), TINY_SKELETON)
    pos, feat, target = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 2, 3))
    worst["estimator path"] = max(module_grad_check(est, lambda: T.l1_loss(est(pos, feat), T.Tensor(target))).values())

    fc = ForecastModel(ForecastConfig(k=3, n=2, d=8, layers=1, heads=2, head_hidden=8, skeleton="tiny2"), TINY_SKELETON)
    toks = np.concatenate([rng.normal(size=(2, 3, 9)),
                           np.array([[random_quaternion(rng) for _ in range(3)] for _ in range(2)])], axis=-1)
    gt = ForecastOutput(rng.normal(size=(2, 2, 2, 3)), rng.normal(size=(2, 2, 3)),
                        np.array([[random_quaternion(rng) for _ in range(2)] for _ in range(2)]))
    worst["forecaster path"] = max(module_grad_check(fc, lambda: forecast_loss(fc(toks), gt)).values())
    elapsed = time.perf_counter() - start

    print("\n".join(f"  {k:16s} {v:.2e}" for k, v in worst.items()), f"\n  elapsed {elapsed:.1f}s")
    assert max(worst.values()) < 1e-4, worst
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 2-3. metrics
# ---------------------------------------------------------------------------
@acceptance(2, "metric oracles: worked examples and mean(per_joint) == mpjpe to 1e-12")
def test_criterion_2_metric_oracles():
    gt = np.zeros((1, 2, 3))
    pred = gt.copy()
    pred[0, 0] = [0.03, 0.04, 0.0]
    assert abs(mpjpe(pred, gt) - 2.5) <= 1e-12 and abs(mpjpe_loops(pred, gt) - 2.5) <= 1e-12
    assert np.max(np.abs(per_joint_error(pred, gt) - np.array([5.0, 0.0]))) <= 1e-12
    assert mpjpe(gt, gt) == 0.0
    assert abs(auc(HorizonCurve((0.5, 5.0), (10.0, 30.0))) - auc_loops([0.5, 5.0], [10.0, 30.0])) <= 1e-12

    rng = np.random.default_rng(2)
    for _ in range(100):
        f, J = rng.integers(1, 8), rng.integers(1, 22)
        p, g = rng.normal(size=(f, J, 3)), rng.normal(size=(f, J, 3))
        m = mpjpe(p, g)
        assert abs(per_joint_error(p, g).mean() - m) <= 1e-12
        assert abs(m - mpjpe_loops(p, g)) <= 1e-12
        assert np.max(np.abs(per_joint_error(p, g) - per_joint_loops(p, g))) <= 1e-12
        h = np.cumsum(rng.uniform(0.1, 2.0, size=rng.integers(2, 8)))
        v = rng.uniform(0, 50, size=h.size)
        assert abs(auc(HorizonCurve(tuple(h), tuple(v))) - auc_loops(list(h), list(v))) <= 1e-12


@acceptance(3, "AUC contract: flat c -> c exactly, (0.5,10)/(5,30) -> 20, domination -> strict order")
def test_criterion_3_auc_contract():
    rng = np.random.default_rng(3)
    for c in [0.0, 1.0, 7.25, 14.36, 1e-3, 123.456, *rng.uniform(0, 100, 20)]:
        assert auc(HorizonCurve((0.5, 1.0, 2.0, 3.0, 4.0, 5.0), (float(c),) * 6)) == c
    assert auc(HorizonCurve((0.5, 5.0), (10.0, 30.0))) == 20.0
    H = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
    for _ in range(100):
        lo = rng.uniform(0, 60, size=6)
        hi = lo + rng.uniform(0, 10, size=6) * (rng.random(6) < 0.5)
        hi[rng.integers(6)] += rng.uniform(1e-3, 5.0)
        assert auc(HorizonCurve(H, tuple(lo))) < auc(HorizonCurve(H, tuple(hi)))


# ---------------------------------------------------------------------------
# 4. oracle alignment
# ---------------------------------------------------------------------------
@acceptance(4, "oracle alignment zeroes per-frame translation errors on 20 synthetic sequences")
def test_criterion_4_oracle_alignment():
    H = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
    archetypes = ["stand", "walk", "reach"]
    for i in range(20):
        sk = SKELETON_17 if i % 2 else SKELETON_21
        seq = generate_sequence(archetypes[i % 3], sk, 7.0, 1000 + i)
        infer = translated_gt_infer(150, seed=i)
        raw = evaluate(infer, [seq], H, stride=20)
        ora = evaluate(infer, [seq], H, stride=20, oracle=True)
        assert min(raw.curve.values) > 0
        assert max(ora.curve.values) <= 1e-9


# ---------------------------------------------------------------------------
# 5. warm-up
# ---------------------------------------------------------------------------
@acceptance(5, "warm-up: end_to_end_infer finite for t in {0, 1, k-1, k, k+5}")
def test_criterion_5_warm_up():
    k = 20
    seq = generate_sequence("walk", SKELETON_17, 3.0, 5)
    est = CurrentFrameModel(EstimatorConfig(k=k, d=16, layers=1, heads=2, head_hidden=32, visual_dim=16))
    fc = ForecastModel(ForecastConfig(k=k, n=30, d=16, layers=1, heads=2, head_hidden=32))
    # features precomputed, ground truth stripped: the chain cannot read body poses
    blind = attach_features(seq, make_informative_provider(SKELETON_17, 16, 0.05, 0), k)
    assert not blind.has_body()
    for t in (0, 1, k - 1, k, k + 5):
        out = end_to_end_infer(blind, t, est, StoredFeatureProvider(16), fc)
        assert out.Q.shape == (30, 17, 3)
        assert all(np.all(np.isfinite(x)) for x in (out.Q, out.P, out.Y))


# ---------------------------------------------------------------------------
# 6. training sanity (desk-scale defaults, via the CLI)
# ---------------------------------------------------------------------------
def overfit_set():
    plan = ["walk"] * 4 + ["stand"] * 3 + ["reach"] * 3
    return [generate_sequence(a, SKELETON_17, 6.0, 500 + i) for i, a in enumerate(plan)]


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """Default-config estimator + forecaster trained on a 10-sequence overfit set through the CLI."""
    root = tmp_path_factory.mktemp("overfit")
    write_sequences(root / "train.jsonl", overfit_set())
    common = ["--seed", "11", "--train-data", str(root / "train.jsonl"), "--run-dir", str(root / "run")]
    assert main(["train-current", *common]) == 0
    assert main(["train-forecast", *common]) == 0
    return root


def _loss_ratio(trace):
    # smoothed final loss (last 50 iterations) over the loss at initialization
    return float(np.mean(trace[-50:]) / trace[0])


@acceptance(6, "training sanity: both commands reach <= 10% of initial loss; same seed -> identical checkpoints")
def test_criterion_6_training_sanity(trained_run, tmp_path):
    run = trained_run / "run"
    est = load_checkpoint(run / "estimator.ckpt", kind="estimator")
    fc = load_checkpoint(run / "forecaster.ckpt", kind="forecaster")
    assert est.config["iterations"] == fc.config["iterations"] == 2000 and est.config["d"] == 64
    ratios = {"estimator": _loss_ratio(est.extra["loss_trace"]), "forecaster": _loss_ratio(fc.extra["loss_trace"])}
    print(f"\n  final/initial loss: {ratios}")
    assert ratios["estimator"] <= 0.10 and ratios["forecaster"] <= 0.10

    # determinism: two runs with the same seed and a short budget give identical bytes
    data = trained_run / "train.jsonl"
    blobs = []
    for name in ("a", "b"):
        args = ["--seed", "11", "--train-data", str(data), "--run-dir", str(tmp_path / name), "--iterations", "40"]
        assert main(["train-current", *args]) == 0
        assert main(["train-forecast", *args]) == 0
        blobs.append(((tmp_path / name / "estimator.ckpt").read_bytes(),
                      (tmp_path / name / "forecaster.ckpt").read_bytes()))
    assert blobs[0] == blobs[1]


# ---------------------------------------------------------------------------
# 7. visual-cue trend
# ---------------------------------------------------------------------------
@acceptance(7, "visual cue: informative provider >= 10% lower held-out MPJPE than null in >= 4 of 5 seeds")
def test_criterion_7_visual_trend(tmp_path):
    wins, table = 0, []
    for seed in range(5):
        cfg = RunConfig(seed=seed, run_dir=str(tmp_path / f"s{seed}"))
        cfg.generator = GeneratorConfig(sequences_per_archetype=4, test_sequences_per_archetype=2, duration_s=10.0)
        cfg.estimator.iterations = 300
        cfg.estimator.lr = 1e-3
        cfg.finalize()
        ds = generate_dataset(cfg.generator)
        rows = dict((arm, err) for arm, err, _ in experiments.ablate_visual(cfg, ds.train, ds.test))
        table.append((seed, rows["informative"], rows["null"]))
        wins += rows["informative"] <= 0.9 * rows["null"]
    print("\n" + "\n".join(f"  seed {s}: informative {a:.2f} cm, null {b:.2f} cm" for s, a, b in table))
    assert wins >= 4


# ---------------------------------------------------------------------------
# 8. horizon-curve trend
# ---------------------------------------------------------------------------
@acceptance(8, "horizon curve: trained forecaster error at 5 s > 0.5 s; isotonic fit within 5%")
def test_criterion_8_horizon_trend(trained_run):
    cfg = RunConfig(seed=11, run_dir=str(trained_run / "run")).finalize()
    estimator, provider = experiments.load_estimator(cfg)
    forecaster = experiments.load_forecaster(cfg)
    walks = [generate_sequence("walk", SKELETON_17, 10.0, 9000 + i) for i in range(6)]
    predictor = experiments.ChainedPredictor(estimator, provider, forecaster)
    H = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
    values = np.array(evaluate(predictor, walks, H, stride=15).curve.values)
    fitted = IsotonicRegression(increasing=True).fit_transform(np.array(H), values)
    print(f"\n  curve {np.round(values, 2).tolist()}\n  isotonic {np.round(fitted, 2).tolist()}")
    assert values[-1] > values[0]
    assert np.all(np.abs(values - fitted) <= 0.05 * fitted)


# ---------------------------------------------------------------------------
# 9. window ablation grid
# ---------------------------------------------------------------------------
@acceptance(9, "ablate-window over k in {5,10,20,40}: 4-row table, deterministic")
def test_criterion_9_ablate_window(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = {"generator": {"sequences_per_archetype": 1, "test_sequences_per_archetype": 1, "duration_s": 8.0},
           "estimator": {"iterations": 30, "lr": 1e-3}, "forecaster": {"iterations": 15, "lr": 1e-3}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["generate", "--seed", "7", "--config", "cfg.json"]) == 0
    tables = []
    for name in ("a", "b"):
        assert main(["ablate-window", "--seed", "7", "--config", "cfg.json", "--run-dir", name,
                     "--k-list", "5,10,20,40"]) == 0
        tables.append((tmp_path / name / "ablate_window.csv").read_text())
    lines = tables[0].strip().splitlines()
    assert lines[0] == "k,mpjpe_1s_cm,auc_cm"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["5", "10", "20", "40"]
    assert all(math.isfinite(float(x)) for ln in lines[1:] for x in ln.split(",")[1:])
    assert tables[0] == tables[1]


# ---------------------------------------------------------------------------
# 10. data format
# ---------------------------------------------------------------------------
@acceptance(10, "data format: 1000 random frames round-trip byte-identical; malformed lines reported by number")
def test_criterion_10_data_format(tmp_path):
    rng = np.random.default_rng(10)
    seqs = [random_sequence(rng, SKELETON_17, 400, body_prob=0.9, feature_dim=4),
            random_sequence(rng, SKELETON_17, 600, body_prob=0.7)]
    assert sum(len(s) for s in seqs) == 1000
    write_sequences(tmp_path / "a.jsonl", seqs)
    write_sequences(tmp_path / "b.jsonl", read_sequences(tmp_path / "a.jsonl"))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    lines = dumps_sequences(seqs[:1]).splitlines()
    bad_unit = json.loads(lines[10])
    bad_unit["y"] = [0.5, 0.5, 0.5, 0.4]
    cases = {
        7: "{truncated",
        10: json.dumps(bad_unit),
        12: json.dumps({"i": 11, "t": 0.3, "p": [0, 0], "y": [1, 0, 0, 0], "q": None}),
        15: json.dumps({"i": 99, "t": 0.5, "p": [0, 0, 0], "y": [1, 0, 0, 0], "q": None}),
    }
    for lineno, text in cases.items():
        broken = list(lines)
        broken[lineno - 1] = text
        with pytest.raises(ParseError) as exc:
            loads_sequences("\n".join(broken))
        assert exc.value.lineno == lineno and str(exc.value).startswith(f"line {lineno}:")
