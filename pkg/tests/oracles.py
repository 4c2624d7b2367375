"""Independent reference computations used by the tests.

These are deliberately naive (explicit loops, no shared code with the
package) so that agreement means something.
"""
import math

import numpy as np


def matmul_loops(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = sum(a[i, r] * b[r, j] for r in range(a.shape[1]))
    return out


def softmax_row(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def attention_loops(x, wq, wk, wv, wo, heads):
    """Per-token, per-head attention written out with Python loops."""
    x = np.asarray(x, float)
    k, d = x.shape
    dh = d // heads
    q, kk, v = x @ wq, x @ wk, x @ wv
    ctx = np.zeros((k, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(k):
            scores = [float(np.dot(q[i, sl], kk[j, sl])) / math.sqrt(dh) for j in range(k)]
            w = softmax_row(scores)
            for j in range(k):
                ctx[i, sl] += w[j] * v[j, sl]
    return ctx @ wo


def mpjpe_loops(pred, gt):
    """MPJPE in cm: mean over frames and joints of Euclidean distance."""
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    total, count = 0.0, 0
    for f in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            total += math.sqrt(sum((pred[f, j, c] - gt[f, j, c]) ** 2 for c in range(3)))
            count += 1
    return 100.0 * total / count


def per_joint_loops(pred, gt):
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    out = []
    for j in range(pred.shape[1]):
        d = [math.sqrt(sum((pred[f, j, c] - gt[f, j, c]) ** 2 for c in range(3))) for f in range(pred.shape[0])]
        out.append(100.0 * sum(d) / len(d))
    return out


def auc_loops(horizons, values):
    """Trapezoid rule on minmax-normalized horizons."""
    lo, hi = horizons[0], horizons[-1]
    x = [(h - lo) / (hi - lo) for h in horizons]
    return sum((x[i + 1] - x[i]) * (values[i] + values[i + 1]) / 2.0 for i in range(len(x) - 1))
