"""Independent reference implementations used by the tests.

None of these call into the package; they are deliberately naive.
"""

import itertools
import math

import numpy as np

from mlenit.sdnn import Architecture, Layer, init_params

LD = np.longdouble
PRIMES = (3, 5, 7, 11, 13, 17, 19, 23)


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


def loss_extended(params, x, y, class_weights):
    """Weighted BCE of the ReLU/sigmoid network in extended precision."""
    h = x.astype(LD)
    pre = []
    for i, layer in enumerate(params):
        z = h @ layer.weights.astype(LD).T + layer.bias.astype(LD)
        pre.append(z)
        h = np.maximum(z, 0) if i < len(params) - 1 else z
    p = 1 / (1 + np.exp(-h[:, 0]))
    w = np.where(y == 1, LD(class_weights[1]), LD(class_weights[0]))
    loss = np.sum(w * -(y * np.log(p) + (1 - y) * np.log1p(-p))) / np.sum(w)
    pattern = np.concatenate([(z > 0).ravel() for z in pre[:-1]])
    return loss, pattern


def finite_difference_check(params, x, y, class_weights, analytic, h=1e-5):
    """Worst relative error of ``analytic`` against central differences.

    Components whose +/-h perturbation flips a ReLU on or off are skipped:
    the loss is not differentiable across that kink. Returns ``(worst
    relative error, number of compared components, number skipped)``.
    """
    worst, compared, skipped = 0.0, 0, 0
    for li, layer in enumerate(params):
        for name in ("weights", "bias"):
            arr = getattr(layer, name)
            grad = getattr(analytic[li], name)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                plus = arr[idx]
                lp, pat_p = loss_extended(params, x, y, class_weights)
                arr[idx] = old - h
                minus = arr[idx]
                lm, pat_m = loss_extended(params, x, y, class_weights)
                arr[idx] = old
                if not np.array_equal(pat_p, pat_m):
                    skipped += 1
                    continue
                fd = float((lp - lm) / (LD(plus) - LD(minus)))
                a = float(grad[idx])
                scale = max(abs(a), abs(fd))
                compared += 1
                if scale > 0:
                    worst = max(worst, abs(a - fd) / scale)
    return worst, compared, skipped


def random_gradient_case(rng):
    """Random (valid architecture, batch, labels, class weights, params)."""
    depth = int(rng.integers(2, 4))
    widths = tuple(int(w) for w in rng.choice(PRIMES, depth))
    input_dim = int(rng.integers(1, 7))
    arch = Architecture(widths, input_dim)
    params = init_params(arch, int(rng.integers(0, 2**63)))
    params = [Layer(l.weights, rng.normal(0, 0.1, l.bias.shape)) for l in params]
    n = int(rng.integers(2, 20))
    x = rng.normal(size=(n, input_dim))
    y = rng.integers(0, 2, n).astype(np.float64)
    y[0], y[1] = 0.0, 1.0
    cw = tuple(float(v) for v in rng.uniform(0.5, 3.0, 2))
    return arch, params, x, y, cw


def mann_whitney_enumeration_p(a, b):
    """U of ``a`` and its two-sided exact p from every split of the pooled sample."""
    pooled = list(a) + list(b)
    m = len(a)

    def u(first):
        rest = [v for i, v in enumerate(pooled) if i not in first]
        return sum(1.0 if pooled[i] > q else 0.5 if pooled[i] == q else 0.0 for i in first for q in rest)

    observed = u(set(range(m)))
    us = [u(set(idx)) for idx in itertools.combinations(range(len(pooled)), m)]
    lower = sum(v <= observed for v in us) / len(us)
    upper = sum(v >= observed for v in us) / len(us)
    return observed, min(1.0, 2 * min(lower, upper))


def welch_reference(a, b):
    """Welch t and df by the textbook formulas, in plain Python."""
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    va = sum((v - ma) ** 2 for v in a) / (len(a) - 1)
    vb = sum((v - mb) ** 2 for v in b) / (len(b) - 1)
    qa, qb = va / len(a), vb / len(b)
    t = (ma - mb) / math.sqrt(qa + qb)
    df = (qa + qb) ** 2 / (qa**2 / (len(a) - 1) + qb**2 / (len(b) - 1))
    return t, df
