"""Brute-force reference computations, written without any tcalib helpers."""

import math

import numpy as np


def central_difference(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad


def ece_per_record(confidences, correct, n_bins):
    """Loop over bins, scan every record for membership in ((k-1)/n, k/n]."""
    m = len(confidences)
    total = 0.0
    for k in range(1, n_bins + 1):
        lo, hi = (k - 1) / n_bins, k / n_bins
        members = [
            i for i, c in enumerate(confidences)
            if (lo < c <= hi) or (k == 1 and c == 0.0)
        ]
        if not members:
            continue
        acc = sum(1.0 for i in members if correct[i]) / len(members)
        conf = sum(confidences[i] for i in members) / len(members)
        total += len(members) / m * abs(acc - conf)
    return total


def _dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def _mean(vectors):
    n = len(vectors)
    return [sum(v[j] for v in vectors) / n for j in range(len(vectors[0]))]


def mtas_loop(group):
    group = [list(map(float, g)) for g in group]
    centre = _mean(group)
    return sum(_dist(g, centre) for g in group) / len(group)


def atfd_loop(groups):
    means = [_mean([list(map(float, g)) for g in grp]) for grp in groups]
    grand = _mean(means)
    return sum(_dist(m, grand) for m in means) / len(means)


def entropy_loop(p):
    return -sum(x * math.log(x) for x in p if x > 0)


def softmax_loop(z):
    top = max(z)
    e = [math.exp(v - top) for v in z]
    s = sum(e)
    return [v / s for v in e]


def tca_loss_extended(prefix, frozen_sum, length, owner, n_classes, text_proj, views, temperature, retained, alpha, beta):
    """Total loss recomputed from scratch in extended precision (np.longdouble).

    Keeps the finite-difference quotient's roundoff around 1e-13, far below
    the size of the smallest gradient components being checked.
    """
    ld = np.longdouble
    prefix = np.asarray(prefix, dtype=ld)
    w = np.asarray(text_proj, dtype=ld)
    views = np.asarray(views, dtype=ld)
    rows = []
    for r in range(len(owner)):
        pooled = (prefix.sum(axis=0) + np.asarray(frozen_sum[r], dtype=ld)) / ld(length[r])
        z = w @ pooled
        rows.append(z / np.sqrt((z * z).sum()))
    groups = [[rows[r] for r in range(len(owner)) if owner[r] == i] for i in range(n_classes)]
    means = [sum(g) / ld(len(g)) for g in groups]
    unit_means = [m / np.sqrt((m * m).sum()) for m in means]

    pbar = np.zeros(n_classes, dtype=ld)
    for j in retained:
        logits = np.array([(views[j] * t).sum() / ld(temperature) for t in unit_means], dtype=ld)
        e = np.exp(logits - logits.max())
        pbar += e / e.sum()
    pbar /= ld(len(retained))
    l_tpt = -sum(p * np.log(p) for p in pbar if p > 0)

    grand = sum(means) / ld(n_classes)
    dispersion = sum(np.sqrt(((m - grand) ** 2).sum()) for m in means) / ld(n_classes)
    spreads = [
        sum(np.sqrt(((x - means[i]) ** 2).sum()) for x in groups[i]) / ld(len(groups[i]))
        for i in range(n_classes)
    ]
    intra = sum(spreads) / ld(n_classes)
    return l_tpt - ld(alpha) * dispersion + ld(beta) * intra
