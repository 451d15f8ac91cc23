"""Independent brute-force loss implementations used as test oracles.

Everything here is written as plain Python loops over numpy arrays, with
no autodiff and no calls into ordcon's vectorized loss code.  Each
function encodes the loss definition directly so the package can be
checked against it.  Keep these slow and obvious; do not "optimize" them
into the same shape as the code under test.
"""

import math

import numpy as np


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = math.sqrt(float(np.dot(v, v)))
    if n <= 1e-12:
        raise ValueError("near-zero norm in oracle")
    return v / n


def cos(a, b):
    return float(np.dot(unit(a), unit(b)))


def brute_progressive(z, y, proxies, label_lo, temperature,
                      include_positive=False):
    """Anchor-younger order loss: pull v(z_i, z_j) toward the forward
    proxy direction v(c_i, c_j), against the backward step v(c_i, c_{i-1})."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    n = len(y)
    total = 0.0
    for i in range(n):
        partners = [j for j in range(n) if y[i] < y[j]]
        if not partners:
            continue
        v_b = unit(proxies[y[i] - (label_lo - 1)] - proxies[y[i] - 1 - (label_lo - 1)])
        for j in partners:
            v_d = unit(z[i] - z[j])
            v_f = unit(proxies[y[i] - (label_lo - 1)] - proxies[y[j] - (label_lo - 1)])
            num = math.exp(cos(v_f, v_d) / temperature)
            den = 0.0
            for k in partners:
                den += math.exp(cos(v_b, unit(z[i] - z[k])) / temperature)
            if include_positive:
                den += num
            total += (1.0 / len(partners)) * math.log(num / den)
    return -total


def brute_regressive(z, y, proxies, label_lo, temperature,
                     include_positive=False):
    """Anchor-older mirror: numerator direction unit(c_i - c_j), denominator
    chain step unit(c_i - c_{i+1})."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    n = len(y)
    total = 0.0
    for i in range(n):
        partners = [j for j in range(n) if y[i] > y[j]]
        if not partners:
            continue
        v_f = unit(proxies[y[i] - (label_lo - 1)] - proxies[y[i] + 1 - (label_lo - 1)])
        for j in partners:
            v_d = unit(z[i] - z[j])
            v_b = unit(proxies[y[i] - (label_lo - 1)] - proxies[y[j] - (label_lo - 1)])
            num = math.exp(cos(v_b, v_d) / temperature)
            den = 0.0
            for k in partners:
                den += math.exp(cos(v_f, unit(z[i] - z[k])) / temperature)
            if include_positive:
                den += num
            total += (1.0 / len(partners)) * math.log(num / den)
    return -total


def brute_order(z, y, proxies, label_lo, temperature, include_positive=False):
    return (brute_progressive(z, y, proxies, label_lo, temperature, include_positive)
            + brute_regressive(z, y, proxies, label_lo, temperature, include_positive))


def brute_soft_weight(anchor_label, negative_label, all_negative_labels):
    diffs = [abs(anchor_label - c) for c in all_negative_labels]
    maxdiff = max(diffs)
    if maxdiff <= 0:
        raise ValueError("degenerate negative set in oracle")
    return 1.0 / (1.0 + math.exp(-abs(anchor_label - negative_label) / maxdiff))


def brute_metric(z, y, proxies, label_lo, label_hi, temperature,
                 soft=True, log_ratio=False):
    """Proxy-matching loss: per sample, exp(cos with own proxy) over a
    (possibly soft-weighted) sum of exps over all other assignable proxies,
    averaged and negated."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    terms = []
    for i in range(len(y)):
        own = math.exp(cos(z[i], proxies[y[i] - (label_lo - 1)]) / temperature)
        negs = [c for c in range(label_lo, label_hi + 1) if c != y[i]]
        den = 0.0
        for c in negs:
            w = brute_soft_weight(y[i], c, negs) if soft else 1.0
            den += w * math.exp(cos(z[i], proxies[c - (label_lo - 1)]) / temperature)
        ratio = own / den
        terms.append(math.log(ratio) if log_ratio else ratio)
    return -sum(terms) / len(terms)


def brute_contrast(z, y, proxies, label_lo, label_hi, temperature,
                   metric_weight, soft=True, log_ratio=False,
                   include_positive=False):
    """Order terms plus metric_weight times the proxy-matching loss."""
    total = brute_order(z, y, proxies, label_lo, temperature, include_positive)
    if metric_weight == 0.0:
        return total
    return total + metric_weight * brute_metric(
        z, y, proxies, label_lo, label_hi, temperature,
        soft=soft, log_ratio=log_ratio)


def brute_identity(z_id, ids, temperature, include_self=False):
    """Multi-positive contrastive loss over raw dot products."""
    z_id = np.asarray(z_id, dtype=np.float64)
    ids = np.asarray(ids)
    n = len(ids)
    total = 0.0
    for i in range(n):
        pos = [j for j in range(n) if j != i and ids[j] == ids[i]]
        if not pos:
            continue
        den = 0.0
        for k in range(n):
            if k == i and not include_self:
                continue
            den += math.exp(float(np.dot(z_id[i], z_id[k])) / temperature)
        for j in pos:
            num = math.exp(float(np.dot(z_id[i], z_id[j])) / temperature)
            total += (1.0 / len(pos)) * math.log(num / den)
    return -total


def brute_age_l1(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return sum(abs(float(p) - float(t)) for p, t in zip(pred, target)) / len(pred)


def brute_grl_strength(progress, growth_rate):
    return 2.0 / (1.0 + math.exp(-growth_rate * progress)) - 1.0


def random_order_instance(rng, n_lo=2, n_hi=8, d_lo=2, d_hi=5,
                          label_lo=3, label_hi=7):
    """A random well-formed batch + proxy bank for equivalence tests.

    Returns (z, y, proxies) with proxies covering [label_lo-1, label_hi+1]
    and all rows/pairwise differences safely away from zero norm.
    """
    n = int(rng.integers(n_lo, n_hi + 1))
    d = int(rng.integers(d_lo, d_hi + 1))
    while True:
        z = rng.normal(size=(n, d))
        y = rng.integers(label_lo, label_hi + 1, size=n)
        proxies = rng.normal(size=(label_hi - label_lo + 3, d))
        proxies /= np.linalg.norm(proxies, axis=1, keepdims=True)
        diffs_ok = True
        for i in range(n):
            for j in range(n):
                if i != j and np.linalg.norm(z[i] - z[j]) < 1e-3:
                    diffs_ok = False
        if diffs_ok and np.all(np.linalg.norm(z, axis=1) > 1e-3):
            return z, y, proxies
