"""Named finite-difference checks over every training objective.

Each check builds a small random instance (batch of 4-8 samples, feature
dimension 4), treats features and proxies as gradient leaves, and compares
analytic gradients against central differences entry by entry. The
reversal-path check differentiates through a small encoder and verifies that
trunk gradients under reversal are exactly the negated, scaled plain
gradients while head gradients are untouched.

Checks can run across a thread pool (ORDCON_THREADS); results merge in a
fixed order, so the report is identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoder import EncoderSpec, forward, init_encoder
from .errors import ConfigError
from .losses import (
    LabeledBatch,
    LossConfig,
    age_l1_loss,
    contrast_loss,
    identity_contrastive_loss,
    metric_loss,
    order_loss,
    progressive_loss,
    regressive_loss,
)
from .proxies import ProxyBank
from .seeding import derive_rng

TOLERANCE = 1e-5

CHECK_NAMES = (
    "progressive",
    "regressive",
    "order",
    "metric-hard",
    "metric-soft",
    "contrast",
    "age-l1",
    "identity",
    "reversal-path",
)


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    seeds: int

    @property
    def passed(self):
        return self.max_rel_err < TOLERANCE


def _random_instance(seed, check):
    """Shared setup: labels 1..5 with proxies covering sentinels 0 and 6."""
    rng = derive_rng(seed, "gradcheck", check)
    n = int(rng.integers(4, 9))
    labels = rng.integers(1, 6, size=n)
    if np.unique(labels).size < 2:
        labels[0], labels[1] = 1, 5
    features = rng.standard_normal((n, 4))
    proxies = rng.standard_normal((7, 4))
    proxies /= np.linalg.norm(proxies, axis=1, keepdims=True)
    return labels, features, proxies


def _batch_loss_check(seed, check, loss_fn, cfg):
    labels, features, proxies = _random_instance(seed, check)

    def target(tape, leaves):
        z, prox = leaves
        bank = ProxyBank(0, 6, prox.value, 0)
        bank.bind_tensor(prox)
        return loss_fn(LabeledBatch(z, labels), bank, cfg)

    return ad.grad_check(target, [features, proxies])


def _identity_check(seed, cfg):
    rng = derive_rng(seed, "gradcheck", "identity")
    n = int(rng.integers(4, 9))
    ids = rng.integers(0, 3, size=n)  # n >= 4 over 3 identities guarantees a positive pair
    z_id = rng.standard_normal((n, 4))
    ages = rng.integers(1, 6, size=n)

    def target(tape, leaves):
        (z,) = leaves
        return identity_contrastive_loss(LabeledBatch(tape.constant(z.value), ages, z, ids), cfg)

    return ad.grad_check(target, [z_id])


def _age_l1_check(seed):
    rng = derive_rng(seed, "gradcheck", "age-l1")
    n = int(rng.integers(4, 9))
    preds = rng.standard_normal(n) * 10.0
    targets = rng.integers(1, 6, size=n)

    def target(tape, leaves):
        (p,) = leaves
        return age_l1_loss(p, targets)

    return ad.grad_check(target, [preds])


def _reversal_check(seed, cfg):
    """Gradient-reversal path against both its defining rule and differences."""
    strength = 0.7
    rng = derive_rng(seed, "gradcheck", "reversal")
    spec = EncoderSpec(input_dim=3, hidden_dims=(5,), d_age=4, d_id=0, activation="tanh", seed=seed)
    params = init_encoder(spec)
    n = int(rng.integers(4, 9))
    x = rng.standard_normal((n, 3))
    labels = rng.integers(1, 6, size=n)
    if np.unique(labels).size < 2:
        labels[0], labels[1] = 1, 5
    proxies = rng.standard_normal((7, 4))
    proxies /= np.linalg.norm(proxies, axis=1, keepdims=True)

    def encoder_grads(reversal):
        tape = ad.Tape()
        z_age, _ = forward(params, x, tape, reversal_strength=reversal)
        bank = ProxyBank(0, 6, proxies, 0)
        loss = contrast_loss(LabeledBatch(z_age, labels), bank, cfg)
        return params.group.grads_from(tape.backward(loss))

    plain = encoder_grads(None)
    with_reversal = encoder_grads(strength)
    worst = 0.0
    for name in plain:
        # trunk parameters sit below the reversal node; the head does not
        expected = plain[name] if name == "w_age" else -strength * plain[name]
        got = with_reversal[name]
        denom = max(np.max(np.abs(expected)), np.max(np.abs(got)), 1e-12)
        worst = max(worst, float(np.max(np.abs(expected - got)) / denom))

    def target(tape, leaves):
        (w0,) = leaves
        h = (ad.matmul(tape.constant(x), w0) + tape.constant(params.arrays["b0"])).tanh()
        z = ad.matmul(h, tape.constant(params.arrays["w_age"]))
        bank = ProxyBank(0, 6, proxies, 0)
        return contrast_loss(LabeledBatch(z, labels), bank, cfg)

    return max(worst, ad.grad_check(target, [params.arrays["w0"]]))


def run_check(name, seeds, cfg=None):
    """Max relative error of one named check across `seeds` random instances.

    Checks default to temperature 1.0: the temperature is a constant scalar
    divisor, so its backward rule is identical at any value, but small
    temperatures stretch the exp dynamic range until the true gradient of
    dominated terms sits below the finite-difference rounding floor and the
    relative-error metric saturates on noise.
    """
    if name not in CHECK_NAMES:
        raise ConfigError(f"unknown gradient check {name!r}; choose from {CHECK_NAMES}")
    cfg = cfg or LossConfig(temperature=1.0)
    errs = []
    for seed in range(seeds):
        if name == "progressive":
            err = _batch_loss_check(seed, name, progressive_loss, cfg)
        elif name == "regressive":
            err = _batch_loss_check(seed, name, regressive_loss, cfg)
        elif name == "order":
            err = _batch_loss_check(seed, name, order_loss, cfg)
        elif name == "metric-hard":
            err = _batch_loss_check(
                seed, name, metric_loss, LossConfig(temperature=cfg.temperature, soft_weights=False)
            )
        elif name == "metric-soft":
            err = _batch_loss_check(
                seed, name, metric_loss, LossConfig(temperature=cfg.temperature, soft_weights=True)
            )
        elif name == "contrast":
            err = _batch_loss_check(seed, name, contrast_loss, cfg)
        elif name == "age-l1":
            err = _age_l1_check(seed)
        elif name == "identity":
            err = _identity_check(seed, cfg)
        else:
            err = _reversal_check(seed, cfg)
        errs.append(err)
    return CheckResult(name, float(max(errs)), seeds)


def run_suite(seeds=20, names=CHECK_NAMES, cfg=None, inject_wrong_sign=False, threads=None):
    """Run the named checks and return CheckResults in declaration order.

    threads defaults to the ORDCON_THREADS environment variable (1 when
    unset). inject_wrong_sign flips the sign of exp's backward rule for the
    whole run; every exp-consuming check must then fail, proving the suite
    can catch a broken gradient.
    """
    if threads is None:
        threads = int(os.environ.get("ORDCON_THREADS", "1"))
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    names = list(names)
    for name in names:
        if name not in CHECK_NAMES:
            raise ConfigError(f"unknown gradient check {name!r}; choose from {CHECK_NAMES}")
    if inject_wrong_sign:
        ad.WRONG_SIGN_EXP = True
    try:
        if threads == 1:
            return [run_check(name, seeds, cfg=cfg) for name in names]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda name: run_check(name, seeds, cfg=cfg), names))
    finally:
        ad.WRONG_SIGN_EXP = False
