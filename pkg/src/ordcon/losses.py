"""Training objectives: order-direction losses, proxy matching, and heads.

All losses consume feature tensors recorded on a live tape and are
differentiable with respect to both features and proxies. Pair terms are
fully vectorized: pairs are enumerated once as index arrays, per-pair unit
directions come from row gathers, and per-anchor softmax denominators are
segment sums. Anchors with no valid partner contribute exactly zero, and
equal-label pairs never enter the order terms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, DomainError, LabelRangeError, ShapeMismatchError
from .proxies import ProxyBank


@dataclass(frozen=True)
class LossConfig:
    """Knobs shared by the objective stack.

    temperature scales every similarity before exponentiation. metric_weight
    mixes the proxy-matching term into the combined contrastive loss.
    soft_weights switches proxy matching from hard negatives to
    distance-weighted ones. log_ratio applies log to each matching ratio
    before averaging. The two include_* flags widen softmax denominators with
    the numerator term (order losses) or the self-similarity (identity loss).
    include_order exists for ablations that drop the order terms entirely.
    """

    temperature: float = 0.1
    metric_weight: float = 0.8
    grl_growth_rate: float = 10.0
    soft_weights: bool = True
    log_ratio: bool = False
    include_positive_in_denominator: bool = False
    include_self_in_denominator: bool = False
    include_order: bool = True

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.metric_weight < 0.0:
            raise ConfigError(f"metric_weight must be >= 0, got {self.metric_weight}")
        if self.grl_growth_rate <= 0.0:
            raise ConfigError(f"grl_growth_rate must be > 0, got {self.grl_growth_rate}")

    @staticmethod
    def from_dict(d):
        return LossConfig(**d)

    def to_dict(self):
        return {
            "temperature": self.temperature,
            "metric_weight": self.metric_weight,
            "grl_growth_rate": self.grl_growth_rate,
            "soft_weights": self.soft_weights,
            "log_ratio": self.log_ratio,
            "include_positive_in_denominator": self.include_positive_in_denominator,
            "include_self_in_denominator": self.include_self_in_denominator,
            "include_order": self.include_order,
        }


@dataclass
class LabeledBatch:
    """Features plus integer labels for one optimization step.

    z_age carries the ordinal features (ages or age-group labels in y_age);
    z_id / y_id are present only in the identity pipeline.
    """

    z_age: ad.Tensor
    y_age: np.ndarray
    z_id: Optional[ad.Tensor] = None
    y_id: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y_age = np.asarray(self.y_age)
        if not np.issubdtype(self.y_age.dtype, np.integer):
            raise DataError("y_age labels must be integers")
        if self.z_age.ndim != 2:
            raise ShapeMismatchError(f"z_age must be (batch, dim), got shape {self.z_age.shape}")
        if self.z_age.shape[0] != self.y_age.shape[0]:
            raise ShapeMismatchError(
                f"{self.z_age.shape[0]} age features vs {self.y_age.shape[0]} labels"
            )
        if (self.z_id is None) != (self.y_id is None):
            raise DataError("z_id and y_id must be given together")
        if self.z_id is not None:
            self.y_id = np.asarray(self.y_id)
            if self.z_id.shape[0] != self.y_id.shape[0] or self.z_id.shape[0] != self.size:
                raise ShapeMismatchError("identity features and labels must match the batch size")

    @property
    def size(self):
        return self.y_age.shape[0]


def _pair_indices(labels, kind):
    """(anchor, partner) index arrays for y[a] < y[p] or y[a] > y[p]."""
    labels = np.asarray(labels)
    if kind == "progressive":
        mask = labels[:, None] < labels[None, :]
    else:
        mask = labels[:, None] > labels[None, :]
    anchors, partners = np.nonzero(mask)
    return anchors.astype(np.intp), partners.astype(np.intp), mask.sum(axis=1)


def _order_component(z, labels, bank, cfg, kind):
    """Shared core of the progressive and regressive losses.

    For each anchor i with at least one partner under the relation, the
    per-pair log-probability is numer_sim/T - log(sum_k exp(denom_sim/T))
    where the sum runs over the anchor's partners; pair weights are uniform
    per anchor. Returns a scalar tensor (exact zero when no pair exists).
    """
    tape = z.tape
    labels = np.asarray(labels)
    anchors, partners, counts = _pair_indices(labels, kind)
    if anchors.size == 0:
        return tape.constant(0.0)
    proxies = bank.tensor_on(tape)

    z_i = ad.gather_rows(z, anchors)
    z_j = ad.gather_rows(z, partners)
    v_dir = ad.l2_normalize(z_i - z_j)

    # Numerators share one convention: anchor proxy minus partner proxy, so
    # both terms reward the same chain orientation. The denominators step one
    # label outward from the anchor, away from the partner side.
    numer_from, numer_to = labels[anchors], labels[partners]
    if kind == "progressive":
        denom_from, denom_to = labels[anchors], labels[anchors] - 1
    else:
        denom_from, denom_to = labels[anchors], labels[anchors] + 1

    def chain_direction(from_labels, to_labels):
        rows_a = ad.gather_rows(proxies, bank.rows_of(from_labels))
        rows_b = ad.gather_rows(proxies, bank.rows_of(to_labels))
        return ad.l2_normalize(rows_a - rows_b)

    numer_sim = (chain_direction(numer_from, numer_to) * v_dir).sum(axis=1, keepdims=True)
    denom_sim = (chain_direction(denom_from, denom_to) * v_dir).sum(axis=1, keepdims=True)
    numer_sim = numer_sim / cfg.temperature
    denom_sim = denom_sim / cfg.temperature

    per_anchor = ad.scatter_rows(denom_sim.exp(), anchors, labels.shape[0])
    denominator = ad.gather_rows(per_anchor, anchors)
    if cfg.include_positive_in_denominator:
        denominator = denominator + numer_sim.exp()
    log_q = numer_sim - denominator.log()

    pair_weight = tape.constant((1.0 / counts[anchors]).reshape(-1, 1))
    return -(pair_weight * log_q).sum()


def _require_pairable(batch):
    if batch.size < 2:
        raise DataError(f"pairwise losses need a batch of >= 2 samples, got {batch.size}")


def progressive_loss(batch, bank, cfg):
    """Anchor-to-older alignment term over all pairs with y_age[i] < y_age[j]."""
    _require_pairable(batch)
    return _order_component(batch.z_age, batch.y_age, bank, cfg, "progressive")


def regressive_loss(batch, bank, cfg):
    """Anchor-to-younger alignment term over all pairs with y_age[i] > y_age[j]."""
    _require_pairable(batch)
    return _order_component(batch.z_age, batch.y_age, bank, cfg, "regressive")


def order_loss(batch, bank, cfg):
    """Unweighted sum of the progressive and regressive terms."""
    return progressive_loss(batch, bank, cfg) + regressive_loss(batch, bank, cfg)


def soft_negative_weight(y, z, negative_labels):
    """Distance-scaled weight of negative label z for a sample labeled y.

    1 / (1 + exp(-|y - z| / max_{z' in negatives} |y - z'|)). The negative
    set must be nonempty, contain z, and hold at least one label != y.
    """
    negatives = np.asarray(negative_labels)
    if negatives.size == 0:
        raise DataError("soft weight needs a nonempty negative label set")
    if int(z) not in set(int(v) for v in negatives):
        raise LabelRangeError(f"label {z} is not in the negative set")
    max_diff = np.abs(np.asarray(negatives) - y).max()
    if max_diff <= 0:
        raise DomainError("soft weight needs a negative label different from the anchor label")
    return float(1.0 / (1.0 + np.exp(-abs(y - z) / max_diff)))


def _matching_terms(z, labels, bank, cfg):
    """Per-sample proxy matching ratios, shape (batch, 1).

    Each sample's numerator is exp(cos(z, own proxy)/T); the denominator sums
    the other assignable proxies' exp(cos/T), optionally scaled by soft
    distance weights. Sentinel proxies never participate.
    """
    tape = z.tape
    labels = np.asarray(labels)
    assignable = bank.assignable_labels()
    if assignable.size < 2:
        raise DataError("proxy matching needs at least 2 assignable labels")
    if labels.min() < assignable[0] or labels.max() > assignable[-1]:
        raise LabelRangeError(
            f"batch labels [{labels.min()}, {labels.max()}] outside assignable range "
            f"[{assignable[0]}, {assignable[-1]}]"
        )

    proxies = bank.tensor_on(tape)
    candidates = ad.gather_rows(proxies, bank.rows_of(assignable))
    sims = ad.matmul(ad.l2_normalize(z), ad.l2_normalize(candidates).T) / cfg.temperature
    expd = sims.exp()

    n, k = labels.shape[0], assignable.size
    own_col = (labels - assignable[0]).astype(np.intp)
    own_hot = np.zeros((n, k))
    own_hot[np.arange(n), own_col] = 1.0

    if cfg.soft_weights:
        diffs = np.abs(labels[:, None] - assignable[None, :]).astype(np.float64)
        # own label's diff is 0, so the row max equals the max over negatives
        weights = 1.0 / (1.0 + np.exp(-diffs / diffs.max(axis=1, keepdims=True)))
    else:
        weights = np.ones((n, k))

    numer = (expd * tape.constant(own_hot)).sum(axis=1, keepdims=True)
    denom = (expd * tape.constant(weights * (1.0 - own_hot))).sum(axis=1, keepdims=True)
    terms = numer / denom
    if cfg.log_ratio:
        terms = terms.log()
    return terms


def proxy_match_term(z, y, bank, cfg):
    """Matching ratio of a single feature vector against its own proxy."""
    if z.ndim != 1:
        raise ShapeMismatchError(f"proxy_match_term expects a 1-d feature, got shape {z.shape}")
    terms = _matching_terms(z.reshape((1, z.shape[0])), np.array([int(y)]), bank, cfg)
    return terms.reshape(())


def metric_loss(batch, bank, cfg):
    """Negative mean proxy-matching term over the batch."""
    if batch.size < 1:
        raise DataError("metric loss needs a nonempty batch")
    terms = _matching_terms(batch.z_age, batch.y_age, bank, cfg)
    return -terms.sum() / float(batch.size)


def contrast_loss(batch, bank, cfg):
    """Order terms plus metric_weight times the proxy-matching term.

    metric_weight == 0 short-circuits to the order loss alone, and
    include_order=False drops the order terms for metric-only ablations.
    """
    if not cfg.include_order:
        if cfg.metric_weight == 0.0:
            raise ConfigError("contrast loss with include_order=False needs metric_weight > 0")
        return cfg.metric_weight * metric_loss(batch, bank, cfg)
    total = order_loss(batch, bank, cfg)
    if cfg.metric_weight > 0.0:
        total = total + cfg.metric_weight * metric_loss(batch, bank, cfg)
    return total


def age_l1_loss(predictions, targets):
    """Mean absolute error with subgradient 0 at exact zero residual."""
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.ndim == 2 and predictions.shape[1] == 1:
        predictions = predictions.reshape((predictions.shape[0],))
    if predictions.ndim != 1 or predictions.shape[0] != targets.shape[0]:
        raise ShapeMismatchError(
            f"predictions shape {predictions.shape} incompatible with {targets.shape[0]} targets"
        )
    if targets.shape[0] == 0:
        raise DataError("age_l1_loss needs at least one sample")
    residual = predictions - predictions.tape.constant(targets)
    return residual.abs().mean()


def identity_contrastive_loss(batch, cfg):
    """Multi-positive contrastive loss over raw identity-feature dot products.

    Positives are same-identity partners (self excluded), uniformly weighted
    per anchor; the denominator runs over all other samples, or over all
    samples including self when include_self_in_denominator is set. Anchors
    without a positive partner contribute zero. Computed via a row-wise
    log-sum-exp with a constant shift so large dot/temperature ratios cannot
    overflow; the shift cancels exactly in value and gradient.
    """
    if batch.z_id is None:
        raise DataError("identity loss needs identity features in the batch")
    _require_pairable(batch)
    z, ids = batch.z_id, np.asarray(batch.y_id)
    norms = np.linalg.norm(z.value, axis=1)
    if np.any(norms <= ad.NORM_FLOOR):
        raise ad.NearZeroNormError("identity features must have norm above the floor")
    tape = z.tape
    n = batch.size

    scores = ad.matmul(z, z.T) / cfg.temperature
    same = ids[:, None] == ids[None, :]
    off_diag = ~np.eye(n, dtype=bool)

    positives = same & off_diag
    counts = positives.sum(axis=1)
    weights = positives / np.maximum(counts[:, None], 1)

    denom_mask = np.ones((n, n)) if cfg.include_self_in_denominator else off_diag.astype(np.float64)
    shift = np.max(np.where(denom_mask > 0, scores.value, -np.inf), axis=1, keepdims=True)
    # pin every masked-out entry's exp argument at -50 so it can neither
    # overflow nor leak gradient once multiplied by the zero mask
    offset = tape.constant(np.where(denom_mask > 0.0,
                                    np.broadcast_to(shift, scores.shape),
                                    scores.value + 50.0))
    shifted = (scores - offset).exp() * tape.constant(denom_mask)
    log_denom = shifted.sum(axis=1, keepdims=True).log() + tape.constant(shift)

    log_q = scores - log_denom
    return -(tape.constant(weights) * log_q).sum()


def grl_strength(progress, growth_rate):
    """Reversal strength schedule 2 / (1 + exp(-growth_rate * progress)) - 1.

    progress is the normalized position in [0, 1] of the current epoch within
    the reversal phase; the schedule rises from 0 toward 1.
    """
    progress = float(progress)
    growth_rate = float(growth_rate)
    if not 0.0 <= progress <= 1.0:
        raise DomainError(f"schedule progress must lie in [0, 1], got {progress}")
    if growth_rate <= 0.0:
        raise DomainError(f"schedule growth rate must be > 0, got {growth_rate}")
    return 2.0 / (1.0 + np.exp(-growth_rate * progress)) - 1.0


def ablation_config(cfg, name):
    """Objective presets used by the ablation study.

    full: order + soft-weighted matching (the default configuration)
    order-hard: order + hard-negative matching
    order-only: order terms alone (metric_weight forced to 0)
    metric-only: soft-weighted matching alone
    """
    presets = {
        "full": {"include_order": True, "soft_weights": True},
        "order-hard": {"include_order": True, "soft_weights": False},
        "order-only": {"include_order": True, "metric_weight": 0.0},
        "metric-only": {"include_order": False, "soft_weights": True},
    }
    if name not in presets:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(presets)}")
    return replace(cfg, **presets[name])
