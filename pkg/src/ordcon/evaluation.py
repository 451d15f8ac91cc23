"""Evaluation: error metrics, ordinal consistency, retrieval, and exports.

Everything here is pure numpy on forward features (no tapes kept alive).
Metrics serialize to JSON with sorted keys and round-trip-exact floats, so
two runs of the same evaluation produce byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.linear_model import LogisticRegression

from . import autodiff as ad
from .checkpoints import check_data_compatible
from .encoder import forward, predict_age
from .errors import DataError, RelationError, ShapeMismatchError
from .seeding import derive_rng


@dataclass
class Metrics:
    """Scalar metrics of one evaluation; absent ones stay None."""

    mae: Optional[float] = None
    order_consistency: Optional[float] = None
    rank1: Optional[float] = None
    age_probe_accuracy: Optional[float] = None
    loss_trace: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mae": self.mae,
            "order_consistency": self.order_consistency,
            "rank1": self.rank1,
            "age_probe_accuracy": self.age_probe_accuracy,
            "loss_trace": self.loss_trace,
        }


def mae(predictions, targets):
    """Mean absolute error between two 1-d arrays."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 1:
        raise ShapeMismatchError(f"mae needs matching 1-d arrays, got {predictions.shape} and {targets.shape}")
    if predictions.size == 0:
        raise DataError("mae needs at least one sample")
    return float(np.mean(np.abs(predictions - targets)))


def order_consistency(features, labels, bank):
    """Fraction of ordered pairs whose direction leans the right way.

    For every pair (i, j) with labels[i] < labels[j], the unit direction from
    feature j to feature i must be closer (by cosine) to the chain direction
    from label j's proxy to label i's proxy than to the one-step-down
    direction at label i. Perfectly proxy-aligned features score 1.0.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise RelationError("order consistency needs at least 2 distinct labels")
    norm = np.linalg.norm
    proxies = bank.vectors
    hits, total = 0, 0
    for i in range(labels.shape[0]):
        older = labels[i] < labels
        if not older.any():
            continue
        diffs = features[i] - features[older]
        dnorm = norm(diffs, axis=1)
        if np.any(dnorm <= ad.NORM_FLOOR):
            raise ad.NearZeroNormError("coincident features in an ordered pair")
        directions = diffs / dnorm[:, None]
        fwd = proxies[bank.row(labels[i])] - proxies[bank.rows_of(labels[older])]
        fwd = fwd / norm(fwd, axis=1)[:, None]
        bwd = proxies[bank.row(labels[i])] - proxies[bank.row(labels[i] - 1)]
        bwd = bwd / norm(bwd)
        hits += int(np.sum(np.sum(directions * fwd, axis=1) > directions @ bwd))
        total += int(older.sum())
    if total == 0:
        raise RelationError("no ordered pair with distinct labels")
    return hits / total


def split_gallery_probe(y_age, y_id):
    """Oldest sample per identity becomes gallery; everything else probes.

    Ties on age inside an identity resolve to the lowest index. Returns
    (gallery_indices, probe_indices); identities with a single sample
    contribute only a gallery entry.
    """
    y_age = np.asarray(y_age)
    y_id = np.asarray(y_id)
    if y_age.size == 0:
        raise DataError("cannot split an empty sample set")
    gallery = []
    for identity in np.unique(y_id):
        members = np.nonzero(y_id == identity)[0]
        gallery.append(members[np.argmax(y_age[members])])
    gallery = np.array(sorted(gallery))
    probe = np.setdiff1d(np.arange(y_age.size), gallery)
    return gallery, probe


def rank1_accuracy(gallery_features, gallery_ids, probe_features, probe_ids):
    """Cosine nearest-neighbor identification rate over the probe set."""
    gallery_features = np.asarray(gallery_features, dtype=np.float64)
    probe_features = np.asarray(probe_features, dtype=np.float64)
    gallery_ids = np.asarray(gallery_ids)
    probe_ids = np.asarray(probe_ids)
    if gallery_features.shape[0] == 0:
        raise DataError("rank-1 needs a nonempty gallery")
    if probe_features.shape[0] == 0:
        raise DataError("rank-1 needs a nonempty probe set")
    if not set(probe_ids.tolist()) <= set(gallery_ids.tolist()):
        raise DataError("every probe identity must appear in the gallery")
    gn = np.linalg.norm(gallery_features, axis=1)
    pn = np.linalg.norm(probe_features, axis=1)
    if np.any(gn <= ad.NORM_FLOOR) or np.any(pn <= ad.NORM_FLOOR):
        raise ad.NearZeroNormError("rank-1 features must have norm above the floor")
    sims = (probe_features / pn[:, None]) @ (gallery_features / gn[:, None]).T
    nearest = np.argmax(sims, axis=1)  # ties resolve to the lowest gallery index
    return float(np.mean(gallery_ids[nearest] == probe_ids))


def age_probe_accuracy(features, group_labels, seed):
    """Accuracy of a linear softmax probe predicting age groups from features.

    Each group is split half/half deterministically by seed; the probe trains
    on one half and is scored on the other. Low accuracy means the feature
    space carries little linearly decodable age information.
    """
    features = np.asarray(features, dtype=np.float64)
    group_labels = np.asarray(group_labels)
    groups = np.unique(group_labels)
    if groups.size < 2:
        raise DataError("age probe needs at least 2 distinct groups")
    rng = derive_rng(seed, "probe-split")
    train_idx, eval_idx = [], []
    for g in groups:
        members = np.nonzero(group_labels == g)[0]
        if members.size < 2:
            raise DataError(f"group {g} has {members.size} sample(s); need >= 2 for a 50/50 split")
        members = members[rng.permutation(members.size)]
        half = members.size // 2
        train_idx.extend(members[: members.size - half])
        eval_idx.extend(members[members.size - half :])
    train_idx = np.array(sorted(train_idx))
    eval_idx = np.array(sorted(eval_idx))
    probe = LogisticRegression(max_iter=1000)
    probe.fit(features[train_idx], group_labels[train_idx])
    return float(probe.score(features[eval_idx], group_labels[eval_idx]))


def pca_project(features, k):
    """Project onto the top-k principal directions with a fixed sign rule.

    Signs follow the convention that each direction's largest-magnitude
    coordinate is positive, so equal inputs give bit-equal projections.
    Directions beyond the data rank come back as zeros with zero explained
    variance. Returns (projected (n, k), explained_variance_ratio (k,)).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeMismatchError(f"pca_project needs a 2-d array, got shape {features.shape}")
    n, d = features.shape
    if not 1 <= k <= d:
        raise DataError(f"k must lie in [1, {d}], got {k}")
    if n < 2:
        raise DataError("pca needs at least 2 samples")
    centered = features - features.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    tol = singular.max(initial=0.0) * max(n, d) * np.finfo(np.float64).eps
    total = float(np.sum(singular**2))
    directions = np.zeros((k, d))
    ratios = np.zeros(k)
    for comp in range(min(k, singular.size)):
        if singular[comp] <= tol:
            break
        direction = vt[comp]
        pivot = np.argmax(np.abs(direction))
        if direction[pivot] < 0:
            direction = -direction
        directions[comp] = direction
        ratios[comp] = singular[comp] ** 2 / total
    return centered @ directions.T, ratios


def encode_dataset(ckpt, dataset):
    """Forward the whole dataset; returns (z_age, z_id, age_predictions)."""
    check_data_compatible(ckpt, dataset)
    tape = ad.Tape()
    z_age, z_id = forward(ckpt.encoder, dataset.x, tape, requires_grad=False)
    preds = predict_age(ckpt.head, z_age, requires_grad=False)
    out = z_age.value, None if z_id is None else z_id.value, preds.value
    tape.release()
    return out


def evaluate(ckpt, dataset, probe_seed=0):
    """Full metric sweep for a checkpoint on a dataset.

    Age mode reports mae and order consistency over ages. Aifr mode reports
    order consistency over group labels, rank-1 identification, and the age
    probe on identity features; mae is left None since the scalar head is
    not trained in that pipeline.
    """
    z_age, z_id, preds = encode_dataset(ckpt, dataset)
    metrics = Metrics(loss_trace={k: list(v) for k, v in ckpt.loss_trace.items()})
    if ckpt.mode == "age":
        metrics.mae = mae(preds, dataset.y_age)
        metrics.order_consistency = order_consistency(z_age, dataset.y_age, ckpt.bank)
    else:
        groups = ckpt.scheme.groups_of(dataset.y_age)
        metrics.order_consistency = order_consistency(z_age, groups, ckpt.bank)
        gallery, probe = split_gallery_probe(dataset.y_age, dataset.y_id)
        if probe.size:
            metrics.rank1 = rank1_accuracy(z_id[gallery], dataset.y_id[gallery], z_id[probe], dataset.y_id[probe])
        metrics.age_probe_accuracy = age_probe_accuracy(z_id, groups, probe_seed)
    return metrics


def export_metrics(metrics, path):
    """Write metrics JSON with sorted keys; byte-stable across reruns."""
    with open(path, "w") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def export_features(ckpt, dataset, path, space="age"):
    """Write per-sample features as CSV: y_age, y_id, z_0..z_{d-1}."""
    z_age, z_id, _ = encode_dataset(ckpt, dataset)
    if space == "age":
        z = z_age
    elif space == "id":
        if z_id is None:
            raise DataError("this checkpoint has no identity head to export")
        z = z_id
    else:
        raise DataError(f"unknown feature space {space!r}; use 'age' or 'id'")
    header = ["y_age", "y_id"] + [f"z_{i}" for i in range(z.shape[1])]
    lines = [",".join(header)]
    for i in range(z.shape[0]):
        row = [str(int(dataset.y_age[i])), str(int(dataset.y_id[i]))]
        row.extend(repr(float(v)) for v in z[i])
        lines.append(",".join(row))
    with open(os.fspath(path), "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
