"""Synthetic ordinal data: a fixed nonlinear warp of (age, identity) pairs.

Each sample is x = warp(age, identity) + noise where the warp is a random
one-hidden-layer tanh map drawn once from warp_seed: age enters as a scaled
scalar, identity as a fixed random embedding. Age is the dominant factor of
variation so ordinal structure is recoverable, while identity shifts the age
curve enough to support recognition. All draws run through derived,
independent generators; two datasets from equal specs are bit-identical.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .seeding import derive_rng, derive_seed

# Internal warp architecture; part of the data distribution's definition.
_WARP_HIDDEN = 48
_ID_EMBED_DIM = 8
_AGE_GAIN = 2.2
_ID_GAIN = 0.9
_BIAS_GAIN = 0.3

CSV_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpec:
    """Full description of a synthetic dataset draw."""

    n_samples: int = 2000
    n_identities: int = 50
    age_lo: int = 16
    age_hi: int = 77
    input_dim: int = 32
    noise_sigma: float = 0.05
    warp_seed: int = 0
    sample_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise DataError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n_identities < 1:
            raise DataError(f"n_identities must be >= 1, got {self.n_identities}")
        if self.age_hi <= self.age_lo:
            raise DataError(f"age range [{self.age_lo}, {self.age_hi}] must be nonempty")
        if self.input_dim < 1:
            raise DataError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.noise_sigma < 0.0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "n_identities": self.n_identities,
            "age_lo": self.age_lo,
            "age_hi": self.age_hi,
            "input_dim": self.input_dim,
            "noise_sigma": self.noise_sigma,
            "warp_seed": self.warp_seed,
            "sample_seed": self.sample_seed,
        }

    @staticmethod
    def from_dict(d):
        return SyntheticSpec(**d)


@dataclass(frozen=True)
class Sample:
    """One observation: features plus its age and identity labels."""

    x: np.ndarray
    y_age: int
    y_id: int


class Warp:
    """The deterministic (age, identity) -> feature map for one warp_seed."""

    def __init__(self, spec):
        rng = derive_rng(spec.warp_seed, "warp")
        self.spec = spec
        self.age_weights = _AGE_GAIN * rng.standard_normal(_WARP_HIDDEN)
        self.id_embed = rng.standard_normal((spec.n_identities, _ID_EMBED_DIM))
        self.id_weights = (_ID_GAIN / np.sqrt(_ID_EMBED_DIM)) * rng.standard_normal(
            (_WARP_HIDDEN, _ID_EMBED_DIM)
        )
        self.bias = _BIAS_GAIN * rng.standard_normal(_WARP_HIDDEN)
        self.readout = rng.standard_normal((spec.input_dim, _WARP_HIDDEN)) / np.sqrt(_WARP_HIDDEN)

    def features(self, age, identity):
        """Noise-free feature vector for (age, identity)."""
        spec = self.spec
        if not spec.age_lo <= age <= spec.age_hi:
            raise DataError(f"age {age} outside [{spec.age_lo}, {spec.age_hi}]")
        if not 0 <= identity < spec.n_identities:
            raise DataError(f"identity {identity} outside [0, {spec.n_identities})")
        age_scaled = (age - spec.age_lo) / (spec.age_hi - spec.age_lo)
        hidden = np.tanh(self.age_weights * age_scaled + self.id_weights @ self.id_embed[identity] + self.bias)
        return self.readout @ hidden


class Dataset:
    """Array-backed sample collection with its generating spec."""

    def __init__(self, x, y_age, y_id, spec):
        x = np.asarray(x, dtype=np.float64)
        y_age = np.asarray(y_age, dtype=np.int64)
        y_id = np.asarray(y_id, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] != y_age.shape[0] or x.shape[0] != y_id.shape[0]:
            raise DataError(f"inconsistent dataset arrays: x {x.shape}, ages {y_age.shape}, ids {y_id.shape}")
        if x.shape[1] != spec.input_dim:
            raise DataError(f"feature dim {x.shape[1]} does not match spec input_dim {spec.input_dim}")
        self.x = x
        self.y_age = y_age
        self.y_id = y_id
        self.spec = spec

    def __len__(self):
        return self.x.shape[0]

    def sample(self, i):
        return Sample(self.x[i], int(self.y_age[i]), int(self.y_id[i]))

    @property
    def samples(self):
        return [self.sample(i) for i in range(len(self))]


def generate(spec):
    """Draw a full dataset: uniform ages and identities, Gaussian noise."""
    warp = Warp(spec)
    ages = derive_rng(spec.sample_seed, "ages").integers(spec.age_lo, spec.age_hi + 1, size=spec.n_samples)
    ids = derive_rng(spec.sample_seed, "identities").integers(0, spec.n_identities, size=spec.n_samples)
    noise = spec.noise_sigma * derive_rng(spec.sample_seed, "noise").standard_normal(
        (spec.n_samples, spec.input_dim)
    )
    clean = np.stack([warp.features(int(a), int(i)) for a, i in zip(ages, ids)])
    return Dataset(clean + noise, ages, ids, spec)


def synth_across_groups(sample, scheme, spec, noise_seed, warp=None):
    """Synthesize one variant of `sample` at every other age group's center.

    Variants keep the sample's identity, move its age to the target group's
    representative age (clamped to the spec range), and draw fresh noise from
    noise_seed. Returns a list ordered by group index.
    """
    if warp is None:
        warp = Warp(spec)
    own_group = scheme.group_of(sample.y_age)
    first = scheme.group_of(spec.age_lo)
    last = scheme.group_of(spec.age_hi)
    rng = derive_rng(noise_seed, "group-synth", sample.y_id, int(sample.y_age))
    out = []
    for group in range(first, last + 1):
        if group == own_group:
            continue
        center = max(scheme.group_center(group, age_hi=spec.age_hi), spec.age_lo)
        noise = spec.noise_sigma * rng.standard_normal(spec.input_dim)
        out.append(Sample(warp.features(center, sample.y_id) + noise, center, sample.y_id))
    return out


@dataclass
class Batch:
    """Raw inputs for one step; is_synthetic marks group-synthesized rows."""

    x: np.ndarray
    y_age: np.ndarray
    y_id: np.ndarray
    is_synthetic: np.ndarray

    @property
    def size(self):
        return self.x.shape[0]


def sample_batch(dataset, size, seed, mode="age", scheme=None, warp=None):
    """Draw `size` samples without replacement; optionally expand per group.

    In "age" mode the batch is the plain draw. In "aifr" mode each drawn
    sample is joined by one synthesized variant per other age group, so the
    returned batch has size * num_groups rows. The draw and the synthesis
    noise are both deterministic in (dataset spec, seed).
    """
    n = len(dataset)
    if not 1 <= size <= n:
        raise DataError(f"batch size {size} outside [1, {n}]")
    if mode not in ("age", "aifr"):
        raise DataError(f"unknown batch mode {mode!r}")
    idx = derive_rng(seed, "batch-draw").choice(n, size=size, replace=False)
    idx.sort()
    x = dataset.x[idx]
    y_age = dataset.y_age[idx]
    y_id = dataset.y_id[idx]
    if mode == "age":
        return Batch(x, y_age, y_id, np.zeros(size, dtype=bool))
    if scheme is None:
        raise DataError("aifr batches need an age-group scheme")
    if warp is None:
        warp = Warp(dataset.spec)
    xs, ages, ids, synth = [x], [y_age], [y_id], [np.zeros(size, dtype=bool)]
    for row in range(size):
        variants = synth_across_groups(
            dataset.sample(int(idx[row])), scheme, dataset.spec, derive_seed(seed, "synth-noise", row), warp
        )
        if variants:
            xs.append(np.stack([v.x for v in variants]))
            ages.append(np.array([v.y_age for v in variants], dtype=np.int64))
            ids.append(np.array([v.y_id for v in variants], dtype=np.int64))
            synth.append(np.ones(len(variants), dtype=bool))
    return Batch(np.concatenate(xs), np.concatenate(ages), np.concatenate(ids), np.concatenate(synth))


def _sidecar_path(path):
    return os.fspath(path) + ".json"


def save_csv(dataset, path):
    """Write samples as CSV plus a JSON sidecar holding the spec."""
    path = os.fspath(path)
    header = ["y_age", "y_id"] + [f"x_{i}" for i in range(dataset.spec.input_dim)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [int(dataset.y_age[i]), int(dataset.y_id[i])]
            row.extend(repr(float(v)) for v in dataset.x[i])
            writer.writerow(row)
    sidecar = {"format_version": CSV_FORMAT_VERSION, "spec": dataset.spec.to_dict()}
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_csv(path):
    """Read a dataset written by save_csv; malformed inputs raise DataError."""
    path = os.fspath(path)
    sidecar_path = _sidecar_path(path)
    if not os.path.exists(sidecar_path):
        raise DataError(f"missing spec sidecar {sidecar_path}")
    try:
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)
        spec = SyntheticSpec.from_dict(sidecar["spec"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed spec sidecar {sidecar_path}: {exc}") from exc
    expected_header = ["y_age", "y_id"] + [f"x_{i}" for i in range(spec.input_dim)]
    ages, ids, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if header != expected_header:
            raise DataError(f"unexpected CSV header in {path}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected_header):
                raise DataError(f"{path}:{lineno}: expected {len(expected_header)} fields, got {len(row)}")
            try:
                ages.append(int(row[0]))
                ids.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    x = np.array(rows) if rows else np.zeros((0, spec.input_dim))
    return Dataset(x, np.array(ages, dtype=np.int64), np.array(ids, dtype=np.int64), spec)
