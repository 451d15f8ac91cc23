"""Proxy bank over an integer label chain, plus ordinal relations and groups.

One learnable vector per integer label in a closed range. The range always
carries one sentinel label on each side of the observed labels so that the
chain-neighbor reference directions (label-1 and label+1) exist for every
assignable label; sentinels are trainable but never assigned to samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import DataError, LabelRangeError, RelationError
from .seeding import derive_rng


class Relation(Enum):
    """Ordinal relation of an (anchor, partner) label pair."""

    PROGRESSIVE = "progressive"  # anchor label < partner label
    REGRESSIVE = "regressive"  # anchor label > partner label
    EQUAL = "equal"

    @staticmethod
    def of(label_i, label_j):
        if label_i < label_j:
            return Relation.PROGRESSIVE
        if label_i > label_j:
            return Relation.REGRESSIVE
        return Relation.EQUAL


@dataclass(frozen=True)
class AgeGroupScheme:
    """Uniform bucketing of ages into consecutive integer group labels."""

    granularity: int
    origin: int

    def __post_init__(self):
        if self.granularity < 1:
            raise DataError(f"group granularity must be >= 1, got {self.granularity}")

    def group_of(self, age):
        """Map an age to its group index; ages below the origin are rejected."""
        age = int(age)
        if age < self.origin:
            raise LabelRangeError(f"age {age} lies below group origin {self.origin}")
        return (age - self.origin) // self.granularity

    def groups_of(self, ages):
        """Vectorized group_of over an integer array."""
        ages = np.asarray(ages)
        if ages.size and ages.min() < self.origin:
            raise LabelRangeError(f"age {int(ages.min())} lies below group origin {self.origin}")
        return ((ages - self.origin) // self.granularity).astype(np.int64)

    def group_center(self, group, age_hi=None):
        """Representative age of a group: its middle (clamped to age_hi)."""
        center = self.origin + int(group) * self.granularity + (self.granularity - 1) // 2
        if age_hi is not None:
            center = min(center, int(age_hi))
        return center


class ProxyBank:
    """Learnable proxies for the closed label range [label_lo, label_hi].

    label_lo and label_hi are the sentinel endpoints; assignable labels are
    the interior. Vectors are stored as one (num_labels, dim) float64 matrix
    and bound lazily to a tape as a single gradient leaf, so every loss using
    the bank on one tape accumulates into the same gradient entry.
    """

    def __init__(self, label_lo, label_hi, vectors, seed):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DataError(f"proxy vectors must be 2-d, got shape {vectors.shape}")
        if label_hi - label_lo + 1 != vectors.shape[0]:
            raise DataError(
                f"label range [{label_lo}, {label_hi}] needs {label_hi - label_lo + 1} proxies, "
                f"got {vectors.shape[0]}"
            )
        if label_hi - label_lo + 1 < 3:
            raise DataError("a proxy bank needs at least one assignable label between its sentinels")
        self.label_lo = int(label_lo)
        self.label_hi = int(label_hi)
        self.vectors = vectors
        self.seed = int(seed)
        self._bound_tape = None
        self._bound = None

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def num_labels(self):
        return self.vectors.shape[0]

    @property
    def assignable_lo(self):
        return self.label_lo + 1

    @property
    def assignable_hi(self):
        return self.label_hi - 1

    def assignable_labels(self):
        return np.arange(self.assignable_lo, self.assignable_hi + 1)

    def row(self, label):
        """Row index of a label, sentinels included."""
        label = int(label)
        if label < self.label_lo or label > self.label_hi:
            raise LabelRangeError(f"label {label} outside proxy range [{self.label_lo}, {self.label_hi}]")
        return label - self.label_lo

    def rows_of(self, labels):
        """Vectorized `row` over an integer array."""
        labels = np.asarray(labels)
        if labels.size and (labels.min() < self.label_lo or labels.max() > self.label_hi):
            raise LabelRangeError(
                f"labels [{labels.min()}, {labels.max()}] fall outside proxy range "
                f"[{self.label_lo}, {self.label_hi}]"
            )
        return (labels - self.label_lo).astype(np.intp)

    def assign(self, label):
        """Proxy vector for an assignable (non-sentinel) label, as a view."""
        label = int(label)
        if label <= self.label_lo or label >= self.label_hi:
            raise LabelRangeError(
                f"label {label} is not assignable; assignable range is "
                f"[{self.assignable_lo}, {self.assignable_hi}]"
            )
        return self.vectors[self.row(label)]

    def tensor_on(self, tape, requires_grad=True):
        """Bind the proxy matrix to `tape` as one leaf, cached per tape."""
        if self._bound_tape is not tape or self._bound.requires_grad != requires_grad:
            self._bound = tape.leaf(self.vectors, requires_grad=requires_grad)
            self._bound_tape = tape
        return self._bound

    def bind_tensor(self, tensor):
        """Adopt an existing tensor as the live proxy matrix (for grad checks)."""
        if tensor.shape != self.vectors.shape:
            raise DataError(f"bound tensor shape {tensor.shape} != proxy shape {self.vectors.shape}")
        self._bound = tensor
        self._bound_tape = tensor.tape

    def check_norms(self):
        """Reject proxies whose norm collapsed below the floor (post-update check)."""
        norms = np.linalg.norm(self.vectors, axis=1)
        bad = np.nonzero(norms <= ad.NORM_FLOOR)[0]
        if bad.size:
            label = self.label_lo + int(bad[0])
            raise ad.NearZeroNormError(f"proxy for label {label} collapsed to norm {norms[bad[0]]:.3e}")

    def clone(self):
        return ProxyBank(self.label_lo, self.label_hi, self.vectors.copy(), self.seed)


def init_proxies(labels, dim, seed):
    """Create a ProxyBank covering [min(labels)-1, max(labels)+1].

    Proxies start as unit-norm random directions; the two sentinel labels are
    included so every assignable label has both chain neighbors.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("cannot build a proxy bank from an empty label set")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError("proxy labels must be integers")
    if dim < 1:
        raise DataError(f"proxy dimension must be >= 1, got {dim}")
    lo = int(labels.min()) - 1
    hi = int(labels.max()) + 1
    rng = derive_rng(seed, "proxy-init")
    vecs = rng.standard_normal((hi - lo + 1, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return ProxyBank(lo, hi, vecs, seed)


def proxy_direction(bank, label_a, label_b, tape=None):
    """Unit direction from proxy of label_b toward proxy of label_a.

    Differentiable with respect to both proxies when a live tape is supplied.
    Coincident proxies are a NearZeroNormError; equal labels are rejected.
    """
    if int(label_a) == int(label_b):
        raise RelationError(f"proxy direction needs distinct labels, got {label_a} twice")
    if tape is None:
        tape = ad.Tape()
    proxies = bank.tensor_on(tape)
    row_a = ad.gather_rows(proxies, np.array([bank.row(label_a)]))
    row_b = ad.gather_rows(proxies, np.array([bank.row(label_b)]))
    return ad.l2_normalize((row_a - row_b).reshape((bank.dim,)))


def reference_directions(bank, y_i, y_j, relation, tape=None):
    """Forward and backward reference directions for one ordered pair.

    Progressive (y_i < y_j): forward is the proxy direction from y_j's proxy
    toward y_i's, backward steps down the chain from y_i to y_i - 1.
    Regressive (y_i > y_j): forward steps up the chain from y_i to y_i + 1,
    backward is the direction from y_i's proxy toward y_j's.
    """
    if relation is Relation.EQUAL:
        raise RelationError("reference directions are undefined for equal labels")
    expected = Relation.of(y_i, y_j)
    if expected is not relation:
        raise RelationError(f"labels ({y_i}, {y_j}) realize {expected.value}, not {relation.value}")
    if tape is None:
        tape = ad.Tape()
    if relation is Relation.PROGRESSIVE:
        v_f = proxy_direction(bank, y_i, y_j, tape)
        v_b = proxy_direction(bank, y_i, y_i - 1, tape)
    else:
        v_f = proxy_direction(bank, y_i, y_i + 1, tape)
        v_b = proxy_direction(bank, y_j, y_i, tape)
    return v_f, v_b
