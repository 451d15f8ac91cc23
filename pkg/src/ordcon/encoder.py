"""Feedforward encoder with ordinal and identity heads, plus the age head.

The trunk is a stack of dense layers with a pointwise activation; two
bias-free linear heads map the trunk output to the ordinal feature space and
(optionally) the identity feature space. In the identity pipeline a
gradient-reversal node can be inserted between the trunk and the ordinal
head so ordinal supervision pushes the trunk away from age information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeMismatchError
from .seeding import derive_rng

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture description; d_id == 0 means no identity head."""

    input_dim: int = 32
    hidden_dims: tuple = (64, 64)
    d_age: int = 16
    d_id: int = 16
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, self.d_age) + self.hidden_dims
        if any(d < 1 for d in dims):
            raise ConfigError(f"encoder dimensions must be >= 1, got {dims}")
        if self.d_id < 0:
            raise ConfigError(f"d_id must be >= 0, got {self.d_id}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")

    @property
    def has_identity_head(self):
        return self.d_id > 0

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "d_age": self.d_age,
            "d_id": self.d_id,
            "activation": self.activation,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["hidden_dims"] = tuple(d["hidden_dims"])
        return EncoderSpec(**d)


class ParamGroup:
    """Named float64 arrays bound lazily to a tape as gradient leaves.

    Binding is cached per tape so one optimization step sees exactly one leaf
    per parameter no matter how many ops consume it.
    """

    def __init__(self, arrays):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self._bound_tape = None
        self._bound = None
        self._bound_rg = None

    def on_tape(self, tape, requires_grad=True):
        if self._bound_tape is not tape or self._bound_rg != requires_grad:
            self._bound = {k: tape.leaf(v, requires_grad=requires_grad) for k, v in self.arrays.items()}
            self._bound_tape = tape
            self._bound_rg = requires_grad
        return self._bound

    def grads_from(self, grad_map):
        """Pull one gradient array per parameter out of a GradMap."""
        return {k: grad_map[t] for k, t in self._bound.items()}

    def clone_arrays(self):
        return {k: v.copy() for k, v in self.arrays.items()}


class EncoderParams:
    """Trainable encoder state: a ParamGroup plus its architecture spec."""

    def __init__(self, spec, arrays):
        self.spec = spec
        self.group = ParamGroup(arrays)

    @property
    def arrays(self):
        return self.group.arrays

    def clone(self):
        return EncoderParams(self.spec, self.group.clone_arrays())


def _uniform_fan_in(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_encoder(spec):
    """Fan-in-scaled uniform weights, zero biases, bias-free heads."""
    rng = derive_rng(spec.seed, "encoder-init")
    arrays = {}
    prev = spec.input_dim
    for i, width in enumerate(spec.hidden_dims):
        arrays[f"w{i}"] = _uniform_fan_in(rng, prev, width)
        arrays[f"b{i}"] = np.zeros(width)
        prev = width
    arrays["w_age"] = _uniform_fan_in(rng, prev, spec.d_age)
    if spec.has_identity_head:
        arrays["w_id"] = _uniform_fan_in(rng, prev, spec.d_id)
    return EncoderParams(spec, arrays)


def _activate(x, name):
    if name == "tanh":
        return x.tanh()
    if name == "relu":
        return x.relu()
    return x


def forward(params, x, tape=None, reversal_strength=None, requires_grad=True, return_trunk=False):
    """Encode a batch into (z_age, z_id) feature tensors.

    x is a (batch, input_dim) array. reversal_strength, when not None,
    inserts a gradient-reversal node between the trunk and the ordinal head;
    the forward values are identical either way. z_id is None when the spec
    has no identity head.
    """
    spec = params.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeMismatchError(f"expected input shape (batch, {spec.input_dim}), got {x.shape}")
    if tape is None:
        tape = ad.Tape()
    leaves = params.group.on_tape(tape, requires_grad=requires_grad)
    h = tape.constant(x)
    for i in range(len(spec.hidden_dims)):
        h = _activate(ad.matmul(h, leaves[f"w{i}"]) + leaves[f"b{i}"], spec.activation)
    trunk = h
    if reversal_strength is not None:
        h = ad.grad_reverse(h, reversal_strength)
    z_age = ad.matmul(h, leaves["w_age"])
    z_id = ad.matmul(trunk, leaves["w_id"]) if spec.has_identity_head else None
    if return_trunk:
        return z_age, z_id, trunk
    return z_age, z_id


class RegressionHead:
    """Scalar linear readout w'z + b on the ordinal features."""

    def __init__(self, weight, bias):
        self.group = ParamGroup({"weight": np.asarray(weight, dtype=np.float64).reshape(-1),
                                 "bias": np.asarray(bias, dtype=np.float64).reshape(())})

    @property
    def arrays(self):
        return self.group.arrays

    @property
    def d_age(self):
        return self.arrays["weight"].shape[0]

    def clone(self):
        return RegressionHead(self.arrays["weight"].copy(), self.arrays["bias"].copy())


def init_head(d_age, seed):
    if d_age < 1:
        raise ConfigError(f"regression head dimension must be >= 1, got {d_age}")
    rng = derive_rng(seed, "head-init")
    return RegressionHead(_uniform_fan_in(rng, d_age, 1).reshape(-1), 0.0)


def predict_age(head, z_age, requires_grad=True):
    """Per-sample scalar age predictions, shape (batch,)."""
    if z_age.ndim != 2 or z_age.shape[1] != head.d_age:
        raise ShapeMismatchError(
            f"expected ordinal features (batch, {head.d_age}), got {z_age.shape}"
        )
    leaves = head.group.on_tape(z_age.tape, requires_grad=requires_grad)
    w = leaves["weight"].reshape((head.d_age, 1))
    out = ad.matmul(z_age, w).reshape((z_age.shape[0],))
    return out + leaves["bias"]
