"""Checkpoint serialization: everything needed to resume or evaluate a run.

Checkpoints are JSON holding the encoder spec and weights, the regression
head, the proxy bank, the optional group scheme and identity classifier, a
config echo, and the epoch counter. Files are written atomically (temp file
plus rename) so a crashed write never leaves a torn checkpoint, and floats
survive the round trip exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .encoder import EncoderParams, EncoderSpec, RegressionHead
from .errors import CheckpointError
from .proxies import AgeGroupScheme, ProxyBank

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Trained state of one pipeline stage."""

    mode: str
    epoch: int
    encoder: EncoderParams
    head: RegressionHead
    bank: ProxyBank
    scheme: Optional[AgeGroupScheme] = None
    id_classifier: Optional[dict] = None
    config_echo: dict = field(default_factory=dict)
    loss_trace: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def clone(self):
        return Checkpoint(
            mode=self.mode,
            epoch=self.epoch,
            encoder=self.encoder.clone(),
            head=self.head.clone(),
            bank=self.bank.clone(),
            scheme=self.scheme,
            id_classifier=None if self.id_classifier is None else {
                k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.id_classifier.items()
            },
            config_echo=dict(self.config_echo),
            loss_trace={k: list(v) for k, v in self.loss_trace.items()},
            format_version=self.format_version,
        )


def _atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt, path):
    """Serialize to JSON atomically; arrays become nested lists."""
    payload = {
        "format_version": ckpt.format_version,
        "mode": ckpt.mode,
        "epoch": ckpt.epoch,
        "encoder": {
            "spec": ckpt.encoder.spec.to_dict(),
            "arrays": {k: v.tolist() for k, v in ckpt.encoder.arrays.items()},
        },
        "head": {
            "weight": ckpt.head.arrays["weight"].tolist(),
            "bias": float(ckpt.head.arrays["bias"]),
        },
        "proxy_bank": {
            "label_lo": ckpt.bank.label_lo,
            "label_hi": ckpt.bank.label_hi,
            "seed": ckpt.bank.seed,
            "vectors": ckpt.bank.vectors.tolist(),
        },
        "scheme": None if ckpt.scheme is None else {
            "granularity": ckpt.scheme.granularity,
            "origin": ckpt.scheme.origin,
        },
        "id_classifier": None if ckpt.id_classifier is None else {
            "weight": np.asarray(ckpt.id_classifier["weight"]).tolist(),
            "bias": np.asarray(ckpt.id_classifier["bias"]).tolist(),
            "classes": [int(c) for c in ckpt.id_classifier["classes"]],
        },
        "config_echo": ckpt.config_echo,
        "loss_trace": ckpt.loss_trace,
    }
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Read a checkpoint; wrong versions or malformed files raise CheckpointError."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        spec = EncoderSpec.from_dict(payload["encoder"]["spec"])
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in payload["encoder"]["arrays"].items()}
        encoder = EncoderParams(spec, arrays)
        head = RegressionHead(payload["head"]["weight"], payload["head"]["bias"])
        pb = payload["proxy_bank"]
        bank = ProxyBank(pb["label_lo"], pb["label_hi"], np.asarray(pb["vectors"]), pb["seed"])
        scheme = payload["scheme"]
        if scheme is not None:
            scheme = AgeGroupScheme(scheme["granularity"], scheme["origin"])
        id_classifier = payload["id_classifier"]
        if id_classifier is not None:
            id_classifier = {
                "weight": np.asarray(id_classifier["weight"], dtype=np.float64),
                "bias": np.asarray(id_classifier["bias"], dtype=np.float64),
                "classes": [int(c) for c in id_classifier["classes"]],
            }
        return Checkpoint(
            mode=payload["mode"],
            epoch=int(payload["epoch"]),
            encoder=encoder,
            head=head,
            bank=bank,
            scheme=scheme,
            id_classifier=id_classifier,
            config_echo=payload.get("config_echo", {}),
            loss_trace=payload.get("loss_trace", {}),
            format_version=version,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc


def check_data_compatible(ckpt, dataset):
    """Reject evaluation of a checkpoint against mismatched feature dims."""
    want = ckpt.encoder.spec.input_dim
    have = dataset.spec.input_dim
    if want != have:
        raise CheckpointError(f"checkpoint expects input_dim {want} but dataset provides {have}")
