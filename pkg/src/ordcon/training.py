"""Training pipelines: contrastive pretraining, head finetuning, identity.

All pipelines share one SGD-with-momentum step, derive every stochastic
choice from the config seed, and rebuild a fresh tape per step. Losses are
checked for finiteness each step; a non-finite loss aborts the run with the
failing epoch attached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoints import Checkpoint, check_data_compatible
from .encoder import EncoderSpec, forward, init_encoder, init_head, predict_age
from .errors import ConfigError, MissingGradientError, NumericalError
from .losses import (
    LabeledBatch,
    LossConfig,
    age_l1_loss,
    contrast_loss,
    grl_strength,
    identity_contrastive_loss,
)
from .proxies import AgeGroupScheme, init_proxies
from .seeding import derive_rng, derive_seed
from .synth import Warp, sample_batch


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one run.

    batch_size is the pre-expansion draw size (aifr batches grow by one
    synthesized row per extra age group). grl_start_epoch is the epoch at
    which gradient reversal switches on in aifr mode; before it the two heads
    train as plain multitask.
    """

    mode: str = "age"
    epochs_pretrain: int = 30
    epochs_finetune: int = 10
    grl_start_epoch: int = 30
    batch_size: int = 256
    finetune_batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    freeze_encoder: bool = True
    grl_enabled: bool = True
    group_granularity: int = 6
    group_origin: int | None = None
    identity_loss_weight: float = 1.0
    contrast_loss_weight: float = 1.0
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.mode not in ("age", "aifr"):
            raise ConfigError(f"mode must be 'age' or 'aifr', got {self.mode!r}")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.batch_size < 2 or self.finetune_batch_size < 1:
            raise ConfigError("batch_size must be >= 2 and finetune_batch_size >= 1")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.group_granularity < 1:
            raise ConfigError(f"group_granularity must be >= 1, got {self.group_granularity}")
        if self.mode == "aifr" and self.grl_enabled and self.epochs_pretrain > 0:
            if not 0 <= self.grl_start_epoch < self.epochs_pretrain:
                raise ConfigError(
                    f"grl_start_epoch {self.grl_start_epoch} must lie in [0, {self.epochs_pretrain})"
                )
        if self.identity_loss_weight < 0.0 or self.contrast_loss_weight < 0.0:
            raise ConfigError("loss mix weights must be >= 0")

    def to_dict(self):
        d = {
            "mode": self.mode,
            "epochs_pretrain": self.epochs_pretrain,
            "epochs_finetune": self.epochs_finetune,
            "grl_start_epoch": self.grl_start_epoch,
            "batch_size": self.batch_size,
            "finetune_batch_size": self.finetune_batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "freeze_encoder": self.freeze_encoder,
            "grl_enabled": self.grl_enabled,
            "group_granularity": self.group_granularity,
            "group_origin": self.group_origin,
            "identity_loss_weight": self.identity_loss_weight,
            "contrast_loss_weight": self.contrast_loss_weight,
            "seed": self.seed,
        }
        d["loss"] = self.loss.to_dict()
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossConfig.from_dict(d["loss"])
        return TrainConfig(**d)


class SgdState:
    """Per-parameter velocity buffers for classical momentum."""

    def __init__(self):
        self.velocity = {}


def sgd_step(arrays, grads, state, lr, momentum, weight_decay):
    """One in-place SGD update: v = m*v + g + wd*p; p -= lr*v.

    Every parameter must have a gradient entry; a missing one is a
    MissingGradientError rather than a silent skip.
    """
    for name, param in arrays.items():
        if name not in grads:
            raise MissingGradientError(f"no gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != param.shape:
            raise MissingGradientError(f"gradient shape {g.shape} != param shape {param.shape} for {name!r}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(param)
        v = momentum * v + g + weight_decay * param
        state.velocity[name] = v
        param -= lr * v
    return state


def _check_finite(loss_value, epoch):
    if not math.isfinite(loss_value):
        raise NumericalError(f"loss became non-finite ({loss_value})", epoch=epoch)


def _steps_per_epoch(n, batch_size):
    return max(1, n // batch_size)


# Direction-vector gradients scale like 1/||z_i - z_j||, so one near-coincident
# pair can spike the step size by orders of magnitude and saturate the tanh
# trunk into a lattice of colliding features. Capping each parameter group's
# global gradient norm keeps the update scale bounded without touching the
# loss values themselves.
GRAD_CLIP_NORM = 5.0


def _clip_grads(grads, max_norm=None):
    if max_norm is None:
        max_norm = GRAD_CLIP_NORM
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}


def pretrain_age(dataset, cfg, encoder_spec=None, config_echo=None):
    """Contrastive pretraining of the ordinal feature space on age labels.

    Trains encoder and proxies jointly; the regression head is initialized
    but untouched. Returns the checkpoint after cfg.epochs_pretrain epochs
    (the pristine initialization when that is zero).
    """
    if encoder_spec is None:
        encoder_spec = EncoderSpec(
            input_dim=dataset.spec.input_dim, d_id=0, seed=derive_seed(cfg.seed, "encoder")
        )
    params = init_encoder(encoder_spec)
    bank = init_proxies(dataset.y_age, encoder_spec.d_age, derive_seed(cfg.seed, "proxies"))
    head = init_head(encoder_spec.d_age, derive_seed(cfg.seed, "head"))
    # start the readout at the label median so later L1 fitting spends its
    # clipped steps on the weights instead of walking the bias across decades
    head.arrays["bias"][...] = np.median(dataset.y_age)
    enc_state, bank_state = SgdState(), SgdState()
    batch_size = min(cfg.batch_size, len(dataset))
    trace = []
    for epoch in range(cfg.epochs_pretrain):
        epoch_losses = []
        for step in range(_steps_per_epoch(len(dataset), batch_size)):
            batch = sample_batch(dataset, batch_size, derive_seed(cfg.seed, "pretrain-batch", epoch, step))
            tape = ad.Tape()
            z_age, _ = forward(params, batch.x, tape)
            loss = contrast_loss(LabeledBatch(z_age, batch.y_age), bank, cfg.loss)
            _check_finite(loss.item(), epoch)
            grad_map = tape.backward(loss)
            sgd_step(params.arrays, _clip_grads(params.group.grads_from(grad_map)), enc_state,
                     cfg.lr, cfg.momentum, cfg.weight_decay)
            sgd_step({"proxies": bank.vectors},
                     _clip_grads({"proxies": grad_map[bank.tensor_on(tape)]}),
                     bank_state, cfg.lr, cfg.momentum, cfg.weight_decay)
            bank.check_norms()
            epoch_losses.append(loss.item())
            tape.release()
        trace.append(float(np.mean(epoch_losses)))
    return Checkpoint(
        mode="age",
        epoch=cfg.epochs_pretrain,
        encoder=params,
        head=head,
        bank=bank,
        config_echo=config_echo or {},
        loss_trace={"pretrain": trace},
    )


def finetune_age(ckpt, dataset, cfg):
    """L1 training of the scalar age head on top of a pretrained encoder.

    The encoder is frozen unless cfg.freeze_encoder is False. Returns a new
    checkpoint; the input checkpoint is not mutated.

    The returned parameters are the average of the iterates over the second
    half of the epochs. Constant-step subgradient descent on an L1 objective
    settles into a jitter band around the optimum instead of converging, and
    the band is wide when feature norms are large; averaging the tail of the
    trajectory recovers the band's center.
    """
    check_data_compatible(ckpt, dataset)
    out = ckpt.clone()
    params, head = out.encoder, out.head
    head_state, enc_state = SgdState(), SgdState()
    batch_size = min(cfg.finetune_batch_size, len(dataset))
    trace = []
    avg_start = cfg.epochs_finetune - (cfg.epochs_finetune + 1) // 2
    avg_sums, avg_count = {}, 0
    for epoch in range(cfg.epochs_finetune):
        epoch_losses = []
        for step in range(_steps_per_epoch(len(dataset), batch_size)):
            batch = sample_batch(dataset, batch_size, derive_seed(cfg.seed, "finetune-batch", epoch, step))
            tape = ad.Tape()
            z_age, _ = forward(params, batch.x, tape, requires_grad=not cfg.freeze_encoder)
            loss = age_l1_loss(predict_age(head, z_age), batch.y_age)
            _check_finite(loss.item(), epoch)
            grad_map = tape.backward(loss)
            sgd_step(head.arrays, _clip_grads(head.group.grads_from(grad_map)), head_state,
                     cfg.lr, cfg.momentum, cfg.weight_decay)
            if not cfg.freeze_encoder:
                sgd_step(params.arrays, _clip_grads(params.group.grads_from(grad_map)), enc_state,
                         cfg.lr, cfg.momentum, cfg.weight_decay)
            if epoch >= avg_start:
                live = [("head", n, a) for n, a in head.arrays.items()]
                if not cfg.freeze_encoder:
                    live += [("enc", n, a) for n, a in params.arrays.items()]
                for part, name, arr in live:
                    key = (part, name)
                    if key in avg_sums:
                        avg_sums[key] += arr
                    else:
                        avg_sums[key] = arr.copy()
                avg_count += 1
            epoch_losses.append(loss.item())
            tape.release()
        trace.append(float(np.mean(epoch_losses)))
    if avg_count:
        for name in head.arrays:
            head.arrays[name][...] = avg_sums[("head", name)] / avg_count
        if not cfg.freeze_encoder:
            for name in params.arrays:
                params.arrays[name][...] = avg_sums[("enc", name)] / avg_count
    out.epoch = ckpt.epoch + cfg.epochs_finetune
    out.loss_trace = dict(ckpt.loss_trace)
    out.loss_trace["finetune"] = trace
    return out


def reversal_strength_at(cfg, epoch):
    """Scheduled reversal strength for an aifr epoch; None before onset.

    Progress normalizes the post-onset epochs into [0, 1), so the strength is
    exactly 0 at the onset epoch and rises toward 1 afterwards.
    """
    if not cfg.grl_enabled or epoch < cfg.grl_start_epoch:
        return None
    span = cfg.epochs_pretrain - cfg.grl_start_epoch
    progress = (epoch - cfg.grl_start_epoch) / span
    return grl_strength(progress, cfg.loss.grl_growth_rate)


def train_aifr(dataset, cfg, encoder_spec=None, config_echo=None):
    """Joint identity + age-group contrastive training with scheduled reversal.

    Batches are expanded with synthesized cross-group variants; the ordinal
    objective runs on group labels with its own proxy bank. Before the onset
    epoch both objectives shape the trunk; afterwards the ordinal gradient
    reaches the trunk through the reversal node with scheduled strength.
    """
    if encoder_spec is None:
        encoder_spec = EncoderSpec(input_dim=dataset.spec.input_dim, seed=derive_seed(cfg.seed, "encoder"))
    if not encoder_spec.has_identity_head:
        raise ConfigError("aifr training needs an encoder spec with d_id > 0")
    scheme = AgeGroupScheme(
        cfg.group_granularity,
        dataset.spec.age_lo if cfg.group_origin is None else cfg.group_origin,
    )
    groups = scheme.groups_of(dataset.y_age)
    params = init_encoder(encoder_spec)
    bank = init_proxies(groups, encoder_spec.d_age, derive_seed(cfg.seed, "proxies"))
    head = init_head(encoder_spec.d_age, derive_seed(cfg.seed, "head"))
    head.arrays["bias"][...] = np.median(dataset.y_age)
    warp = Warp(dataset.spec)
    enc_state, bank_state = SgdState(), SgdState()
    batch_size = min(cfg.batch_size, len(dataset))
    traces = {"identity": [], "contrast": [], "total": []}
    for epoch in range(cfg.epochs_pretrain):
        reversal = reversal_strength_at(cfg, epoch)
        sums = {"identity": [], "contrast": [], "total": []}
        for step in range(_steps_per_epoch(len(dataset), batch_size)):
            batch = sample_batch(
                dataset, batch_size, derive_seed(cfg.seed, "aifr-batch", epoch, step),
                mode="aifr", scheme=scheme, warp=warp,
            )
            batch_groups = scheme.groups_of(batch.y_age)
            tape = ad.Tape()
            z_age, z_id = forward(params, batch.x, tape, reversal_strength=reversal)
            lb = LabeledBatch(z_age, batch_groups, z_id, batch.y_id)
            id_loss = identity_contrastive_loss(lb, cfg.loss)
            ord_loss = contrast_loss(lb, bank, cfg.loss)
            loss = cfg.identity_loss_weight * id_loss + cfg.contrast_loss_weight * ord_loss
            _check_finite(loss.item(), epoch)
            grad_map = tape.backward(loss)
            sgd_step(params.arrays, _clip_grads(params.group.grads_from(grad_map)), enc_state,
                     cfg.lr, cfg.momentum, cfg.weight_decay)
            sgd_step({"proxies": bank.vectors},
                     _clip_grads({"proxies": grad_map[bank.tensor_on(tape)]}),
                     bank_state, cfg.lr, cfg.momentum, cfg.weight_decay)
            bank.check_norms()
            sums["identity"].append(id_loss.item())
            sums["contrast"].append(ord_loss.item())
            sums["total"].append(loss.item())
            tape.release()
        for key in traces:
            traces[key].append(float(np.mean(sums[key])))
    return Checkpoint(
        mode="aifr",
        epoch=cfg.epochs_pretrain,
        encoder=params,
        head=head,
        bank=bank,
        scheme=scheme,
        config_echo=config_echo or {},
        loss_trace=traces,
    )


def _softmax_cross_entropy(logits, class_index, tape):
    """Mean CE over rows; class_index holds each row's true column."""
    n = logits.shape[0]
    shift = np.max(logits.value, axis=1, keepdims=True)
    shifted = logits - tape.constant(shift)
    log_norm = shifted.exp().sum(axis=1, keepdims=True).log() + tape.constant(shift)
    hot = np.zeros(logits.shape)
    hot[np.arange(n), class_index] = 1.0
    true_logit = (logits * tape.constant(hot)).sum(axis=1, keepdims=True)
    return (log_norm - true_logit).sum() / float(n)


def finetune_identity(ckpt, dataset, cfg):
    """Train a linear softmax identity classifier on frozen identity features.

    Only the classifier learns; rank-1 evaluation does not depend on it, so
    this is an optional readout on top of an aifr checkpoint.
    """
    check_data_compatible(ckpt, dataset)
    if not ckpt.encoder.spec.has_identity_head:
        raise ConfigError("identity finetuning needs a checkpoint with an identity head")
    out = ckpt.clone()
    classes = np.unique(dataset.y_id)
    class_of = {int(c): i for i, c in enumerate(classes)}
    d_id = ckpt.encoder.spec.d_id
    rng = derive_rng(cfg.seed, "id-classifier-init")
    clf = {
        "weight": rng.uniform(-1.0 / np.sqrt(d_id), 1.0 / np.sqrt(d_id), size=(d_id, classes.size)),
        "bias": np.zeros(classes.size),
        "classes": [int(c) for c in classes],
    }
    state = SgdState()
    batch_size = min(cfg.finetune_batch_size, len(dataset))
    trace = []
    for epoch in range(cfg.epochs_finetune):
        epoch_losses = []
        for step in range(_steps_per_epoch(len(dataset), batch_size)):
            batch = sample_batch(dataset, batch_size, derive_seed(cfg.seed, "id-finetune-batch", epoch, step))
            tape = ad.Tape()
            _, z_id = forward(out.encoder, batch.x, tape, requires_grad=False)
            w = tape.leaf(clf["weight"])
            b = tape.leaf(clf["bias"])
            logits = ad.matmul(z_id, w) + b.reshape((1, classes.size))
            targets = np.array([class_of[int(i)] for i in batch.y_id])
            loss = _softmax_cross_entropy(logits, targets, tape)
            _check_finite(loss.item(), epoch)
            grad_map = tape.backward(loss)
            sgd_step({"weight": clf["weight"], "bias": clf["bias"]},
                     _clip_grads({"weight": grad_map[w], "bias": grad_map[b]}),
                     state, cfg.lr, cfg.momentum, cfg.weight_decay)
            epoch_losses.append(loss.item())
            tape.release()
        trace.append(float(np.mean(epoch_losses)))
    out.id_classifier = clf
    out.epoch = ckpt.epoch + cfg.epochs_finetune
    out.loss_trace = dict(ckpt.loss_trace)
    out.loss_trace["identity_finetune"] = trace
    return out
