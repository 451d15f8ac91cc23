"""Run configuration: JSON files, dotted-key overrides, seed resolution.

A run config is a nested dict with sections data / model / loss / train plus
a top-level master seed. Missing values fall back to mode-specific defaults;
seeds left null are derived from the master seed, so the resolved echo of a
run is fully explicit and reproduces the run byte-for-byte.
"""

from __future__ import annotations

import copy
import json

from .encoder import EncoderSpec
from .errors import ConfigError, OrdconError
from .losses import LossConfig
from .seeding import derive_seed
from .synth import SyntheticSpec
from .training import TrainConfig


def default_config_dict(mode="age"):
    """Mode-specific defaults as a plain JSON-ready dict."""
    if mode not in ("age", "aifr"):
        raise ConfigError(f"mode must be 'age' or 'aifr', got {mode!r}")
    data = SyntheticSpec().to_dict()
    data["warp_seed"] = None
    data["sample_seed"] = None
    loss = LossConfig().to_dict()
    train = TrainConfig().to_dict()
    del train["loss"]
    train["mode"] = mode
    train["seed"] = None
    if mode == "aifr":
        # group expansion multiplies the drawn batch, so the draw is smaller
        train.update(epochs_pretrain=60, grl_start_epoch=30, batch_size=24)
    model = {
        "input_dim": None,  # synced with data.input_dim when left null
        "hidden_dims": [64, 64],
        "d_age": 16,
        "d_id": 16 if mode == "aifr" else 0,
        "activation": "tanh",
        "seed": None,
    }
    return {"seed": 0, "data": data, "model": model, "loss": loss, "train": train}


def _merge_section(defaults, provided, section):
    out = dict(defaults)
    for key, value in provided.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {section + '.' + key if section else key!r}")
        out[key] = value
    return out


def merge_config(provided):
    """Layer a partial config dict over the defaults for its mode."""
    if not isinstance(provided, dict):
        raise ConfigError("config root must be a JSON object")
    train_raw = provided.get("train", {})
    mode = train_raw.get("mode", "age") if isinstance(train_raw, dict) else "age"
    base = default_config_dict(mode)
    out = {"seed": provided.get("seed", base["seed"])}
    for section in ("data", "model", "loss", "train"):
        given = provided.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        out[section] = _merge_section(base[section], given, section)
    for key in provided:
        if key not in ("seed", "data", "model", "loss", "train"):
            raise ConfigError(f"unknown config key {key!r}")
    return out


def parse_override_value(text):
    """JSON when it parses, bare string otherwise (so tanh needs no quotes)."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, pairs):
    """Apply dotted-key overrides like ('train.lr', '0.01') in order."""
    config = copy.deepcopy(config)
    for key, raw in pairs:
        value = parse_override_value(raw)
        parts = key.split(".")
        if len(parts) == 1:
            if parts[0] != "seed":
                raise ConfigError(f"unknown top-level override {key!r}")
            config["seed"] = value
        elif len(parts) == 2 and parts[0] in ("data", "model", "loss", "train"):
            section = config[parts[0]]
            if parts[1] not in section:
                raise ConfigError(f"unknown config key {key!r}")
            section[parts[1]] = value
        else:
            raise ConfigError(f"override keys look like section.field or seed, got {key!r}")
    return config


class RunConfig:
    """Validated, fully-resolved configuration objects for one run."""

    def __init__(self, seed, data, model, train, resolved):
        self.seed = seed
        self.data = data
        self.model = model
        self.train = train
        self.resolved = resolved

    @property
    def loss(self):
        return self.train.loss


def resolve_config(config):
    """Fill derived values and construct the section dataclasses.

    Derivations: null data seeds come from the master seed, model.input_dim
    follows data.input_dim, model.seed and train.seed fall back to derived /
    master values, and age mode forces d_id to 0.
    """
    config = merge_config(config)
    master = config["seed"]
    if not isinstance(master, int) or isinstance(master, bool):
        raise ConfigError(f"seed must be an integer, got {master!r}")
    data = dict(config["data"])
    if data["warp_seed"] is None:
        data["warp_seed"] = derive_seed(master, "warp")
    if data["sample_seed"] is None:
        data["sample_seed"] = derive_seed(master, "samples")
    model = dict(config["model"])
    if model["input_dim"] is None:
        model["input_dim"] = data["input_dim"]
    if model["seed"] is None:
        model["seed"] = derive_seed(master, "encoder")
    train = dict(config["train"])
    if train["seed"] is None:
        train["seed"] = master
    mode = train["mode"]
    if mode == "age":
        model["d_id"] = 0
    elif model["d_id"] < 1:
        raise ConfigError("aifr mode needs model.d_id >= 1")
    if model["input_dim"] != data["input_dim"]:
        raise ConfigError(
            f"model.input_dim {model['input_dim']} != data.input_dim {data['input_dim']}"
        )
    try:
        data_spec = SyntheticSpec.from_dict(data)
    except (OrdconError, TypeError) as exc:
        raise ConfigError(f"invalid data section: {exc}") from exc
    try:
        model_spec = EncoderSpec.from_dict(model)
    except (OrdconError, TypeError) as exc:
        raise ConfigError(f"invalid model section: {exc}") from exc
    try:
        loss_cfg = LossConfig.from_dict(config["loss"])
        train_cfg = TrainConfig.from_dict({**train, "loss": config["loss"]})
    except (OrdconError, TypeError) as exc:
        raise ConfigError(f"invalid loss/train section: {exc}") from exc
    resolved = {
        "seed": master,
        "data": data_spec.to_dict(),
        "model": model_spec.to_dict(),
        "loss": loss_cfg.to_dict(),
        "train": {k: v for k, v in train_cfg.to_dict().items() if k != "loss"},
    }
    return RunConfig(master, data_spec, model_spec, train_cfg, resolved)


def load_config(path=None, overrides=(), forced=None):
    """Read a config file (defaults when None), apply overrides, resolve.

    `forced` is a dict of section -> {key: value} applied last; commands use
    it to pin things like train.mode regardless of file contents. The final
    mode is settled first so mode-dependent defaults apply correctly.
    """
    if path is None:
        raw = {}
    else:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    train_raw = raw.get("train", {})
    mode = train_raw.get("mode", "age") if isinstance(train_raw, dict) else "age"
    for key, value in overrides:
        if key == "train.mode":
            mode = parse_override_value(value)
    if forced and forced.get("train", {}).get("mode"):
        mode = forced["train"]["mode"]
    raw = copy.deepcopy(raw)
    raw.setdefault("train", {})
    raw["train"]["mode"] = mode
    merged = merge_config(raw)
    merged = apply_overrides(merged, overrides)
    if forced:
        for section, values in forced.items():
            merged[section].update(values)
    return resolve_config(merged)


def config_to_json(resolved):
    return json.dumps(resolved, indent=2, sort_keys=True) + "\n"
