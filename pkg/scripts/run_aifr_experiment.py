"""Age-invariant identity experiment: gradient reversal on versus off.

Trains the joint identity + age-group pipeline twice with identical seeds
and data, once with the scheduled reversal and once without, then reports
the invariance trade: how much linearly decodable age information leaves
the identity features versus how much rank-1 identification gives up.

The default scale is deliberately smaller than the age-estimation default:
reversal training is adversarial, and each drawn batch expands by one
synthesized row per extra age group, so steps are wide and epochs long.

Typical use:
    python scripts/run_aifr_experiment.py --out-dir runs/aifr0
    python scripts/run_aifr_experiment.py --seed 2 --out-dir runs/aifr2
"""

import argparse
import dataclasses
import json
import os
import sys

from ordcon.checkpoints import save_checkpoint
from ordcon.config import config_to_json, load_config
from ordcon.evaluation import evaluate, export_metrics
from ordcon.synth import generate
from ordcon.training import train_aifr

HOLDOUT_SAMPLE_SEED = 1000

DESK_SCALE = {"n_samples": 480, "n_identities": 24, "age_lo": 16, "age_hi": 51}


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None, help="JSON run config (defaults when omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--full-scale", action="store_true",
                   help="keep the data section's own scale instead of the desk default")
    p.add_argument("--out-dir", required=True)
    return p.parse_args()


def main():
    args = parse_args()
    forced = {
        "train": {
            "mode": "aifr",
            "seed": args.seed,
            "epochs_pretrain": args.epochs,
            "grl_start_epoch": args.epochs // 2,
            "batch_size": args.batch_size,
        },
    }
    if not args.full_scale:
        forced["data"] = dict(DESK_SCALE)
    os.makedirs(args.out_dir, exist_ok=True)

    results = {}
    for grl_on in (True, False):
        tag = "grl_on" if grl_on else "grl_off"
        run = load_config(args.config, [], forced={
            **forced, "train": {**forced["train"], "grl_enabled": grl_on},
        })
        if grl_on:
            with open(os.path.join(args.out_dir, "config.json"), "w") as fh:
                fh.write(config_to_json(run.resolved))
        train_data = generate(run.data)
        holdout = generate(dataclasses.replace(run.data, sample_seed=HOLDOUT_SAMPLE_SEED))
        print(f"training {tag} ({run.train.epochs_pretrain} epochs, "
              f"reversal onset {run.train.grl_start_epoch})...")
        ckpt = train_aifr(train_data, run.train, encoder_spec=run.model,
                          config_echo=run.resolved)
        save_checkpoint(ckpt, os.path.join(args.out_dir, f"checkpoint_{tag}.json"))
        m = evaluate(ckpt, holdout)
        export_metrics(m, os.path.join(args.out_dir, f"metrics_{tag}.json"))
        results[tag] = m
        print(f"{tag:>8}: rank1 {m.rank1:.3f}  age_probe {m.age_probe_accuracy:.3f}  "
              f"order_consistency {m.order_consistency:.3f}")

    on, off = results["grl_on"], results["grl_off"]
    probe_drop = (off.age_probe_accuracy - on.age_probe_accuracy) / off.age_probe_accuracy
    rank1_drop = off.rank1 - on.rank1
    print(f"age probe drop: {100 * probe_drop:.1f}% relative")
    print(f"rank-1 change: {-rank1_drop:+.3f} absolute")
    summary = {
        "age_probe_relative_drop": probe_drop,
        "rank1_absolute_drop": rank1_drop,
        "grl_on": {"rank1": on.rank1, "age_probe": on.age_probe_accuracy},
        "grl_off": {"rank1": off.rank1, "age_probe": off.age_probe_accuracy},
    }
    with open(os.path.join(args.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"artifacts -> {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
