"""Export 2-D PCA views of a trained feature space for external plotting.

Writes three CSVs from a checkpoint and a dataset: raw features, their PCA
projection (with age and identity labels per row), and the projection of the
proxy bank through the same kind of decomposition so the learned ordinal
layout of the proxies can be drawn alongside the samples.

Typical use:
    python scripts/export_feature_space.py --checkpoint runs/age0/finetuned.json \
        --data runs/data.csv --out-dir runs/age0/viz
"""

import argparse
import json
import os
import sys

from ordcon.checkpoints import load_checkpoint
from ordcon.errors import DataError
from ordcon.evaluation import encode_dataset, export_features, pca_project
from ordcon.synth import load_csv


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset CSV (gen-data output)")
    p.add_argument("--space", default="age", choices=["age", "id"])
    p.add_argument("--pca", type=int, default=2)
    p.add_argument("--out-dir", required=True)
    return p.parse_args()


def write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def main():
    args = parse_args()
    dataset = load_csv(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    os.makedirs(args.out_dir, exist_ok=True)

    export_features(ckpt, dataset, os.path.join(args.out_dir, "features.csv"),
                    space=args.space)

    z_age, z_id, _ = encode_dataset(ckpt, dataset)
    z = z_age if args.space == "age" else z_id
    if z is None:
        raise DataError("this checkpoint has no identity head to project")
    projected, ratios = pca_project(z, args.pca)
    rows = [
        [int(dataset.y_age[i]), int(dataset.y_id[i])] + [repr(float(v)) for v in projected[i]]
        for i in range(projected.shape[0])
    ]
    header = ["y_age", "y_id"] + [f"p_{i}" for i in range(args.pca)]
    write_rows(os.path.join(args.out_dir, "samples_pca.csv"), header, rows)

    # the proxies are few, so cap the projection rank at what they can carry
    k = min(args.pca, ckpt.bank.vectors.shape[0] - 1, ckpt.bank.vectors.shape[1])
    prox_proj, prox_ratios = pca_project(ckpt.bank.vectors, k)
    labels = range(ckpt.bank.label_lo, ckpt.bank.label_hi + 1)
    rows = [
        [label] + [repr(float(v)) for v in prox_proj[i]]
        for i, label in enumerate(labels)
    ]
    write_rows(os.path.join(args.out_dir, "proxies_pca.csv"),
               ["label"] + [f"p_{i}" for i in range(k)], rows)

    with open(os.path.join(args.out_dir, "pca.json"), "w") as fh:
        json.dump({
            "samples_explained_variance_ratio": [float(r) for r in ratios],
            "proxies_explained_variance_ratio": [float(r) for r in prox_ratios],
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"feature space exports -> {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
