#!/usr/bin/env python3
"""Build IDX files from the `mnist` npm package for offline environments.

The npm package bundles roughly one thousand grayscale digit images per
class (values in [0, 1]). This script converts them into the standard IDX
container pair, with a seeded split into train and test portions.

The result is a real-digit dataset suitable for the rank-k probe at
subsampled scale. It is NOT the canonical 60000/10000 split, so the ridge
baseline table (which is calibrated against the full training set) will not
reproduce from it.

Usage:
  python3 tools/mnist_npm_to_idx.py --out data/mnist [--npm-dir DIR]
                                    [--test-fraction 0.2] [--seed 0]

If --npm-dir is not given, the script runs `npm pack mnist` into a temp
directory and extracts the payload.
"""

import argparse
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile


def fetch_npm_package(tmp: str) -> str:
    subprocess.run(["npm", "pack", "mnist"], cwd=tmp, check=True,
                   stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    tarballs = [f for f in os.listdir(tmp) if f.startswith("mnist-") and f.endswith(".tgz")]
    if not tarballs:
        raise RuntimeError("npm pack mnist produced no tarball")
    with tarfile.open(os.path.join(tmp, tarballs[0])) as tar:
        tar.extractall(tmp)
    return os.path.join(tmp, "package")


def load_digits(pkg_dir: str):
    digits = {}
    for d in range(10):
        path = os.path.join(pkg_dir, "src", "digits", f"{d}.json")
        with open(path) as fh:
            payload = json.load(fh)
        flat = payload["data"] if isinstance(payload, dict) else payload
        if isinstance(flat[0], list):
            digits[d] = flat
        else:
            if len(flat) % 784 != 0:
                raise RuntimeError(f"{path}: payload is not a multiple of 784")
            digits[d] = [flat[i:i + 784] for i in range(0, len(flat), 784)]
    return digits


def write_idx(images, labels, images_path: str, labels_path: str) -> None:
    count = len(images)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, count, 28, 28))
        for img in images:
            fh.write(bytes(min(255, max(0, round(p * 255))) for p in img))
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, count))
        fh.write(bytes(labels))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory for the IDX files")
    ap.add_argument("--npm-dir", default="", help="already-extracted npm package directory")
    ap.add_argument("--test-fraction", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.npm_dir or fetch_npm_package(tmp)
        digits = load_digits(pkg)

        rng = random.Random(args.seed)
        samples = [(img, d) for d in range(10) for img in digits[d]]
        rng.shuffle(samples)
        n_test = int(len(samples) * args.test_fraction)
        test, train = samples[:n_test], samples[n_test:]

        write_idx([s[0] for s in train], [s[1] for s in train],
                  os.path.join(args.out, "train-images-idx3-ubyte"),
                  os.path.join(args.out, "train-labels-idx1-ubyte"))
        write_idx([s[0] for s in test], [s[1] for s in test],
                  os.path.join(args.out, "t10k-images-idx3-ubyte"),
                  os.path.join(args.out, "t10k-labels-idx1-ubyte"))
        print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
