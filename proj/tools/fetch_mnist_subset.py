#!/usr/bin/env python3
"""Builds <root>/mnist-subset as MNIST-style IDX files.

The digits come from the npm package `mnist` (10,000 MNIST digits stored as
JSON intensities). They are shuffled with a fixed seed and cut into a train
file and a test file; the loader splits train into train/valid itself.
"""

import argparse
import json
import pathlib
import struct
import subprocess
import sys
import tarfile
import tempfile

import numpy as np

PACKAGE = "mnist@1.1.0"
PIXELS = 28 * 28


def fetch_tarball(workdir: pathlib.Path) -> pathlib.Path:
    out = subprocess.run(["npm", "pack", PACKAGE, "--silent"], cwd=workdir, check=True,
                         capture_output=True, text=True)
    return workdir / out.stdout.strip().splitlines()[-1]


def read_digits(tarball: pathlib.Path):
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            values = np.asarray(json.load(member)["data"], dtype=np.float64)
            if values.size % PIXELS:
                sys.exit(f"digit {digit}: {values.size} values is not a multiple of {PIXELS}")
            rows = values.reshape(-1, PIXELS)
            images.append(np.rint(rows * 255.0).clip(0, 255).astype(np.uint8))
            labels.append(np.full(len(rows), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_images(path: pathlib.Path, images: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.tobytes())


def write_labels(path: pathlib.Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", required=True, type=pathlib.Path, help="data root; writes <root>/mnist-subset")
    parser.add_argument("--tarball", type=pathlib.Path, help="use a local copy of the npm tarball")
    parser.add_argument("--train", type=int, default=6000, help="rows in the train file (train + valid)")
    parser.add_argument("--test", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = args.root / "mnist-subset"
    names = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    if all((out / n).exists() for n in names):
        print(f"{out} already present")
        return

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball or fetch_tarball(pathlib.Path(tmp))
        images, labels = read_digits(tarball)

    if args.train + args.test > len(images):
        sys.exit(f"need {args.train + args.test} digits, the package has {len(images)}")
    order = np.random.default_rng(args.seed).permutation(len(images))
    train, test = order[:args.train], order[args.train:args.train + args.test]

    out.mkdir(parents=True, exist_ok=True)
    write_images(out / names[0], images[train])
    write_labels(out / names[1], labels[train])
    write_images(out / names[2], images[test])
    write_labels(out / names[3], labels[test])
    print(f"wrote {len(train)} train and {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
