#!/usr/bin/env python3
"""Builds an 8000/2000 MNIST subset in IDX format from the 10,000 digits
bundled with the `mnist` npm package.

usage: scripts/mnist_subset.py [OUT_DIR]   (default: data/mnist)
"""
import json
import pathlib
import random
import struct
import subprocess
import sys
import tarfile
import tempfile

TRAIN = 8000
SIDE = 28


def fetch(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True, capture_output=True)
    tgz = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir, filter="data")
    return workdir / "package" / "src" / "digits"


def write_idx(path: pathlib.Path, images, labels, label_path: pathlib.Path):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for im in images:
            f.write(bytes(im))
    with open(label_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        digits = fetch(pathlib.Path(tmp))
        samples = []
        for label in range(10):
            raw = json.loads((digits / f"{label}.json").read_text())["data"]
            n = len(raw) // (SIDE * SIDE)
            for i in range(n):
                px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
                samples.append(([min(255, max(0, round(v * 255))) for v in px], label))
    random.Random(0).shuffle(samples)
    train, test = samples[:TRAIN], samples[TRAIN:]
    write_idx(out / "train-images-idx3-ubyte", [s[0] for s in train], [s[1] for s in train],
              out / "train-labels-idx1-ubyte")
    write_idx(out / "t10k-images-idx3-ubyte", [s[0] for s in test], [s[1] for s in test],
              out / "t10k-labels-idx1-ubyte")
    print(f"{len(train)} train / {len(test)} test images -> {out}")


if __name__ == "__main__":
    main()
