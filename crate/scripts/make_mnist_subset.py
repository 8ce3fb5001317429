#!/usr/bin/env python3
"""Build the small MNIST subset shipped under data/mnist-subset/.

Source: the `mnist` npm package (MIT), which bundles 10,000 MNIST digits as
JSON arrays of 28x28 intensities in [0, 1]:

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-subset

Per digit class the first 200 images go to the training split and the next
100 to the test split; classes are interleaved round-robin. Intensities are
quantized back to bytes with round(v * 255).
"""
import json
import struct
import sys
from pathlib import Path

SIDE = 28
TRAIN_PER_CLASS = 200
TEST_PER_CLASS = 100


def load_digit(root: Path, digit: int):
    data = json.loads((root / f"{digit}.json").read_text())["data"]
    size = SIDE * SIDE
    return [data[i * size:(i + 1) * size] for i in range(len(data) // size)]


def write_images(path: Path, images):
    with path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))


def write_labels(path: Path, labels):
    with path.open("wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    per_digit = [load_digit(src, d) for d in range(10)]
    splits = {
        "train": (0, TRAIN_PER_CLASS),
        "t10k": (TRAIN_PER_CLASS, TRAIN_PER_CLASS + TEST_PER_CLASS),
    }
    for name, (lo, hi) in splits.items():
        images, labels = [], []
        for i in range(lo, hi):
            for d in range(10):
                images.append(per_digit[d][i])
                labels.append(d)
        write_images(dst / f"{name}-images-idx3-ubyte", images)
        write_labels(dst / f"{name}-labels-idx1-ubyte", labels)
        print(f"{name}: {len(images)} samples")


if __name__ == "__main__":
    main()
