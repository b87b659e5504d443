"""Rebuild the bundled MNIST subset as gzipped IDX files.

Source: the `mnist` npm package (v1.1.0, MIT), which ships 10 000 MNIST
digits as per-class JSON arrays of pixel intensities rounded to 3 decimals.
Each value is mapped back to its original byte with round(v * 255); the
rounding is lossless because byte steps (1/255) exceed 1e-3.

The 10 000 samples are shuffled with a fixed seed and split into a
1 000-image test file (t10k-*) and a 9 000-image training file (train-*).

Usage: python3 scripts/mnist_from_npm.py <path to unpacked npm package> <out dir>
"""
import gzip
import json
import os
import random
import struct
import sys


def main(pkg, out):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        for k in range(len(flat) // 784):
            px = flat[k * 784:(k + 1) * 784]
            b = bytes(int(round(v * 255)) for v in px)
            assert all(abs(x / 255 - v) < 6e-4 for x, v in zip(b, px))
            images.append(b)
            labels.append(digit)
    order = list(range(len(images)))
    random.Random(20230601).shuffle(order)
    test, train = order[:1000], order[1000:]
    os.makedirs(out, exist_ok=True)
    for name, idx in (("t10k", test), ("train", train)):
        with gzip.GzipFile(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x803, len(idx), 28, 28))
            for i in idx:
                f.write(images[i])
        with gzip.GzipFile(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x801, len(idx)))
            f.write(bytes(labels[i] for i in idx))
    print(len(images), "images;", "train", len(train), "test", len(test))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
