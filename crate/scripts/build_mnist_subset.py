#!/usr/bin/env python3
"""Build an IDX-format MNIST subset from the 10,000 digits bundled in the
`mnist` npm package (v1.1.0).

The package stores each digit class as a JSON array of 784-pixel images with
values rounded to three decimals of p/255; multiplying by 255 and rounding
recovers the original bytes exactly.

Usage:
    npm pack mnist@1.1.0            # produces mnist-1.1.0.tgz
    python3 scripts/build_mnist_subset.py mnist-1.1.0.tgz data/mnist-subset

Writes gzip-compressed IDX files using the canonical MNIST file names:
    train-images-idx3-ubyte.gz / train-labels-idx1-ubyte.gz  (8000 images)
    t10k-images-idx3-ubyte.gz  / t10k-labels-idx1-ubyte.gz   (2000 images)
"""

import argparse
import gzip
import json
import os
import struct
import tarfile

import numpy as np

SPLIT_SEED = 20190807
N_TEST = 2000


def write_idx_images(path, images):
    n = images.shape[0]
    header = struct.pack(">IIII", 0x00000803, n, 28, 28)
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as f:
        f.write(header)
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    header = struct.pack(">II", 0x00000801, labels.shape[0])
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as f:
        f.write(header)
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("tarball")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    images, labels = [], []
    with tarfile.open(args.tarball) as tar:
        for digit in range(10):
            member = tar.getmember(f"package/src/digits/{digit}.json")
            data = np.array(json.load(tar.extractfile(member))["data"], dtype=np.float64)
            data = data.reshape(-1, 784)
            pixels = np.rint(data * 255.0)
            assert np.abs(pixels / 255.0 - data).max() < 1e-3
            images.append(pixels.astype(np.uint8))
            labels.append(np.full(data.shape[0], digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    order = np.random.default_rng(SPLIT_SEED).permutation(images.shape[0])
    images, labels = images[order], labels[order]
    test, train = slice(0, N_TEST), slice(N_TEST, None)

    os.makedirs(args.out_dir, exist_ok=True)
    write_idx_images(os.path.join(args.out_dir, "train-images-idx3-ubyte.gz"), images[train])
    write_idx_labels(os.path.join(args.out_dir, "train-labels-idx1-ubyte.gz"), labels[train])
    write_idx_images(os.path.join(args.out_dir, "t10k-images-idx3-ubyte.gz"), images[test])
    write_idx_labels(os.path.join(args.out_dir, "t10k-labels-idx1-ubyte.gz"), labels[test])
    print(f"train: {images[train].shape[0]} images, test: {images[test].shape[0]} images")
    print("train class counts:", np.bincount(labels[train], minlength=10).tolist())
    print("test class counts:", np.bincount(labels[test], minlength=10).tolist())


if __name__ == "__main__":
    main()
