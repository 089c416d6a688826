"""Write a 5000-digit MNIST subset as IDX files.

The digits come from ``mnist_5k.csv.gz`` shipped inside the mlxtend wheel
(500 images per class, rows are 784 pixels followed by the label).  Get the
wheel without installing it::

    pip download --no-deps -d /tmp mlxtend
    python scripts/build_mnist_subset.py /tmp/mlxtend-*.whl data/mnist5k

The rows are shuffled with a fixed seed and split 4000 train / 1000 test.
"""

import argparse
import gzip
import io
import os
import sys
import zipfile

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from strattack.data import write_idx_images, write_idx_labels  # noqa: E402

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel", help="mlxtend wheel file or the mnist_5k.csv.gz itself")
    parser.add_argument("out", help="output directory")
    parser.add_argument("--num-test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.wheel.endswith(".whl"):
        blob = zipfile.ZipFile(args.wheel).read(MEMBER)
    else:
        with open(args.wheel, "rb") as f:
            blob = f.read()
    table = np.loadtxt(io.StringIO(gzip.decompress(blob).decode()), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)

    order = np.random.default_rng(args.seed).permutation(len(labels))
    test, train = order[: args.num_test], order[args.num_test :]

    os.makedirs(args.out, exist_ok=True)
    for prefix, idx in (("train", train), ("t10k", test)):
        write_idx_images(os.path.join(args.out, f"{prefix}-images-idx3-ubyte.gz"), pixels[idx])
        write_idx_labels(os.path.join(args.out, f"{prefix}-labels-idx1-ubyte.gz"), labels[idx])
    print(f"wrote {len(train)} train / {len(test)} test digits to {args.out}")


if __name__ == "__main__":
    main()
