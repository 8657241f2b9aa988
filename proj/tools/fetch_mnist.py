#!/usr/bin/env python3
"""Build IDX digit files from the `mnist` npm package.

The package ships 10,000 MNIST digits as JSON arrays of pixel/255 values
(three decimals, enough to recover the original bytes). The digits are
shuffled with a fixed seed and split into a training pair and a test pair
of standard IDX files (28x28, magic 0x803 / 0x801).
"""

import argparse
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile


def write_idx(prefix: pathlib.Path, images, labels):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20221)
    ap.add_argument("--package", help="already downloaded mnist-*.tgz")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.package
        if tgz is None:
            subprocess.run(["npm", "pack", "mnist", "--silent"], cwd=tmp, check=True)
            tgz = next(pathlib.Path(tmp).glob("mnist-*.tgz"))
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        records = []
        for digit in range(10):
            path = pathlib.Path(tmp) / "package" / "src" / "digits" / f"{digit}.json"
            data = json.loads(path.read_text())["data"]
            for k in range(len(data) // 784):
                px = [int(round(v * 255)) for v in data[k * 784:(k + 1) * 784]]
                records.append((px, digit))

    random.Random(args.seed).shuffle(records)
    test, train = records[:args.test], records[args.test:]
    write_idx(out / "train", [r[0] for r in train], [r[1] for r in train])
    write_idx(out / "t10k", [r[0] for r in test], [r[1] for r in test])
    print(f"wrote {len(train)} train / {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
