#!/usr/bin/env python3
"""Build the bundled handwritten-digit IDX fixture.

Renders scikit-learn's offline 8x8 digit scans to 14x14 and writes standard
big-endian IDX image/label files under data/. Committed output, rerun only to
regenerate the fixture.
"""
import struct

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits

OUT_IMAGES = "data/digits14-images-idx3-ubyte"
OUT_LABELS = "data/digits14-labels-idx1-ubyte"
SIDE = 14
COUNT = 1000
SEED = 20240611


def main():
    digits = load_digits()
    rng = np.random.RandomState(SEED)
    order = rng.permutation(len(digits.images))[:COUNT]

    images = np.zeros((COUNT, SIDE, SIDE), dtype=np.uint8)
    labels = np.zeros(COUNT, dtype=np.uint8)
    for k, idx in enumerate(order):
        img8 = (digits.images[idx] / 16.0 * 255.0).astype(np.uint8)
        img14 = Image.fromarray(img8, mode="L").resize((SIDE, SIDE), Image.BILINEAR)
        images[k] = np.asarray(img14)
        labels[k] = digits.target[idx]

    with open(OUT_IMAGES, "wb") as f:
        f.write(struct.pack(">iiii", 0x00000803, COUNT, SIDE, SIDE))
        f.write(images.tobytes())
    with open(OUT_LABELS, "wb") as f:
        f.write(struct.pack(">ii", 0x00000801, COUNT))
        f.write(labels.tobytes())
    print(f"wrote {COUNT} images {SIDE}x{SIDE}; class counts:",
          np.bincount(labels).tolist())


if __name__ == "__main__":
    main()
