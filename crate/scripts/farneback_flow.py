#!/usr/bin/env python3
"""Dense optical flow for the external flow provider.

Usage: farneback_flow.py FROM.png TO.png OUT.flo

Writes the Farneback flow from FROM toward TO as a Middlebury .flo file.
"""
import sys

import cv2
import numpy as np

FLO_MAGIC = np.float32(202021.25)


def gray(path):
    img = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if img is None:
        sys.exit(f"cannot read {path}")
    return img


def write_flo(path, flow):
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC.astype("<f4").tobytes())
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(flow.astype("<f4").tobytes())


def main():
    if len(sys.argv) != 4:
        sys.exit(__doc__.strip())
    a, b = gray(sys.argv[1]), gray(sys.argv[2])
    if a.shape != b.shape:
        sys.exit(f"size mismatch: {a.shape} vs {b.shape}")
    flow = cv2.calcOpticalFlowFarneback(a, b, None, 0.5, 3, 9, 5, 5, 1.1, 0)
    write_flo(sys.argv[3], flow)


if __name__ == "__main__":
    main()
