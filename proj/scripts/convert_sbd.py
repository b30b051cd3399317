#!/usr/bin/env python3
"""Write SBD class masks (cls/*.mat, GTcls.Segmentation) as 8-bit PNGs in cls_png/."""
import argparse
import pathlib

import numpy as np
import scipy.io
from PIL import Image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("sbd_root", help="directory holding cls/ (or dataset/cls/)")
    args = ap.parse_args()

    root = pathlib.Path(args.sbd_root)
    if not (root / "cls").is_dir() and (root / "dataset" / "cls").is_dir():
        root = root / "dataset"
    src, dst = root / "cls", root / "cls_png"
    dst.mkdir(exist_ok=True)
    mats = sorted(src.glob("*.mat"))
    for i, mat in enumerate(mats):
        seg = scipy.io.loadmat(mat, squeeze_me=False)["GTcls"][0, 0]["Segmentation"]
        Image.fromarray(np.asarray(seg, dtype=np.uint8), mode="L").save(dst / (mat.stem + ".png"))
        if (i + 1) % 1000 == 0:
            print(f"{i + 1}/{len(mats)}")
    print(f"converted {len(mats)} masks into {dst}")


if __name__ == "__main__":
    main()
