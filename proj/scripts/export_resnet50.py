#!/usr/bin/env python3
"""Convert torchvision ResNet-50 ImageNet weights into a backbone-only checkpoint.

The output uses the same container as the C++ checkpoints and can be passed to
`ifse train --backbone-weights`. Only conv1, bn1 and layer1..layer3 are kept.
"""
import argparse
import json
import struct

import torch
import torchvision

KEEP = ("conv1.", "bn1.", "layer1.", "layer2.", "layer3.")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="output .ckpt path")
    ap.add_argument("--weights", default="IMAGENET1K_V1",
                    help="torchvision weight enum name, or 'none' for random init (format checks)")
    ap.add_argument("--state-dict", help="load a local state_dict .pth instead of downloading")
    args = ap.parse_args()

    weights = None if args.weights.lower() == "none" else args.weights
    net = torchvision.models.resnet50(weights=None if args.state_dict else weights)
    if args.state_dict:
        net.load_state_dict(torch.load(args.state_dict, map_location="cpu"))

    entries, blobs, offset = [], [], 0
    for name, t in net.state_dict().items():
        if not name.startswith(KEEP) or name.endswith("num_batches_tracked"):
            continue
        data = t.detach().to(torch.float32).contiguous().numpy().tobytes()
        entries.append({"name": "backbone." + name, "shape": list(t.shape), "dtype": "float32",
                        "offset": offset, "trainable": False})
        blobs.append(data)
        offset += len(data)

    header = json.dumps({"config": None, "version": "torchvision-resnet50-" + str(args.weights),
                         "metadata": {"source": "torchvision"}, "tensors": entries}).encode()
    with open(args.out, "wb") as f:
        f.write(b"IFSECKPT")
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    print(f"wrote {len(entries)} tensors ({offset / 2**20:.1f} MiB) to {args.out}")


if __name__ == "__main__":
    main()
