#!/usr/bin/env python3
"""Write VGG-19 conv weights as safetensors with names conv{b}_{i}.weight/.bias.

    python scripts/convert_vgg19.py vgg19.safetensors             # torchvision ImageNet weights
    python scripts/convert_vgg19.py vgg19.safetensors --checkpoint vgg19-dcbb9e9d.pth
    python scripts/convert_vgg19.py random.safetensors --random-seed 0
"""

import argparse
import json
import struct

import numpy as np

# Indices of the conv layers inside torchvision's vgg19().features.
FEATURE_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]
NAMES = [
    f"conv{b}_{i}"
    for b, n in [(1, 2), (2, 2), (3, 4), (4, 4), (5, 4)]
    for i in range(1, n + 1)
]
CHANNELS = [3, 64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512]


def write_safetensors(path, tensors):
    header, offset, blobs = {}, 0, []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        header[name] = {"dtype": "F32", "shape": list(arr.shape), "data_offsets": [offset, offset + len(data)]}
        offset += len(data)
        blobs.append(data)
    raw = json.dumps(header, separators=(",", ":")).encode()
    raw += b" " * (-len(raw) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)


def from_torchvision(checkpoint):
    import torch
    import torchvision

    if checkpoint:
        model = torchvision.models.vgg19()
        model.load_state_dict(torch.load(checkpoint, map_location="cpu"))
    else:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    out = {}
    for name, idx in zip(NAMES, FEATURE_INDICES):
        conv = model.features[idx]
        out[f"{name}.weight"] = conv.weight.detach().numpy()
        out[f"{name}.bias"] = conv.bias.detach().numpy()
    return out


def random_weights(seed):
    rng = np.random.default_rng(seed)
    out = {}
    for k, name in enumerate(NAMES):
        cin, cout = CHANNELS[k], CHANNELS[k + 1]
        std = np.sqrt(2.0 / (cin * 9))
        out[f"{name}.weight"] = rng.normal(0.0, std, size=(cout, cin, 3, 3)).astype(np.float32)
        out[f"{name}.bias"] = rng.uniform(-0.05, 0.05, size=(cout,)).astype(np.float32)
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("out")
    p.add_argument("--checkpoint", help="local torchvision vgg19 state dict instead of downloading")
    p.add_argument("--random-seed", type=int, help="He-normal random weights instead of pretrained ones")
    args = p.parse_args()
    tensors = random_weights(args.random_seed) if args.random_seed is not None else from_torchvision(args.checkpoint)
    write_safetensors(args.out, tensors)
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
