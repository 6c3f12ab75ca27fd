"""Binary model checkpoints.

Layout: ``NYSCKPT`` magic, uint32 format version, uint32 header length, a
UTF-8 JSON header (layer descriptors and tensor table), then little-endian
float64 tensor data. Landmarks live in sidecar files next to the
checkpoint and are referenced by name from the header.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .features import load_landmarks, save_landmarks
from .nn import AdaptiveNystromLayer, DenseLayer, FastfoodLayer, LayerStack, MultiKernelLayer

MAGIC = b"NYSCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _describe(layer, path, tensors, prefix, sidecars):
    if isinstance(layer, DenseLayer):
        desc = {"type": "dense", "activation": layer.activation}
    elif isinstance(layer, AdaptiveNystromLayer):
        name = f"{path.name}.lmk{len(sidecars)}"
        sidecars.append((name, layer.landmarks))
        return {"type": "nystrom", "adaptive": layer.adaptive, "landmarks": name,
                "w": _put(tensors, f"{prefix}w", layer.params["w"]) if layer.adaptive else None}
    elif isinstance(layer, MultiKernelLayer):
        desc = {"type": "multikernel",
                "sublayers": [_describe(s, path, tensors, f"{prefix}sub{i}.", sidecars)
                              for i, s in enumerate(layer.sublayers)]}
        if layer.group_slices is not None:
            desc["groups"] = [[s.start, s.stop] for s in layer.group_slices]
        return desc
    elif isinstance(layer, FastfoodLayer):
        desc = {"type": "fastfood", "adaptive": layer.adaptive, "in_dim": layer.in_dim,
                "perms": [p.tolist() for p in layer.perms], "sigmas": layer.sigmas}
        store = layer.params if layer.adaptive else layer.buffers
        desc["tensors"] = {k: _put(tensors, prefix + k, v) for k, v in store.items()}
        return desc
    else:
        raise CheckpointError(f"cannot serialize {type(layer).__name__}")
    desc["tensors"] = {k: _put(tensors, prefix + k, v) for k, v in layer.params.items()}
    return desc


def _put(tensors, name, arr):
    tensors.append((name, np.asarray(arr, dtype=np.float64)))
    return name


def save_checkpoint(stack, path):
    path = Path(path)
    tensors, sidecars = [], []
    layers = [_describe(l, path, tensors, f"{i}.", sidecars) for i, l in enumerate(stack.layers)]
    table, off = [], 0
    for name, arr in tensors:
        table.append({"name": name, "shape": list(arr.shape), "offset": off})
        off += arr.size
    header = json.dumps({"layers": layers, "tensors": table}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    for name, ls in sidecars:
        save_landmarks(ls, path.parent / name)


def load_checkpoint(path):
    path = Path(path)
    buf = path.read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, hlen = struct.unpack_from("<II", buf, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = len(MAGIC) + 8
    header = json.loads(buf[start:start + hlen].decode())
    data = np.frombuffer(buf, "<f8", offset=start + hlen).astype(np.float64)
    tensors = {}
    for t in header["tensors"]:
        size = int(np.prod(t["shape"])) if t["shape"] else 1
        if t["offset"] + size > data.size:
            raise CheckpointError(f"{path}: tensor {t['name']} truncated")
        tensors[t["name"]] = data[t["offset"]:t["offset"] + size].reshape(t["shape"]).copy()
    return LayerStack([_build(d, path, tensors) for d in header["layers"]])


def _build(desc, path, tensors):
    kind = desc["type"]
    if kind == "dense":
        t = desc["tensors"]
        return DenseLayer(tensors[t["weight"]], tensors[t["bias"]], desc["activation"])
    if kind == "nystrom":
        ls = load_landmarks(path.parent / desc["landmarks"])
        w = tensors[desc["w"]] if desc["adaptive"] else None
        return AdaptiveNystromLayer(ls, desc["adaptive"], w)
    if kind == "multikernel":
        subs = [_build(s, path, tensors) for s in desc["sublayers"]]
        groups = [slice(a, b) for a, b in desc["groups"]] if "groups" in desc else None
        return MultiKernelLayer(subs, groups)
    if kind == "fastfood":
        t = desc["tensors"]
        k = len(desc["perms"])
        return FastfoodLayer.from_arrays(
            [tensors[t[f"s{i}"]] for i in range(k)], [tensors[t[f"g{i}"]] for i in range(k)],
            [tensors[t[f"b{i}"]] for i in range(k)], desc["perms"], desc["sigmas"],
            desc["adaptive"], desc["in_dim"])
    raise CheckpointError(f"unknown layer type {kind!r}")
