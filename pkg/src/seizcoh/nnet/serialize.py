"""Self-describing binary model files.

Layout: ``MAGIC`` | uint16 version | uint32 header length | JSON header |
raw little-endian arrays in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import spec_from_dict, spec_to_dict
from .network import Network, TrainConfig, TrainedModel

MAGIC = b"SZNNET\x00"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def save_model(model: TrainedModel, path) -> Path:
    net = model.network
    arrays, entries = [], []
    for kind, items in (("param", net.parameters()), ("buffer", net.buffers())):
        for idx, name, arr in items:
            a = np.ascontiguousarray(arr, dtype=net.dtype.newbyteorder("<"))
            entries.append({"kind": kind, "layer": idx, "name": name, "shape": list(a.shape)})
            arrays.append(a.tobytes())
    header = {
        "specs": [spec_to_dict(s) for s in net.specs],
        "input_shape": list(net.input_shape),
        "dtype": net.dtype.str.lstrip("<>|="),
        "seed": net.seed,
        "config": model.config.to_dict(),
        "history": model.history,
        "arrays": entries,
    }
    blob = json.dumps(header).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(a)
    return path


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ModelFormatError(f"{path}: not a model file")
        version, n = struct.unpack("<HI", fh.read(6))
        if version != VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        header = json.loads(fh.read(n))
        dtype = np.dtype(header["dtype"]).newbyteorder("<")
        net = Network([spec_from_dict(s) for s in header["specs"]], header["input_shape"],
                      seed=header["seed"], dtype=dtype.newbyteorder("="))
        layers = {l.index: l for l in net.layers}
        for e in header["arrays"]:
            count = int(np.prod(e["shape"])) if e["shape"] else 1
            a = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype).reshape(e["shape"])
            store = layers[e["layer"]].params if e["kind"] == "param" else layers[e["layer"]].buffers
            store[e["name"]] = a.astype(net.dtype)
    return TrainedModel(net, TrainConfig(**header["config"]), header["history"])
