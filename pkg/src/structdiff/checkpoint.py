"""Versioned binary checkpoint container plus JSON sidecar.

Layout: 4-byte magic, uint32 version, uint32 header length, header JSON
(array names/dtypes/shapes and free-form metadata), then the raw array
payloads little-endian in declaration order. Parameters are float32;
a uint8 array carries the training RNG state so resume is bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

MAGIC = b"SDCP"
VERSION = 1
_DTYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1"), "int64": np.dtype("<i8")}


def save_container(path, arrays: list[tuple[str, np.ndarray]], meta: dict) -> None:
    entries = []
    payloads = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        dtype = {np.float32: "float32", np.uint8: "uint8", np.int64: "int64"}.get(arr.dtype.type)
        if dtype is None:
            raise ValueError(f"unsupported array dtype {arr.dtype} for {name}")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payloads.append(arr.astype(_DTYPES[dtype]).tobytes())
    header = json.dumps({"arrays": entries, "meta": meta}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(VERSION).tobytes())
        f.write(np.uint32(len(header)).tobytes())
        f.write(header)
        for blob in payloads:
            f.write(blob)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint container")
        version = int(np.frombuffer(f.read(4), dtype=np.uint32)[0])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        hlen = int(np.frombuffer(f.read(4), dtype=np.uint32)[0])
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            dtype = _DTYPES[entry["dtype"]]
            n = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            raw = f.read(n * dtype.itemsize)
            if len(raw) != n * dtype.itemsize:
                raise ValueError(f"{path}: truncated payload for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def write_sidecar(path, config: dict, seed: int) -> None:
    with open(str(path) + ".json", "w") as f:
        json.dump({"config": config, "seed": seed}, f, indent=2, sort_keys=True)


def read_sidecar(path) -> dict:
    with open(str(path) + ".json") as f:
        return json.load(f)


def module_arrays(prefix: str, module: torch.nn.Module) -> list[tuple[str, np.ndarray]]:
    """Named float32 parameter arrays in declaration order."""
    return [
        (f"{prefix}.{name}", p.detach().numpy().astype(np.float32))
        for name, p in module.named_parameters()
    ]


def load_module_arrays(prefix: str, module: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    for name, p in module.named_parameters():
        key = f"{prefix}.{name}"
        if key not in arrays:
            raise ValueError(f"checkpoint is missing parameter {key}")
        value = arrays[key]
        if tuple(value.shape) != tuple(p.shape):
            raise ValueError(f"{key}: shape {value.shape} does not match model {tuple(p.shape)}")
        with torch.no_grad():
            p.copy_(torch.from_numpy(value).to(p.dtype))


def exists(path) -> bool:
    return os.path.exists(path)
