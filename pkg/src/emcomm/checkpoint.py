"""Binary checkpoint container.

Layout: 8-byte magic, u32 format version, u64 header length, UTF-8 JSON
header, then the raw little-endian float64 payload of every tensor in
header order. The header carries the system structure, epoch, config,
rng info, optimizer-state names, and per-tensor shapes/offsets, so a
load rebuilds the exact training state bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .agents import AgentSystem, zero_system
from .errors import CheckpointError
from .fsio import atomic_write_bytes
from .optim import RmsProp

MAGIC = b"EMCCKPT\x01"
VERSION = 1


@dataclass
class CheckpointData:
    system: AgentSystem
    optimizer_sq: dict
    epoch: int
    config: dict
    rng: dict


def save_checkpoint(path, system: AgentSystem, optimizer: RmsProp = None,
                    epoch: int = 0, config: dict = None, rng: dict = None) -> None:
    tensors = {name: t.data for name, t in system.parameters().items()}
    opt_names = []
    if optimizer is not None:
        for name, arr in optimizer.state_arrays().items():
            tensors[f"opt.{name}"] = arr
            opt_names.append(name)
    order = list(tensors)
    header = {
        "version": VERSION,
        "epoch": int(epoch),
        "config": config or {},
        "rng": rng or {},
        "structure": system.structure(),
        "optimizer": {"names": opt_names},
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in order],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(hbytes)), hbytes]
    for n in order:
        parts.append(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path) -> CheckpointData:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint")
    version = struct.unpack("<I", blob[8:12])[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    hlen = struct.unpack("<Q", blob[12:20])[0]
    if len(blob) < 20 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e

    offset = 20 + hlen
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if len(blob) < offset + nbytes:
            raise CheckpointError(f"{path}: truncated payload at tensor {spec['name']}")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype="<f8").reshape(shape)
        arrays[spec["name"]] = np.array(arr)  # own, writable copy
        offset += nbytes

    st = header["structure"]
    system = zero_system(st["msg_len"], hidden=st["hidden"], mlp_hidden=st["mlp_hidden"],
                         baseline_hidden=st["baseline_hidden"], emb_dim=st["emb_dim"],
                         n_classes=st["n_classes"], sender_modality=st["sender_modality"],
                         receiver_modality=st["receiver_modality"])
    for name, t in system.parameters().items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if arrays[name].shape != t.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        t.data = arrays[name]
    opt_sq = {n: arrays[f"opt.{n}"] for n in header.get("optimizer", {}).get("names", [])}
    return CheckpointData(system=system, optimizer_sq=opt_sq, epoch=header["epoch"],
                          config=header.get("config", {}), rng=header.get("rng", {}))
