"""Binary checkpoint container for model weights and optimizer state.

Layout: an 8-byte magic string, a little-endian uint64 header length, a JSON
header (config, resolved group table, tensor directory) and the tensors as
contiguous little-endian float64 blobs in directory order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import ContractViolation
from .transformer import ModelConfig, TransformerParams, param_layout, resolve_groups

MAGIC = b"SMUPCK01"


def save_checkpoint(path, params: TransformerParams, cfg: ModelConfig, optimizer=None, step: int = 0,
                    extra: dict | None = None) -> Path:
    tensors = dict(params.values)
    header = {
        "config": cfg.to_dict(),
        "groups": {k: g.to_dict() for k, g in params.groups.items()},
        "step": int(step),
        "extra": extra or {},
        "optimizer": None,
        "tensors": [],
    }
    if optimizer is not None:
        tensors.update(optimizer.state_arrays())
        header["optimizer"] = optimizer.state_meta()
    offset = 0
    for name, a in tensors.items():
        header["tensors"].append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for a in tensors.values():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def load_checkpoint(path):
    """Read a checkpoint.

    Returns
    -------
    cfg : ModelConfig
    params : TransformerParams
    opt_arrays : dict
        Optimizer moment tensors (empty if none were saved).
    header : dict
    """
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ContractViolation(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen])
    base = 16 + hlen
    arrays = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        start = base + t["offset"]
        if start + 8 * count > len(data):
            raise ContractViolation(f"{path}: truncated tensor {t['name']}")
        arrays[t["name"]] = np.frombuffer(data, "<f8", count, start).reshape(t["shape"]).astype(np.float64)
    cfg = ModelConfig.from_dict(header["config"])
    names = [name for name, _, _ in param_layout(cfg)]
    missing = [n for n in names if n not in arrays]
    if missing:
        raise ContractViolation(f"{path}: missing tensors {missing}")
    params = TransformerParams({n: arrays[n] for n in names}, resolve_groups(cfg))
    params.zero_grad()
    opt = {k: v for k, v in arrays.items() if k.startswith("opt.")}
    return cfg, params, opt, header
