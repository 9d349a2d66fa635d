"""Checkpoint files: length-prefixed JSON header followed by float32 tensors.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then the raw
little-endian float32 payload. The header holds the model config, a tensor
manifest (name, shape, dtype, byte offset into the payload) and free-form
metadata.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np
import torch

from .model import DecoderLM, ModelConfig, init_model

MAGIC_DTYPE = "<f4"


def save_checkpoint(path: str | os.PathLike, model: DecoderLM,
                    head: torch.nn.Linear | None = None, metadata: dict | None = None) -> None:
    tensors = {k: v for k, v in model.state_dict().items()}
    if model.config.tie_weights:
        tensors.pop("lm_head.weight", None)
    if head is not None:
        tensors["head.weight"] = head.weight.detach()
        tensors["head.bias"] = head.bias.detach()
    manifest, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype(MAGIC_DTYPE)
        raw = arr.tobytes(order="C")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "float32",
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.config.to_json(), "tensors": manifest,
                         "metadata": metadata or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header["tensors"]:
        buf = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=MAGIC_DTYPE).reshape(entry["shape"]).copy()
    return header, arrays


def load_checkpoint(path: str | os.PathLike):
    """Returns (model, head or None, metadata)."""
    header, arrays = read_checkpoint(path)
    config = ModelConfig.from_json(header["config"])
    model = init_model(config)
    state = model.state_dict()
    for name in state:
        if name in arrays:
            state[name] = torch.from_numpy(arrays[name])
        elif not (config.tie_weights and name == "lm_head.weight"):
            raise ValueError(f"checkpoint {os.fspath(path)} lacks tensor {name!r}")
    if config.tie_weights:
        state["lm_head.weight"] = state["embed.weight"]
    model.load_state_dict(state)
    model.eval()
    head = None
    if "head.weight" in arrays:
        head = torch.nn.Linear(config.d_model, 1)
        with torch.no_grad():
            head.weight.copy_(torch.from_numpy(arrays["head.weight"]))
            head.bias.copy_(torch.from_numpy(arrays["head.bias"]))
    return model, head, header.get("metadata", {})
