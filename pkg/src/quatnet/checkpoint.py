"""QNNCKPT1 checkpoint files.

Layout: the 8-byte magic, a little-endian uint32 manifest length, the
UTF-8 JSON manifest, then every listed block as raw little-endian
float64 in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadCheckpoint
from .model import ModelConfig, build_model

MAGIC = b"QNNCKPT1"
FORMAT_VERSION = 1


def encode(blocks: dict, manifest: dict) -> bytes:
    manifest = dict(manifest, format_version=FORMAT_VERSION,
                    blocks=[{"name": k, "shape": list(v.shape)} for k, v in blocks.items()])
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in blocks.values())
    return MAGIC + struct.pack("<I", len(head)) + head + body


def decode(raw: bytes):
    if not raw.startswith(MAGIC):
        raise BadCheckpoint("missing QNNCKPT1 magic")
    offset = len(MAGIC) + 4
    if len(raw) < offset:
        raise BadCheckpoint("truncated header")
    (size,) = struct.unpack_from("<I", raw, len(MAGIC))
    try:
        manifest = json.loads(raw[offset:offset + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadCheckpoint(f"unreadable manifest: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise BadCheckpoint(f"unsupported format version {manifest.get('format_version')!r}")
    offset += size
    blocks = {}
    for entry in manifest["blocks"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * count > len(raw):
            raise BadCheckpoint(f"truncated block {entry['name']!r}")
        blocks[entry["name"]] = np.frombuffer(raw, "<f8", count, offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(raw):
        raise BadCheckpoint(f"{len(raw) - offset} trailing bytes")
    return manifest, blocks


def save_checkpoint(path, model, state: dict | None = None, optimizer=None):
    """Write parameters (and optionally optimizer accumulators) of ``model``."""
    blocks = {f"param/{name}": p.data for name, p in model.named_parameters()}
    if optimizer is not None:
        blocks.update({f"rms/{name}": acc for name, acc in optimizer.accumulators.items()})
    manifest = {
        "config": model.cfg.to_dict(),
        "init_seed": model.cfg.seed,
        "layers": [{"name": n, "shape": list(p.shape)} for n, p in model.named_parameters()],
        "state": state or {},
    }
    Path(path).write_bytes(encode(blocks, manifest))


def load_checkpoint(path):
    """Rebuild the model; returns ``(model, state, accumulators)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise BadCheckpoint(f"{path}: {exc}") from None
    manifest, blocks = decode(raw)
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
    except Exception as exc:
        raise BadCheckpoint(f"bad config in checkpoint: {exc}") from None
    model = build_model(cfg)
    for name, p in model.named_parameters():
        block = blocks.get(f"param/{name}")
        if block is None or block.shape != p.shape:
            raise BadCheckpoint(f"parameter {name!r} missing or misshapen")
        p.data[...] = block
    accumulators = {k[4:]: v.copy() for k, v in blocks.items() if k.startswith("rms/")}
    return model, manifest.get("state", {}), accumulators
