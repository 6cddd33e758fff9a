"""Versioned binary checkpoints.

Layout (all integers little-endian):

  "ALTCKPT1"            8-byte magic
  u32                   format version (currently 1)
  u32                   manifest length in bytes
  manifest              canonical JSON: config dict, ordered tensor
                        descriptors (name, shape) and a CRC-32 of the
                        tensor payload
  payload               the tensors as float32, contiguous, in manifest
                        order
  u64                   footer: byte offset where the footer starts
                        (i.e. file size minus 8)

The CRC catches corrupted payload bytes; the footer catches truncation.
Tensors are stored in float32, so parameters round-trip with ~1e-7
relative error while checkpoints stay half the in-memory size.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError
from .model import ModelConfig, TagModel
from .optim import Adadelta

MAGIC = b"ALTCKPT1"
VERSION = 1


def encode_checkpoint(arrays: dict[str, np.ndarray], config: dict) -> bytes:
    """Serialize name-keyed arrays (in dict order) plus a JSON-able config."""
    payload_parts = []
    tensors = []
    for name, array in arrays.items():
        data = np.ascontiguousarray(array, dtype="<f4")
        tensors.append({"name": name, "shape": list(data.shape)})
        payload_parts.append(data.tobytes())
    payload = b"".join(payload_parts)
    manifest = {
        "config": config,
        "tensors": tensors,
        "crc32": zlib.crc32(payload),
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = (
        MAGIC
        + struct.pack("<II", VERSION, len(manifest_bytes))
        + manifest_bytes
        + payload
    )
    return body + struct.pack("<Q", len(body))


def decode_checkpoint(blob: bytes, source: str = "checkpoint") -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of encode_checkpoint; arrays come back as float64."""
    if len(blob) < len(MAGIC) + 8 + 8:
        raise IntegrityError(f"{source}: file too short")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: bad magic {blob[:8]!r}")
    (footer,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    if footer != len(blob) - 8:
        raise IntegrityError(
            f"{source}: length footer says {footer} bytes, file has {len(blob) - 8}"
        )
    version, manifest_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    manifest_start = len(MAGIC) + 8
    manifest_end = manifest_start + manifest_len
    if manifest_end > len(blob) - 8:
        raise IntegrityError(f"{source}: manifest extends past end of file")
    try:
        manifest = json.loads(blob[manifest_start:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: unreadable manifest: {exc}") from exc

    payload = blob[manifest_end : len(blob) - 8]
    if zlib.crc32(payload) != manifest["crc32"]:
        raise IntegrityError(f"{source}: tensor payload checksum mismatch")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(payload):
            raise IntegrityError(f"{source}: payload shorter than manifest declares")
        arrays[entry["name"]] = (
            np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset = end
    if offset != len(payload):
        raise IntegrityError(f"{source}: {len(payload) - offset} unclaimed payload bytes")
    return manifest["config"], arrays


# ---------------------------------------------------------------------
# model-level checkpoints
# ---------------------------------------------------------------------


@dataclass
class LoadedCheckpoint:
    model: TagModel
    optimizer_main: Adadelta
    optimizer_disc: Adadelta
    train_meta: dict


def save_model_checkpoint(
    path,
    model: TagModel,
    optimizer_main: Adadelta,
    optimizer_disc: Adadelta,
    train_meta: dict,
) -> None:
    """Write parameters plus both optimizers' accumulators."""
    arrays: dict[str, np.ndarray] = {}
    for name, param in model.all_params().items():
        arrays[f"param/{name}"] = param.data
    for key, value in optimizer_main.state_arrays().items():
        arrays[f"adadelta_main/{key}"] = value
    for key, value in optimizer_disc.state_arrays().items():
        arrays[f"adadelta_disc/{key}"] = value
    config = {
        "model": model.config.to_dict(),
        "train": train_meta,
        "optimizer": {
            "rho": optimizer_main.rho,
            "eps": optimizer_main.eps,
            "lr": optimizer_main.lr,
        },
    }
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(arrays, config))
    tmp.replace(target)


def load_model_checkpoint(path) -> LoadedCheckpoint:
    """Rebuild the model and optimizers from a checkpoint file."""
    source = str(path)
    config, arrays = decode_checkpoint(Path(path).read_bytes(), source=source)
    model_config = ModelConfig.from_dict(config["model"])
    model = TagModel(model_config, rng=None)
    params = {
        name[len("param/") :]: value
        for name, value in arrays.items()
        if name.startswith("param/")
    }
    model.load_param_arrays(params)

    opt_cfg = config.get("optimizer", {})
    optimizer_main = Adadelta(model.params, **opt_cfg)
    optimizer_disc = Adadelta(model.disc_params, **opt_cfg)
    optimizer_main.load_state_arrays(
        {
            name[len("adadelta_main/") :]: value
            for name, value in arrays.items()
            if name.startswith("adadelta_main/")
        }
    )
    optimizer_disc.load_state_arrays(
        {
            name[len("adadelta_disc/") :]: value
            for name, value in arrays.items()
            if name.startswith("adadelta_disc/")
        }
    )
    return LoadedCheckpoint(
        model=model,
        optimizer_main=optimizer_main,
        optimizer_disc=optimizer_disc,
        train_meta=config.get("train", {}),
    )
