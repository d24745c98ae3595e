"""Binary checkpoint format for PMN-family models.

Layout (all integers little-endian)::

    b"PMN1"                      magic
    u32 version
    u32 n, n bytes               PMNConfig as UTF-8 JSON
    u32 n, n bytes               metadata as UTF-8 JSON
    u32 count                    number of parameter arrays, then per array:
        u32 n, n bytes           name
        u32 rank, rank * u32     dims
        product(dims) * f32      values
    u64 trailer                  (payload length << 32) | crc32(payload)

A JSON manifest listing names, shapes and the epoch is written next to the
binary file for humans.
"""

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .errors import (
    BadMagicError,
    CheckpointConfigError,
    ChecksumError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .model import ModelParams, PMNConfig
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"PMN1"
FORMAT_VERSION = 1
TRAILER_SIZE = 8

# Fields that define the parameter layout; the rest may differ between a
# checkpoint and the config it is used with.
ARCHITECTURE_FIELDS = (
    "num_labels",
    "embedding_dim",
    "seq_length",
    "hops",
    "variant",
    "conv_channels",
    "conv_widths",
    "attention_mode",
)


class CheckpointMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int = 0
    valid_mean_auroc: Optional[float] = None
    label_index: Optional[int] = None
    seed: Optional[int] = None


@dataclass
class Checkpoint:
    params: ModelParams
    config: PMNConfig
    meta: CheckpointMeta
    version: int = FORMAT_VERSION


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def _pack_bytes(blob: bytes) -> bytes:
    return struct.pack("<I", len(blob)) + blob


def encode_checkpoint(params: ModelParams, config: PMNConfig, meta: CheckpointMeta) -> bytes:
    """Serialize a checkpoint into the binary format."""
    params.check_against(config)
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        _pack_bytes(config.model_dump_json().encode("utf-8")),
        _pack_bytes(meta.model_dump_json().encode("utf-8")),
        struct.pack("<I", len(params.tensors)),
    ]
    for name, tensor in params.items():
        parts.append(_pack_bytes(name.encode("utf-8")))
        parts.append(struct.pack("<I", tensor.data.ndim))
        parts.append(struct.pack(f"<{tensor.data.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    payload = b"".join(parts)
    trailer = ((len(payload) & 0xFFFFFFFF) << 32) | zlib.crc32(payload)
    return payload + struct.pack("<Q", trailer)


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.end = end
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > self.end:
            raise TruncatedCheckpointError(
                f"checkpoint ends at byte {self.end}, needed {size} bytes at offset {self.offset}"
            )
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Parse a binary checkpoint.

    Raises:
        BadMagicError: The file does not start with the PMN magic bytes
        VersionMismatchError: The format version is not supported
        TruncatedCheckpointError: The file is shorter than its contents claim
        ChecksumError: The payload does not match its checksum
    """
    if len(data) < len(MAGIC):
        if MAGIC.startswith(data):
            raise TruncatedCheckpointError(f"checkpoint is only {len(data)} bytes long")
        raise BadMagicError("not a PMN checkpoint (bad magic bytes)")
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError("not a PMN checkpoint (bad magic bytes)")
    if len(data) < len(MAGIC) + 4:
        raise TruncatedCheckpointError(f"checkpoint is only {len(data)} bytes long")
    version = struct.unpack_from("<I", data, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    if len(data) < len(MAGIC) + 4 + TRAILER_SIZE:
        raise TruncatedCheckpointError(f"checkpoint is only {len(data)} bytes long")

    payload_end = len(data) - TRAILER_SIZE
    trailer = struct.unpack_from("<Q", data, payload_end)[0]
    stored_length, stored_crc = trailer >> 32, trailer & 0xFFFFFFFF
    if stored_length != (payload_end & 0xFFFFFFFF):
        raise TruncatedCheckpointError(
            f"checkpoint payload is {payload_end} bytes but its trailer records {stored_length}"
        )
    if zlib.crc32(data[:payload_end]) != stored_crc:
        raise ChecksumError("checkpoint checksum mismatch")

    reader = _Reader(data, payload_end)
    reader.take(len(MAGIC) + 4)
    try:
        config = PMNConfig.model_validate_json(reader.blob())
        meta = CheckpointMeta.model_validate_json(reader.blob())
    except ValidationError as e:
        raise CheckpointConfigError(f"checkpoint carries an invalid configuration: {e}")

    tensors: Dict[str, Tensor] = {}
    for _ in range(reader.u32()):
        name = reader.blob().decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = Tensor(values.astype(config.dtype), requires_grad=True, name=name)
    if reader.offset != payload_end:
        raise ChecksumError(f"{payload_end - reader.offset} unexpected trailing bytes in checkpoint")

    params = ModelParams(tensors)
    try:
        params.check_against(config)
    except ValueError as e:
        raise CheckpointConfigError(str(e))
    return Checkpoint(params=params, config=config, meta=meta, version=version)


def save_checkpoint(
    path: Union[str, Path],
    params: ModelParams,
    config: PMNConfig,
    meta: Optional[CheckpointMeta] = None,
) -> Path:
    """
    Write a checkpoint atomically plus its JSON manifest.

    Args:
        path: Destination file
        params: Model parameters (stored as 32-bit floats)
        config: Model configuration
        meta: Epoch and validation metadata

    Returns:
        Path of the written checkpoint
    """
    path = Path(path)
    meta = meta or CheckpointMeta()
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(params, config, meta)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)

    manifest = {
        "format_version": FORMAT_VERSION,
        "epoch": meta.epoch,
        "valid_mean_auroc": meta.valid_mean_auroc,
        "label_index": meta.label_index,
        "variant": config.variant,
        "parameter_count": params.parameter_count(),
        "parameters": [{"name": name, "shape": list(t.shape)} for name, t in params.items()],
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logger.debug(f"Saved checkpoint {path} (epoch {meta.epoch})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def ensure_compatible(
    config: PMNConfig,
    num_labels: Optional[int] = None,
    seq_length: Optional[int] = None,
    expected: Optional[PMNConfig] = None,
) -> None:
    """
    Reject a checkpoint config that cannot run on the given dataset/config.

    Raises:
        CheckpointConfigError: On any label count, length or architecture mismatch
    """
    if num_labels is not None and config.num_labels != num_labels:
        raise CheckpointConfigError(f"checkpoint has {config.num_labels} labels, dataset has {num_labels}")
    if seq_length is not None and config.seq_length != seq_length:
        raise CheckpointConfigError(f"checkpoint expects length {config.seq_length}, dataset has {seq_length}")
    if expected is not None:
        for name in ARCHITECTURE_FIELDS:
            ours, theirs = getattr(config, name), getattr(expected, name)
            if ours != theirs:
                raise CheckpointConfigError(f"checkpoint {name}={ours} does not match configured {name}={theirs}")
