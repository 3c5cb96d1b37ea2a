"""Binary checkpoint codec.

Layout (little-endian):

    8 bytes   magic  b"CUSPCKPT"
    u32       format version
    u32       header length H
    H bytes   UTF-8 JSON header (architecture, m, K, patterns, metadata)
    8*P bytes float64 parameter blob, P = header["n_params"]
    u32       CRC32 of every preceding byte
"""
import base64
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from engine.tensor import LayerSpec
from models.surrogate_model import SurrogateModel, model_from_specs
from utils.exceptions import (
    ChecksumError,
    CheckpointError,
    NotACheckpointError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from utils.file_io import PathLike, atomic_write_bytes
from utils.patterns import PatternSet

logger = logging.getLogger(__name__)

MAGIC = b"CUSPCKPT"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_PREFIX = len(MAGIC) + 2 * _U32.size


@dataclass
class Checkpoint:
    """A loaded checkpoint: the model, its patterns and training metadata."""

    model: SurrogateModel
    patterns: PatternSet
    metadata: Dict = field(default_factory=dict)


def _encode_patterns(patterns: PatternSet) -> Dict:
    packed = np.packbits(patterns.matrix.astype(np.uint8).ravel())
    return {
        "kind": patterns.kind,
        "side": patterns.side,
        "K": patterns.K,
        "identifier": patterns.identifier,
        "bits": base64.b64encode(packed.tobytes()).decode("ascii"),
    }


def _decode_patterns(data: Dict, K: int, m: int) -> PatternSet:
    packed = np.frombuffer(base64.b64decode(data["bits"]), dtype=np.uint8)
    if packed.size != (K * m + 7) // 8:
        raise CheckpointError(f"embedded patterns hold {packed.size} bytes, expected {(K * m + 7) // 8}")
    bits = np.unpackbits(packed)[: K * m].reshape(K, m)
    return PatternSet.from_matrix(bits, data["kind"])


def encode_checkpoint(model: SurrogateModel, patterns: PatternSet, metadata: Optional[Dict] = None) -> bytes:
    """Serialize ``model`` and ``patterns`` to checkpoint bytes."""
    if patterns.K != model.K or patterns.m != model.m:
        raise CheckpointError("patterns do not match the model heads")
    header = {
        "architecture": {
            "arch": model.arch,
            "input_shape": list(model.input_shape),
            "layers": [spec.to_dict() for spec in model.network.specs],
        },
        "m": model.m,
        "K": model.K,
        "n_params": model.num_params(),
        "patterns": _encode_patterns(patterns),
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = model.network.get_flat().astype("<f8").tobytes()
    body = MAGIC + _U32.pack(FORMAT_VERSION) + _U32.pack(len(header_bytes)) + header_bytes + blob
    return body + _U32.pack(zlib.crc32(body))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        NotACheckpointError: Wrong magic bytes
        UnsupportedVersionError: Unknown format version
        TruncatedCheckpointError: File shorter than its declared contents
        ChecksumError: CRC32 mismatch or trailing bytes
    """
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise NotACheckpointError(f"{source}: not a checkpoint")
    if len(data) < _PREFIX:
        raise TruncatedCheckpointError(f"{source}: truncated header")
    (version,) = _U32.unpack_from(data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported version {version} (expected {FORMAT_VERSION})")
    (header_length,) = _U32.unpack_from(data, len(MAGIC) + _U32.size)
    header_end = _PREFIX + header_length
    if len(data) < header_end:
        raise TruncatedCheckpointError(f"{source}: truncated header")
    try:
        header = json.loads(data[_PREFIX:header_end].decode("utf-8"))
        n_params = int(header["n_params"])
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise ChecksumError(f"{source}: unreadable header ({exc})") from None
    blob_end = header_end + 8 * n_params
    if len(data) < blob_end + _U32.size:
        raise TruncatedCheckpointError(f"{source}: file ends before the parameter blob and checksum")
    if len(data) > blob_end + _U32.size:
        raise ChecksumError(f"{source}: unexpected trailing bytes")
    (stored_crc,) = _U32.unpack_from(data, blob_end)
    if zlib.crc32(data[:blob_end]) != stored_crc:
        raise ChecksumError(f"{source}: checksum mismatch")

    architecture = header["architecture"]
    specs = [LayerSpec.from_dict(layer) for layer in architecture["layers"]]
    model = model_from_specs(architecture["arch"], specs, int(header["m"]), int(header["K"]))
    if model.num_params() != n_params:
        raise CheckpointError(f"{source}: blob has {n_params} parameters, architecture needs {model.num_params()}")
    blob = np.frombuffer(data, dtype="<f8", count=n_params, offset=header_end).astype(np.float64)
    model.network.set_flat(blob)
    patterns = _decode_patterns(header["patterns"], model.K, model.m)
    return Checkpoint(model=model, patterns=patterns, metadata=header.get("metadata", {}))


def save_checkpoint(model: SurrogateModel, patterns: PatternSet, path: PathLike, metadata: Optional[Dict] = None) -> Path:
    """Write a checkpoint atomically; returns the path."""
    path = atomic_write_bytes(path, encode_checkpoint(model, patterns, metadata))
    logger.info("checkpoint written to %s (%d parameters)", path, model.num_params())
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    """Read and verify a checkpoint file."""
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path))
