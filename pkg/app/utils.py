import hashlib
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Any, Union

import numpy as np

from app.exceptions import ArtifactFormatError

PathLike = Union[str, Path]

_CRC = struct.Struct("<I")


def make_rng(seed: int) -> np.random.Generator:
    """Portable generator: Philox4x64 keyed by the seed, counter starting at zero.

    Philox is counter-based, so the stream depends only on (key, counter) and is the
    same on every platform numpy supports.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in u64, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed))


def derive_seed(seed: int, *labels: Union[str, int]) -> int:
    """Child seed for a named sub-stream, stable across runs."""
    return stable_hash(f"{seed}:" + ":".join(str(label) for label in labels))


def stable_hash(data: Union[bytes, str]) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def config_hash(config: Any) -> int:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return stable_hash(canonical)


def format_hash(value: int) -> str:
    return f"{value:016x}"


def seal(payload: bytes) -> bytes:
    return payload + _CRC.pack(zlib.crc32(payload))


def unseal(blob: bytes, what: str = "artifact") -> bytes:
    if len(blob) < _CRC.size:
        raise ArtifactFormatError(f"{what}: truncated file")
    payload, (stored,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
    if zlib.crc32(payload) != stored:
        raise ArtifactFormatError(f"{what}: CRC32 mismatch")
    return payload


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def file_crc32(path: PathLike) -> int:
    return zlib.crc32(Path(path).read_bytes())
