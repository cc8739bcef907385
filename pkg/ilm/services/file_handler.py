"""
On-disk artifacts of the pipeline: the ILMC named-tensor checkpoint container,
line-delimited record files, content hashes and the pipeline directory lock.

ILMC layout (little-endian):
    magic b"ILMC" | u32 version | u32 metadata length | metadata JSON (sorted keys)
    u32 array count
    per array: u16 name length | utf-8 name | u32 ndim | u64 dims... | u64 payload offset
    payload: float32 values, row-major, arrays in directory order
"""
import hashlib
import json
import logging
import os
import struct
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Type, TypeVar

import numpy as np
from pydantic import BaseModel

from ..errors import LockError, StorageError

logger = logging.getLogger("ilm.storage")

MAGIC = b"ILMC"
FORMAT_VERSION = 1
LOCK_FILENAME = ".ilm.lock"

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

RecordT = TypeVar("RecordT", bound=BaseModel)


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    metadata: Dict[str, Any]
    content_hash: str
    version: int = FORMAT_VERSION
    path: Optional[str] = field(default=None)

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.arrays:
            raise StorageError(f"checkpoint {self.path} has no array '{name}'")
        return self.arrays[name]


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as e:
        raise StorageError(f"cannot hash {path}: {e}")
    return digest.hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Error writing {path}: {str(e)}")
        logger.error(traceback.format_exc())
        raise StorageError(f"cannot write {path}: {e}")


# ==================== Checkpoint container ====================
def encode_checkpoint(arrays: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, Any]] = None) -> bytes:
    meta_bytes = canonical_json(dict(metadata or {})).encode("utf-8")
    header = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(meta_bytes)), meta_bytes, _U32.pack(len(arrays))]
    directory: List[bytes] = []
    payload: List[bytes] = []
    offset = 0
    for name, value in arrays.items():
        array = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        if not np.all(np.isfinite(array)):
            raise StorageError(f"array '{name}' contains non-finite values")
        encoded_name = name.encode("utf-8")
        entry = [_U16.pack(len(encoded_name)), encoded_name, _U32.pack(array.ndim)]
        entry.extend(_U64.pack(dim) for dim in array.shape)
        entry.append(_U64.pack(offset))
        directory.append(b"".join(entry))
        raw = array.tobytes(order="C")
        payload.append(raw)
        offset += len(raw)
    return b"".join(header + directory + payload)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    view = memoryview(data)
    position = 0

    def read(count: int) -> memoryview:
        nonlocal position
        if position + count > len(view):
            raise StorageError(f"{source}: truncated checkpoint")
        chunk = view[position:position + count]
        position += count
        return chunk

    if bytes(read(4)) != MAGIC:
        raise StorageError(f"{source}: bad magic, not an ILMC checkpoint")
    (version,) = _U32.unpack(read(4))
    if version != FORMAT_VERSION:
        raise StorageError(f"{source}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    (meta_len,) = _U32.unpack(read(4))
    try:
        metadata = json.loads(bytes(read(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StorageError(f"{source}: corrupt checkpoint metadata: {e}")
    (count,) = _U32.unpack(read(4))

    entries = []
    for _ in range(count):
        (name_len,) = _U16.unpack(read(2))
        name = bytes(read(name_len)).decode("utf-8")
        (ndim,) = _U32.unpack(read(4))
        shape = tuple(_U64.unpack(read(8))[0] for _ in range(ndim))
        (offset,) = _U64.unpack(read(8))
        entries.append((name, shape, offset))

    payload_start = position
    arrays: Dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        if name in arrays:
            raise StorageError(f"{source}: duplicate array name '{name}'")
        size = int(np.prod(shape, dtype=np.int64)) * 4
        start = payload_start + offset
        if start + size > len(view):
            raise StorageError(f"{source}: array '{name}' runs past end of file")
        array = np.frombuffer(data, dtype="<f4", count=size // 4, offset=start).reshape(shape).copy()
        arrays[name] = array
    return Checkpoint(arrays=arrays, metadata=metadata, content_hash=sha256_bytes(data), version=version,
                      path=source)


def write_checkpoint(path, arrays: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, Any]] = None) -> str:
    """Write an ILMC file and return its SHA-256 content hash."""
    data = encode_checkpoint(arrays, metadata)
    path = Path(path)
    _atomic_write(path, data)
    content_hash = sha256_bytes(data)
    logger.info(f"Wrote checkpoint {path} ({len(arrays)} arrays, sha256={content_hash[:12]})")
    return content_hash


def read_checkpoint(path, expected_hash: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}")
    checkpoint = decode_checkpoint(data, source=str(path))
    if expected_hash is not None and checkpoint.content_hash != expected_hash:
        raise StorageError(
            f"checkpoint {path} hash mismatch",
            hint=f"expected {expected_hash[:12]}, found {checkpoint.content_hash[:12]}",
        )
    return checkpoint


# ==================== Line-delimited records ====================
def dump_record(record: BaseModel) -> str:
    return canonical_json(record.model_dump(mode="json"))


def write_jsonl(path, records: Iterable[BaseModel]) -> str:
    """Write one record per line (sorted keys, '\\n' endings); returns the file hash."""
    body = "".join(dump_record(record) + "\n" for record in records).encode("utf-8")
    path = Path(path)
    _atomic_write(path, body)
    return sha256_bytes(body)


def read_jsonl(path, model: Type[RecordT]) -> List[RecordT]:
    path = Path(path)
    records = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(model.model_validate_json(line))
                except ValueError as e:
                    raise StorageError(f"{path}:{number}: invalid {model.__name__} record: {e}")
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}")
    return records


def write_lines(path, lines: Iterable[str]) -> str:
    body = "".join(f"{line}\n" for line in lines).encode("utf-8")
    path = Path(path)
    _atomic_write(path, body)
    return sha256_bytes(body)


def read_lines(path) -> List[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}")


# ==================== Pipeline lock ====================
class PipelineLock:
    """Exclusive writer lock on a pipeline directory (`.ilm.lock`)."""

    def __init__(self, directory):
        self.path = Path(directory) / LOCK_FILENAME
        self._held = False

    def acquire(self, owner: str = "") -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = ""
            try:
                holder = self.path.read_text(encoding="utf-8").strip()
            except OSError:
                pass
            raise LockError(f"pipeline directory {self.path.parent} is locked", hint=holder or None)
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(f"pid={os.getpid()} {owner}".strip())
        self._held = True

    def release(self) -> None:
        if self._held:
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
            self._held = False

    def __enter__(self) -> "PipelineLock":
        self.acquire()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.release()
