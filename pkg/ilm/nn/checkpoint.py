import hashlib
from typing import Any, Dict, Optional

import numpy as np

from ..services.file_handler import Checkpoint, read_checkpoint, write_checkpoint
from .modules import Module


def save_module(module: Module, path, metadata: Optional[Dict[str, Any]] = None, prefix: str = "") -> str:
    arrays = {f"{prefix}{name}": value for name, value in module.state_dict().items()}
    return write_checkpoint(path, arrays, metadata)


def load_module(module: Module, path, expected_hash: Optional[str] = None, prefix: str = "",
                strict: bool = True) -> Checkpoint:
    """Load parameters stored under `prefix` into `module`; returns the checkpoint."""
    checkpoint = read_checkpoint(path, expected_hash)
    state = {name[len(prefix):]: value for name, value in checkpoint.arrays.items() if name.startswith(prefix)}
    module.load_state_dict(state, strict=strict)
    return checkpoint


def state_checksum(module: Module) -> str:
    """SHA-256 over parameter names, shapes and exact in-memory values."""
    digest = hashlib.sha256()
    for name, param in module.named_parameters():
        data = np.ascontiguousarray(param.data)
        digest.update(f"{name}:{data.dtype.str}:{data.shape};".encode("utf-8"))
        digest.update(data.tobytes())
    return digest.hexdigest()
