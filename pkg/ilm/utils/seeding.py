import zlib

import numpy as np

SUBSTREAMS = ("data", "mf", "qformer-init", "phase1", "backbone-init", "pretrain", "phase2", "eval")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stage, derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))]))
