"""Counter-based random streams.

Every stream is a Philox generator whose key is derived from the run seed
and a tuple of tags, e.g. ``stream(seed, "select")`` or
``stream(seed, "sim", image_id, instance_idx)``. A stream's output depends
only on its key, never on how many other streams were drawn before it, so
parallel execution order cannot change results.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np


def stream_key(seed: int, *tags) -> np.ndarray:
    payload = json.dumps([int(seed), *[str(t) for t in tags]], separators=(",", ":"))
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype="<u8").copy()


def stream(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *tags)))
