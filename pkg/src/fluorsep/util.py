"""Seeded random streams and a small deterministic worker pool."""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def rng_stream(seed: int, *names: object) -> np.random.Generator:
    """Independent generator for the named stream of a root seed.

    Streams are identified by (seed, names); the mapping is stable across
    processes and independent of execution order, so parallel workers can
    each derive their own stream.
    """
    tag = "/".join(str(n) for n in names).encode("utf-8")
    digest = hashlib.sha256(tag).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words.tolist()]))


def thread_count() -> int:
    """Worker cap from FLUORSEP_THREADS, defaulting to 1 (serial)."""
    raw = os.environ.get("FLUORSEP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"FLUORSEP_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def pool_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map with optional threading; results are assembled by index."""
    items = list(items)
    workers = min(thread_count(), len(items)) if items else 1
    if workers <= 1:
        return [fn(item) for item in items]
    results: list = [None] * len(items)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(fn, item): idx for idx, item in enumerate(items)}
        for future, idx in futures.items():
            results[idx] = future.result()
    return results
