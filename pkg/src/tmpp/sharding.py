"""User-hash sharding and ordered parallel map.

Every shard-parallel stage partitions work by :func:`user_hash` and merges
results in shard order, so outputs never depend on the worker count.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def user_hash(ids) -> np.ndarray:
    """splitmix64 finalizer over 64-bit ids (vectorized, platform independent)."""
    z = np.asarray(ids, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def shard_of(ids, n_shards: int) -> np.ndarray:
    return (user_hash(ids) % np.uint64(n_shards)).astype(np.int64)


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """``[fn(x) for x in items]`` run on up to ``workers`` threads, order kept."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def substream(seed: int, *labels: int | str) -> np.random.Generator:
    """Independent generator for a labelled sub-task of a seeded run."""
    key = [_label_int(x) for x in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _label_int(x: int | str) -> int:
    if isinstance(x, str):
        return int.from_bytes(hashlib.blake2b(x.encode("utf-8"), digest_size=8).digest(), "little")
    return int(x)


def derive_seed(seed: int, *labels: int | str) -> int:
    """Integer seed for a labelled sub-task, derived from the run seed."""
    key = [_label_int(x) for x in labels]
    state = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, np.uint32)
    return int(state[0]) << 31 ^ int(state[1]) >> 1
