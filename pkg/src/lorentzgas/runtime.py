"""Seeding and thread fan-out.

Every random draw belongs to a named task.  The stream of a task is a
Philox generator keyed by ``(master seed, task labels)`` through
:class:`numpy.random.SeedSequence`, so the draws do not depend on how many
worker threads run or in which order chunks finish.  Samples are generated
up front from their task stream; only deterministic kernels run in threads.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode())


def task_rng(seed: int, *labels) -> np.random.Generator:
    """Independent generator for task ``labels`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1),
                                spawn_key=tuple(_label_int(x) for x in labels))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def chunk_bounds(n: int, threads: int, min_chunk: int = 64):
    threads = max(1, int(threads))
    k = max(1, min(threads * 4, (n + min_chunk - 1) // min_chunk))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_chunks(fn, n: int, threads: int = 1):
    """Apply ``fn(lo, hi)`` over a partition of ``range(n)``; results in chunk order.

    ``fn`` should release the GIL (numba ``nogil`` kernels) to gain from threads.
    """
    parts = chunk_bounds(n, threads)
    if threads <= 1 or len(parts) <= 1:
        return [fn(a, b) for a, b in parts]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda ab: fn(*ab), parts))


def concat(results):
    """Concatenate tuples of arrays returned chunkwise by :func:`map_chunks`."""
    if not results:
        return ()
    return tuple(np.concatenate([r[q] for r in results]) for q in range(len(results[0])))
