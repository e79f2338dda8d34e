"""Counter-based random substreams.

Each Monte Carlo chunk draws from its own Philox stream keyed by
``(seed, stream, chunk)``, so results depend on the seed and the chunking but
never on how chunks are scheduled across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

MASK64 = (1 << 64) - 1


def substream(seed: int, chunk: int, stream: int = 0) -> np.random.Generator:
    key = (int(seed) & MASK64) | ((int(stream) & 0xFFFFFFFF) << 64) | ((int(chunk) & 0xFFFFFFFF) << 96)
    return np.random.Generator(np.random.Philox(key=key))


def chunk_sizes(n: int, chunk_size: int) -> list[int]:
    if n < 1:
        raise ValueError(f"sample count must be positive, got {n}")
    full, rest = divmod(n, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def map_chunks(fn, n: int, chunk_size: int, threads: int = 1):
    """Yield ``fn(chunk_index, size)`` for every chunk, in chunk order."""
    sizes = chunk_sizes(n, chunk_size)
    if threads <= 1:
        for k, m in enumerate(sizes):
            yield fn(k, m)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        window = []
        for k, m in enumerate(sizes):
            window.append(pool.submit(fn, k, m))
            if len(window) >= 2 * threads:
                yield window.pop(0).result()
        for fut in window:
            yield fut.result()
