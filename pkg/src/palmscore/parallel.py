"""Deterministic chunked parallel map over subjects.

Chunk boundaries depend only on the problem size, never on the thread
count, so results are bitwise identical for any ``threads``.
"""
from concurrent.futures import ThreadPoolExecutor

CHUNK = 256


def chunks(n, size=CHUNK):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def chunked_map(fn, n, threads=1, size=CHUNK):
    """Apply ``fn(slice)`` to every chunk of range(n); results in chunk order."""
    parts = chunks(n, size)
    if threads <= 1 or len(parts) <= 1:
        return [fn(sl) for sl in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, parts))
