"""Deterministic index-ordered parallel map over worker processes.

Results are reduced in index order, so output is identical for any worker
count; each task must derive its own randomness from its index.
"""

from concurrent.futures import ProcessPoolExecutor

_PAYLOAD = None


def _init(payload):
    global _PAYLOAD
    _PAYLOAD = payload


def _call(index):
    fn, args = _PAYLOAD
    return fn(index, *args)


def run_indexed(fn, count: int, threads: int = 1, args=()):
    """Apply ``fn(i, *args)`` for i in range(count), optionally in processes."""
    if threads <= 1 or count <= 1:
        return [fn(i, *args) for i in range(count)]
    chunk = max(1, count // (threads * 4))
    with ProcessPoolExecutor(max_workers=threads, initializer=_init, initargs=((fn, args),)) as pool:
        return list(pool.map(_call, range(count), chunksize=chunk))
