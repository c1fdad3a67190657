import os
from concurrent.futures import ThreadPoolExecutor


def default_threads():
    try:
        return max(1, int(os.environ.get("GSVQ_THREADS", "1")))
    except ValueError:
        return 1


def chunked_map(fn, chunks, threads=1):
    """``list(map(fn, chunks))``, optionally on a thread pool; order is preserved."""
    threads = threads or default_threads()
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))
