import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "BSPDE_NUM_THREADS"
CHUNK = 4096


def num_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def chunked_map(fn, size, chunk=CHUNK):
    """Apply ``fn(start, stop)`` over fixed-size row chunks of ``range(size)``.

    Chunk boundaries do not depend on the thread count, and every chunk
    writes its own rows, so results are identical for any number of threads.
    """
    bounds = [(lo, min(lo + chunk, size)) for lo in range(0, size, chunk)]
    threads = num_threads()
    if threads == 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
