"""Thread-pool helper.

Work items are mapped in submission order and results collected by index, so
output never depends on scheduling.  threads <= 1 short-circuits the pool.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def map_ordered(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
