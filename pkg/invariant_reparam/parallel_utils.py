"""Worker-count heuristics and an order-preserving chunk mapper.

Profile sweeps are independent warm-start chains; ``map_chunks`` spreads them over a
process pool, drops to threads in CI, and falls back to sequential execution when
the pool cannot be used. Results always come back in input order.
"""

from __future__ import annotations

import concurrent.futures
import logging
import multiprocessing
import os
from typing import Callable, List, Optional, Sequence, TypeVar

try:
    import psutil
    HAS_PSUTIL = True
except ImportError:
    HAS_PSUTIL = False

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

CI_ENV_VARS = ("CI", "GITHUB_ACTIONS", "TRAVIS", "JENKINS")


def is_ci() -> bool:
    return any(env in os.environ for env in CI_ENV_VARS)


def get_optimal_workers(
    workload_type: str = "cpu",
    max_workers: Optional[int] = None,
) -> int:
    """Calculate a worker count from physical/logical core counts.

    Args:
        workload_type: "cpu" (likelihood evaluation, uses physical cores only),
            "io" (2x physical cores) or "mixed" (1.5x physical cores)
        max_workers: Optional maximum to cap the result

    Returns:
        Number of workers, at least 1
    """
    if is_ci():
        base_workers = 2
    else:
        if HAS_PSUTIL:
            physical_cores = psutil.cpu_count(logical=False) or 1
            logical_cores = psutil.cpu_count(logical=True) or physical_cores
        else:
            logical_cores = multiprocessing.cpu_count() or 1
            # rough estimate without psutil
            physical_cores = max(1, logical_cores // 2)

        if workload_type == "io":
            base_workers = min(physical_cores * 2, logical_cores)
        elif workload_type == "cpu":
            base_workers = physical_cores
        elif workload_type == "mixed":
            base_workers = int(physical_cores * 1.5)
        else:
            base_workers = logical_cores

    if max_workers is not None:
        base_workers = min(base_workers, max_workers)
    return max(1, base_workers)


def should_use_parallel(
    item_count: int,
    threshold: int = 2,
    force_parallel: Optional[bool] = None,
) -> bool:
    """Decide whether a batch of independent chunks is worth a worker pool.

    Args:
        item_count: Number of chunks
        threshold: Minimum chunk count for parallel processing
        force_parallel: Override automatic decision (False disables pools)

    Returns:
        True if parallel processing should be used
    """
    if force_parallel is False:
        return False
    if item_count < 2:
        return False
    if force_parallel:
        return True
    if is_ci():
        threshold = max(threshold, 4)
    return item_count >= threshold


def _map_sequential(fn: Callable[[T], R], chunks: Sequence[T]) -> List[R]:
    return [fn(chunk) for chunk in chunks]


def map_chunks(
    fn: Callable[[T], R],
    chunks: Sequence[T],
    parallel: Optional[bool] = None,
    max_workers: Optional[int] = None,
) -> List[R]:
    """Apply ``fn`` to every chunk, preserving input order.

    ``fn`` and the chunks must be picklable for the process pool; anything that
    fails in the pool is recomputed sequentially.

    Args:
        fn: Callable applied to each chunk
        chunks: Independent work items
        parallel: None for automatic, False to force sequential, True to force pools
        max_workers: Optional cap on the number of workers

    Returns:
        List of results in the order of ``chunks``
    """
    chunks = list(chunks)
    if not should_use_parallel(len(chunks), force_parallel=parallel):
        return _map_sequential(fn, chunks)

    workers = min(len(chunks), get_optimal_workers("cpu", max_workers))
    if workers < 2:
        return _map_sequential(fn, chunks)

    if is_ci():
        # threads avoid multiprocessing start-method issues on CI runners
        try:
            with concurrent.futures.ThreadPoolExecutor(max_workers=min(4, workers)) as ex:
                return list(ex.map(fn, chunks))
        except Exception as e:
            logger.debug("Thread pool failed (%s); running sequentially", e)
            return _map_sequential(fn, chunks)

    try:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, chunks))
    except Exception as e:
        logger.debug("Process pool failed (%s); running sequentially", e)
        return _map_sequential(fn, chunks)
