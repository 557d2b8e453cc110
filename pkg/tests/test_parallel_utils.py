from invariant_reparam import parallel_utils
from invariant_reparam.parallel_utils import (
    get_optimal_workers,
    is_ci,
    map_chunks,
    should_use_parallel,
)


def _square(x):
    return x * x


def test_is_ci_reads_environment(monkeypatch):
    for name in parallel_utils.CI_ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    assert not is_ci()
    monkeypatch.setenv("GITHUB_ACTIONS", "true")
    assert is_ci()


def test_ci_uses_two_workers(monkeypatch):
    monkeypatch.setenv("CI", "1")
    assert get_optimal_workers() == 2
    assert get_optimal_workers(max_workers=1) == 1


def test_worker_count_without_psutil(monkeypatch):
    for name in parallel_utils.CI_ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setattr(parallel_utils, "HAS_PSUTIL", False)
    monkeypatch.setattr(parallel_utils.multiprocessing, "cpu_count", lambda: 8)
    assert get_optimal_workers("cpu") == 4
    assert get_optimal_workers("io") == 8
    assert get_optimal_workers("mixed") == 6
    assert get_optimal_workers("cpu", max_workers=3) == 3


def test_should_use_parallel(monkeypatch):
    for name in parallel_utils.CI_ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    assert not should_use_parallel(1)
    assert should_use_parallel(2)
    assert not should_use_parallel(10, force_parallel=False)
    assert should_use_parallel(2, threshold=10, force_parallel=True)
    monkeypatch.setenv("CI", "1")
    assert not should_use_parallel(3)
    assert should_use_parallel(4)


def test_map_chunks_sequential_preserves_order():
    assert map_chunks(_square, [3, 1, 2], parallel=False) == [9, 1, 4]
    assert map_chunks(_square, [], parallel=True) == []


def test_map_chunks_with_threads_preserves_order(monkeypatch):
    monkeypatch.setenv("CI", "1")
    items = list(range(12))
    assert map_chunks(_square, items, parallel=True) == [i * i for i in items]


def test_map_chunks_falls_back_when_pool_fails(monkeypatch):
    for name in parallel_utils.CI_ENV_VARS:
        monkeypatch.delenv(name, raising=False)

    class BrokenPool:
        def __init__(self, *args, **kwargs):
            raise OSError("no processes available")

    monkeypatch.setattr(parallel_utils.concurrent.futures, "ProcessPoolExecutor", BrokenPool)
    monkeypatch.setattr(parallel_utils, "get_optimal_workers", lambda *a, **k: 4)
    assert map_chunks(_square, [1, 2, 3], parallel=True) == [1, 4, 9]
