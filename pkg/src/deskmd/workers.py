"""Index-chunked worker pool with deterministic placement and reduction.

Work is described as a pure function of an integer index. A
:class:`ChunkPlan` splits ``[0, total)`` into contiguous chunks (about four
per worker); chunks are executed by a process or thread pool and every
result lands in its own index slot, so the output never depends on
completion order. Reductions fold per-index partials left to right in
index order, which makes floating-point totals independent of the
worker count.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import os
import pickle
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

WORKERS_ENV = "DESKMD_WORKERS"
CHUNKS_PER_WORKER = 4


class TaskError(RuntimeError):
    """A task raised while running under :func:`parallel_map_indexed`."""

    def __init__(self, index: int, cause: BaseException | str):
        self.index = index
        self.cause = cause if isinstance(cause, BaseException) else None
        self.detail = repr(cause) if isinstance(cause, BaseException) else str(cause)
        super().__init__(f"task failed at index {index}: {self.detail}")

    def __reduce__(self):
        return TaskError, (self.index, self.cause if self.cause is not None else self.detail)


@dataclass(frozen=True)
class ChunkPlan:
    total: int
    chunk_size: int
    chunks: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class WorkerPoolConfig:
    workers: int = 1
    deterministic: bool = True
    backend: str = "process"  # "process" (multiprocessing, fork) or "thread"

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.backend not in ("process", "thread"):
            raise ValueError(f"unknown backend {self.backend!r}")


def host_parallelism() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not available on macOS
        return os.cpu_count() or 1


def plan_chunks(total: int, workers: int) -> ChunkPlan:
    if total < 0 or workers < 1:
        raise ValueError("need total >= 0 and workers >= 1")
    size = max(1, math.ceil(total / (CHUNKS_PER_WORKER * workers)))
    chunks = tuple((start, min(start + size, total)) for start in range(0, total, size))
    return ChunkPlan(total=total, chunk_size=size, chunks=chunks)


def _run_chunk(task: Callable[[int], Any], start: int, end: int) -> list:
    out = []
    for i in range(start, end):
        try:
            out.append(task(i))
        except Exception as exc:
            raise TaskError(i, exc) from exc
    return out


# Process workers receive the task once, through fork, instead of pickling it per chunk.
_PROCESS_TASK: Callable[[int], Any] | None = None


def _process_init(task):
    global _PROCESS_TASK
    _PROCESS_TASK = task


def _process_chunk(bounds: tuple[int, int]):
    try:
        return _run_chunk(_PROCESS_TASK, *bounds)
    except TaskError as exc:
        # keep the original exception only if it survives the trip back
        try:
            pickle.loads(pickle.dumps(exc.cause))
            return exc
        except Exception:
            return TaskError(exc.index, exc.detail)


def _process_context():
    methods = mp.get_all_start_methods()
    return mp.get_context("fork" if "fork" in methods else None)


_thread_pools: dict[int, ThreadPoolExecutor] = {}
_thread_pools_lock = threading.Lock()


def _thread_pool(workers: int) -> ThreadPoolExecutor:
    with _thread_pools_lock:
        pool = _thread_pools.get(workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"deskmd-{workers}")
            _thread_pools[workers] = pool
        return pool


def _iter_chunks(plan: ChunkPlan, task, cfg: WorkerPoolConfig, ordered: bool = True):
    """Yield ``(chunk_number, results)``; in chunk order when ``ordered``."""
    if cfg.workers == 1 or len(plan.chunks) <= 1:
        for n, (start, end) in enumerate(plan.chunks):
            yield n, _run_chunk(task, start, end)
        return

    if cfg.backend == "thread":
        pool = _thread_pool(cfg.workers)
        futures = [pool.submit(_run_chunk, task, s, e) for s, e in plan.chunks]
        try:
            if ordered:
                for n, fut in enumerate(futures):
                    yield n, fut.result()
            else:
                index = {fut: n for n, fut in enumerate(futures)}
                pending = set(futures)
                while pending:
                    done, pending = wait(pending, return_when=FIRST_COMPLETED)
                    for fut in done:
                        yield index[fut], fut.result()
        finally:
            for fut in futures:
                fut.cancel()
        return

    ctx = _process_context()
    pool = ctx.Pool(processes=min(cfg.workers, len(plan.chunks)),
                    initializer=_process_init, initargs=(task,))
    try:
        if ordered:
            stream = enumerate(pool.imap(_process_chunk, plan.chunks))
        else:
            stream = pool.imap_unordered(_numbered_chunk, list(enumerate(plan.chunks)))
        for n, result in stream:
            if isinstance(result, TaskError):
                raise result
            yield n, result
        pool.close()
    finally:
        pool.terminate()
        pool.join()


def _numbered_chunk(item):
    n, bounds = item
    return n, _process_chunk(bounds)


def parallel_map_indexed(plan: ChunkPlan, task: Callable[[int], Any],
                         cfg: WorkerPoolConfig | None = None) -> list:
    """Return ``[task(i) for i in range(plan.total)]`` computed by the pool.

    With one worker this is a plain loop. On failure the remaining chunks
    are cancelled and a :class:`TaskError` naming the lowest failing index
    is raised; no partial results are returned.
    """
    cfg = cfg or WorkerPoolConfig()
    results: list = [None] * plan.total
    for n, chunk_results in _iter_chunks(plan, task, cfg, ordered=True):
        start, end = plan.chunks[n]
        results[start:end] = chunk_results
    return results


@dataclass
class Accumulator:
    """Energy plus per-atom forces; the unit of reduction for force kernels."""

    energy: float
    forces: np.ndarray


def deterministic_reduce(partials: Sequence[Accumulator], n_atoms: int = 0) -> Accumulator:
    """Left fold of partials in the given (chunk/index) order.

    ``((p0 + p1) + p2) + ...``, so the result is bit-identical whenever the
    sequence of partials is, regardless of how they were scheduled.
    """
    energy = 0.0
    forces = np.zeros((n_atoms, 3))
    for part in partials:
        energy += part.energy
        forces = forces + part.forces
    return Accumulator(energy, forces)


def parallel_reduce(plan: ChunkPlan, task: Callable[[int], Accumulator],
                    cfg: WorkerPoolConfig | None = None, n_atoms: int = 0) -> Accumulator:
    """Map ``task`` over the plan and reduce the per-index accumulators.

    In deterministic mode the fold runs in index order after all chunks
    finish. Otherwise chunk partials are folded as they complete, which is
    cheaper but makes the last bits of the result schedule-dependent.
    """
    cfg = cfg or WorkerPoolConfig()
    if cfg.deterministic:
        return deterministic_reduce(parallel_map_indexed(plan, task, cfg), n_atoms)
    energy = 0.0
    forces = np.zeros((n_atoms, 3))
    for _, chunk_results in _iter_chunks(plan, task, cfg, ordered=False):
        for part in chunk_results:
            energy += part.energy
            forces = forces + part.forces
    return Accumulator(energy, forces)


def resolve_workers(flag: int | None) -> int:
    """Worker count from the CLI flag, else the environment, else 1."""
    if flag is not None:
        return flag
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if value < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1")
        return value
    return 1
