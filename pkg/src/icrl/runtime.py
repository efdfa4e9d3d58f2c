"""Process-level tuning for the numpy training path.

Call :func:`tune_runtime` once at process start (the CLI, the test suite,
and the demo scripts all do). Library imports stay side-effect free.
"""

from __future__ import annotations

import ctypes
import ctypes.util

__all__ = ["tune_runtime", "tune_allocator", "limit_blas_threads"]

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_tuned_allocator = False
_tuned_blas = False


def tune_allocator(threshold: int = 1 << 30) -> bool:
    """Keep large freed blocks on glibc's free list instead of unmapping.

    The training loop churns through many multi-megabyte intermediate
    arrays per step; with the default mmap threshold each one is a fresh
    mmap/munmap pair and every step refaults its pages. Raising the
    thresholds lets steps reuse the previous step's blocks. No-op on
    non-glibc platforms.
    """
    global _tuned_allocator
    if _tuned_allocator:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, threshold)
        libc.mallopt(_M_TRIM_THRESHOLD, threshold)
        _tuned_allocator = True
    except (OSError, AttributeError):
        return False
    return True


def limit_blas_threads(threads: int = 1) -> bool:
    """Pin BLAS pools to ``threads``.

    The transformer's matrices are small enough that BLAS thread fan-out
    costs more than it saves; one thread is fastest and keeps the
    reference path deterministic.
    """
    global _tuned_blas
    if _tuned_blas:
        return True
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=threads, user_api="blas")
        _tuned_blas = True
    except Exception:
        return False
    return True


def tune_runtime() -> None:
    tune_allocator()
    limit_blas_threads()
