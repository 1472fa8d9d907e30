"""Kernel thread control for reproducible reductions."""

from __future__ import annotations

import contextlib
import os

from threadpoolctl import threadpool_limits


@contextlib.contextmanager
def limit_threads(deterministic: bool = False):
    """Cap BLAS threads at ``CRT_NUM_THREADS`` (or 1 in deterministic mode)."""
    n = 1 if deterministic else os.environ.get("CRT_NUM_THREADS")
    if n is None:
        yield
        return
    with threadpool_limits(limits=int(n)):
        yield
