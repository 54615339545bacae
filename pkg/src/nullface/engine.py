"""Bounded worker pool shared by the sweep runner and the service."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "NULLFACE_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, min(8, os.cpu_count() or 1))


def make_pool(workers: int | None = None) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers or worker_count())
