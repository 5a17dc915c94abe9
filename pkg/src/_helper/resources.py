from __future__ import annotations

import os
from typing import Dict

import psutil


def default_thread_count() -> int:
    """
    Physical core count, falling back to logical cores and finally to 1.
    """
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count(logical=True)
    return max(1, int(cores or 1))


def process_footprint() -> Dict[str, float]:
    """
    Resource snapshot of the current process, echoed into study reports.
    """
    process = psutil.Process(os.getpid())
    memory = process.memory_info()
    return {
        "rss_mb": memory.rss / 2**20,
        "cpu_seconds": sum(process.cpu_times()[:2]),
        "logical_cores": float(psutil.cpu_count(logical=True) or 1),
        "physical_cores": float(default_thread_count()),
    }
