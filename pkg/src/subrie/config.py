"""Run configuration, seeding and the bounded thread pool."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

SCHEMA_VERSION = "1.0"


def thread_count() -> int:
    raw = os.environ.get("SUBRIE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def parallel_map(fn: Callable, items: Iterable) -> list:
    """Ordered map over a thread pool capped by ``SUBRIE_THREADS``.

    The compiled kernels release the GIL, so integrations overlap.
    """
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def spawn_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Independent child seeds, one per work item, independent of thread count."""
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    elif isinstance(seed, (list, tuple)):
        root = np.random.SeedSequence([int(x) for x in seed])
    else:
        root = np.random.SeedSequence(int(seed))
    return root.spawn(n)


@dataclass
class RunConfig:
    seed: int = 0
    rtol: float = 1e-10
    atol: float = 1e-10
    rank_tol: float = 1e-9
    submersion_tol: float = 1e-8
    residual_tol: float = 1e-9
    beta_min: float = 0.3
    theta: float = 0.05
    Theta: float = 0.1
    dsr_knots: int = 24
    dsr_starts: int = 4
    dsr_max_iter: int = 300
    restarts: int = 8
    basis_sizes: tuple = (4, 6, 8)
    eta: float = 0.1
    output_dir: str = "."
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["basis_sizes"] = list(self.basis_sizes)
        return out
