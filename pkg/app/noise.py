"""
Reproducible noise streams.

Every path ``i`` of a run with seed ``s`` draws from its own Philox generator
keyed by ``SeedSequence(s, spawn_key=(PATH_STREAM, i))``. Paths are grouped
in blocks of NOISE_BLOCK only to batch the arithmetic, so a path's increments
depend on (seed, path index) alone and never on the batch size or the number
of workers.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

NOISE_BLOCK = 1024
STEP_CHUNK = 32
# spawn-key prefix reserved for per-path noise
PATH_STREAM = 0x5046

T = TypeVar("T")


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed for a sub-stream (grid point, start, ...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for (seed, *keys)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Noise generator of one path."""
    return derive_rng(seed, PATH_STREAM, path_index)


def block_sizes(n_paths: int) -> List[int]:
    """Split n_paths into NOISE_BLOCK-sized blocks (last one may be shorter)."""
    full, rest = divmod(n_paths, NOISE_BLOCK)
    sizes = [NOISE_BLOCK] * full
    if rest:
        sizes.append(rest)
    return sizes


class NoiseStream:
    """
    Step-by-step Brownian increments for a run of consecutive paths.

    Path ``i`` owns a Philox generator keyed by (seed, i) and every engine
    consumes it through ``next_step`` in the same order (slow channel first,
    then all fast substeps). Draws are buffered STEP_CHUNK steps at a time per
    path, so a path's increments never depend on which other paths share its
    block.
    """

    def __init__(self, seed: int, first_path: int, n_block: int, dim_slow: int, dim_fast: int,
                 step: float, n_sub: int):
        self.rngs = [path_rng(seed, first_path + i) for i in range(n_block)]
        self.n_block = n_block
        self.dim_slow = dim_slow
        self.dim_fast = dim_fast
        self.width = dim_slow + n_sub * dim_fast
        self.sqrt_step = math.sqrt(step)
        self.sqrt_fast_step = math.sqrt(step / n_sub)
        self.n_sub = n_sub
        self._buffer = np.empty((0, n_block, self.width))
        self._pos = 0

    def _refill(self):
        draws = [rng.standard_normal((STEP_CHUNK, self.width)) for rng in self.rngs]
        self._buffer = np.stack(draws, axis=1) if draws else np.empty((STEP_CHUNK, 0, self.width))
        self._pos = 0

    def next_step(self):
        """Return (dW1, dW2) with shapes (n_block, d) and (n_sub, n_block, d)."""
        if self._pos == self._buffer.shape[0]:
            self._refill()
        row = self._buffer[self._pos]
        self._pos += 1
        dw1 = row[:, :self.dim_slow] * self.sqrt_step
        fast = row[:, self.dim_slow:].reshape(self.n_block, self.n_sub, self.dim_fast)
        dw2 = np.transpose(fast, (1, 0, 2)) * self.sqrt_fast_step
        return dw1, dw2


@dataclass(frozen=True)
class NoisePath:
    """Materialised increments (slow: (n_steps, n, d), fast: (n_steps, n_sub, n, d))."""

    slow: np.ndarray
    fast: np.ndarray
    seed: int
    step: float

    @property
    def n_paths(self) -> int:
        return self.slow.shape[1]

    @property
    def n_sub(self) -> int:
        return self.fast.shape[1]


def run_blocks(fn: Callable[[int, int, int], T], n_paths: int, parallelism: int = 1) -> List[T]:
    """
    Apply fn(block_index, first_path, n_block) to every block.

    Results come back in block order whatever the number of workers.
    """
    sizes = block_sizes(n_paths)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int) if sizes else []
    jobs = list(zip(range(len(sizes)), starts, sizes))
    if parallelism <= 1 or len(jobs) <= 1:
        return [fn(b, int(s), n) for b, s, n in jobs]

    logger.debug("running %d blocks on %d workers", len(jobs), parallelism)
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(fn, b, int(s), n) for b, s, n in jobs]
        return [f.result() for f in futures]


def stack_blocks(parts: Sequence[np.ndarray], axis: int) -> np.ndarray:
    """Concatenate per-block arrays along the path axis."""
    return np.concatenate(list(parts), axis=axis)
