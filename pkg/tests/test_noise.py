import threading

import numpy as np

from app.noise import (
    NOISE_BLOCK,
    STEP_CHUNK,
    NoiseStream,
    block_sizes,
    derive_rng,
    derive_seed,
    path_rng,
    run_blocks,
    stack_blocks,
)


def test_block_sizes():
    assert block_sizes(0) == []
    assert block_sizes(10) == [10]
    assert block_sizes(NOISE_BLOCK) == [NOISE_BLOCK]
    assert block_sizes(2 * NOISE_BLOCK + 5) == [NOISE_BLOCK, NOISE_BLOCK, 5]


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(7, 1) == derive_seed(7, 1)
    assert derive_seed(7, 1) != derive_seed(7, 2)
    assert derive_seed(7, 1) != derive_seed(8, 1)
    a = derive_rng(3, 0).standard_normal(4)
    b = derive_rng(3, 0).standard_normal(4)
    np.testing.assert_array_equal(a, b)


def test_stream_shapes_and_scaling():
    stream = NoiseStream(seed=1, first_path=0, n_block=5, dim_slow=2, dim_fast=3, step=0.04, n_sub=4)
    dw1, dw2 = stream.next_step()
    assert dw1.shape == (5, 2)
    assert dw2.shape == (4, 5, 3)

    raw = path_rng(1, 2).standard_normal((STEP_CHUNK, 2 + 4 * 3))
    np.testing.assert_allclose(dw1[2], raw[0, :2] * 0.2)
    np.testing.assert_allclose(dw2[:, 2], raw[0, 2:].reshape(4, 3) * 0.1)


def test_path_increments_do_not_depend_on_block_layout():
    wide = NoiseStream(seed=4, first_path=0, n_block=6, dim_slow=1, dim_fast=2, step=0.01, n_sub=3)
    alone = NoiseStream(seed=4, first_path=4, n_block=1, dim_slow=1, dim_fast=2, step=0.01, n_sub=3)
    for _ in range(STEP_CHUNK + 5):
        w1, w2 = wide.next_step()
        a1, a2 = alone.next_step()
        np.testing.assert_array_equal(w1[4], a1[0])
        np.testing.assert_array_equal(w2[:, 4], a2[:, 0])


def test_run_blocks_keeps_block_order():
    n = 3 * NOISE_BLOCK + 1
    seen = []
    lock = threading.Lock()

    def fn(b, start, size):
        with lock:
            seen.append(b)
        return np.full(size, b)

    serial = stack_blocks(run_blocks(fn, n, parallelism=1), 0)
    threaded = stack_blocks(run_blocks(fn, n, parallelism=3), 0)
    np.testing.assert_array_equal(serial, threaded)
    assert serial.size == n
    assert serial[NOISE_BLOCK] == 1 and serial[-1] == 3
    assert sorted(seen) == [0, 0, 1, 1, 2, 2, 3, 3]
