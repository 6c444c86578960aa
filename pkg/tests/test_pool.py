"""Prompt-pool selection, key pull loss, and the selection analytics."""

from __future__ import annotations

import numpy as np
import pytest

from oclbench import autodiff as ad
from oclbench.autodiff import Tensor
from oclbench.encoder import Encoder, EncoderConfig, PromptSet
from oclbench.errors import ConfigError
from oclbench.pool import (PromptPool, SelectionLog, block_prompts_for,
                           key_pull_loss, key_similarity_stats, query_of,
                           select_prompt, selection_histogram,
                           task_id_accuracy)
from oclbench.rng import Xoshiro256

CFG = EncoderConfig(depth=3, hidden_dim=8, heads=2, tokens=4, chunk_dim=2, seed=21)


def make_pool(size=4, mode="similarity", shared=1, pooled=2, seed=5) -> PromptPool:
    return PromptPool.init(CFG, pool_size=size, length=2, shared_blocks=shared,
                           pooled_blocks=pooled, mode=mode, seed=seed)


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


def test_query_deterministic_and_pool_independent():
    enc = Encoder(CFG)
    x = np.random.default_rng(1).standard_normal(CFG.feature_dim)
    q1 = query_of(enc, x)
    pool = make_pool()
    pool.keys.data *= 3.0   # mutate pool state
    q2 = query_of(enc, x)
    assert np.array_equal(q1, q2)


def test_query_equals_encode_without_adapters():
    enc = Encoder(CFG)
    x = np.random.default_rng(2).standard_normal(CFG.feature_dim)
    with ad.no_grad():
        direct = enc.encode(x).data[0]
    assert np.array_equal(query_of(enc, x), direct)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def test_single_entry_pool_always_selects_zero():
    rng = Xoshiro256(3)
    q = np.random.default_rng(3).standard_normal(8)
    for mode in ("similarity", "random", "fixed"):
        pool = make_pool(size=1, mode=mode)
        idx, _ = select_prompt(q, pool, rng)
        assert idx == 0


def test_similarity_selects_matching_key():
    pool = make_pool(size=4, mode="similarity")
    keys = np.eye(8)[:4]
    pool.keys.data[:] = keys
    q = np.zeros(8)
    q[3] = 2.5
    idx, cos = select_prompt(q, pool)
    assert idx == 3
    assert cos == pytest.approx(1.0, abs=1e-12)


def test_similarity_selection_scale_invariant():
    rng = np.random.default_rng(4)
    pool = make_pool(size=6, mode="similarity")
    q = rng.standard_normal(8)
    base, _ = select_prompt(q, pool)
    for c in range(6):
        scaled = make_pool(size=6, mode="similarity")
        scaled.keys.data[:] = pool.keys.data
        scaled.keys.data[c] *= 37.5
        idx, _ = select_prompt(q, scaled)
        assert idx == base


def test_random_selection_is_nearly_uniform():
    pool = make_pool(size=10, mode="random")
    rng = Xoshiro256(9)
    q = np.zeros(8)
    counts = np.zeros(10, dtype=int)
    for _ in range(10_000):
        idx, _ = select_prompt(q, pool, rng)
        counts[idx] += 1
    freqs = counts / 10_000
    assert np.all(np.abs(freqs - 0.1) < 0.02)


# ---------------------------------------------------------------------------
# key pull loss
# ---------------------------------------------------------------------------


def test_pull_loss_zero_when_parallel():
    pool = make_pool(size=3)
    pool.keys.data[1] = [2.0, 0, 0, 0, 0, 0, 0, 0]
    q = np.array([5.0, 0, 0, 0, 0, 0, 0, 0])
    assert key_pull_loss(q, pool, 1).item() == pytest.approx(0.0, abs=1e-12)


def test_pull_loss_one_when_orthogonal():
    pool = make_pool(size=3)
    pool.keys.data[0] = [1.0, 0, 0, 0, 0, 0, 0, 0]
    q = np.array([0.0, 1.0, 0, 0, 0, 0, 0, 0])
    assert key_pull_loss(q, pool, 0).item() == pytest.approx(1.0, abs=1e-12)


def test_pull_loss_only_touches_selected_key():
    pool = make_pool(size=4)
    q = np.random.default_rng(5).standard_normal(8)
    loss = key_pull_loss(q, pool, 2)
    grads = ad.grads(loss, [pool.keys])[0]
    for row in (0, 1, 3):
        assert np.all(grads[row] == 0.0)
    assert np.any(grads[2] != 0.0)


def test_pull_loss_fd_gradient():
    pool = make_pool(size=3)
    q = np.random.default_rng(6).standard_normal(8)

    def f():
        return key_pull_loss(q, pool, 1)

    assert ad.grad_check(f, [pool.keys], step=1e-4) < 1e-6


def test_pull_loss_selected_out_of_range():
    with pytest.raises(ConfigError):
        key_pull_loss(np.ones(8), make_pool(size=2), 5)


def test_keys_frozen_outside_similarity_mode():
    assert make_pool(mode="similarity").keys.requires_grad
    assert not make_pool(mode="random").keys.requires_grad
    assert not make_pool(mode="fixed").keys.requires_grad


# ---------------------------------------------------------------------------
# pool path vs single-prompt path
# ---------------------------------------------------------------------------


def test_pool_of_one_matches_prompt_set_bit_for_bit():
    enc = Encoder(CFG)
    pool = PromptPool.init(CFG, pool_size=1, length=2, shared_blocks=0,
                           pooled_blocks=2, mode="fixed", seed=7)
    pairs = [pool.entries[0][i] for i in range(2)]
    prompt_set = PromptSet(length=2, pairs=[(Tensor(pk.data.copy(), requires_grad=True),
                                             Tensor(pv.data.copy(), requires_grad=True))
                                            for pk, pv in pairs])
    x = np.random.default_rng(8).standard_normal((3, CFG.feature_dim))
    table = block_prompts_for(pool, [0, 0, 0])
    with ad.no_grad():
        via_pool = enc.encode_with_block_prompts(x, table).data
        via_set = enc.encode(x, prompt_set=prompt_set).data
    assert via_pool.tobytes() == via_set.tobytes()


# ---------------------------------------------------------------------------
# analytics
# ---------------------------------------------------------------------------


def test_histogram_empty_log():
    assert np.array_equal(selection_histogram(SelectionLog(), 3, 4),
                          np.zeros((3, 4), dtype=np.int64))


def test_histogram_single_record():
    log = SelectionLog()
    log.add(class_id=2, task_id=0, prompt_id=7, cosine=0.5)
    hist = selection_histogram(log, 4, 8)
    assert hist[2, 7] == 1
    assert hist.sum() == 1


def test_histogram_row_sums_match_class_counts():
    rng = np.random.default_rng(9)
    log = SelectionLog()
    per_class = {c: 0 for c in range(5)}
    for _ in range(200):
        c = int(rng.integers(0, 5))
        log.add(c, task_id=None, prompt_id=int(rng.integers(0, 6)), cosine=0.0)
        per_class[c] += 1
    hist = selection_histogram(log, 5, 6)
    assert hist.sum() == len(log)
    for c in range(5):
        assert hist[c].sum() == per_class[c]


def test_task_id_accuracy_perfect_selection():
    log = SelectionLog()
    for c, t in [(0, 0), (1, 0), (2, 1), (3, 1)]:
        for _ in range(10):
            log.add(c, t, prompt_id=t, cosine=0.9)
    acc = task_id_accuracy(log, {0: 0, 1: 1})
    assert all(a == 1.0 for _, a in acc.values())


def test_task_id_accuracy_uniform_selection_near_chance():
    rng = Xoshiro256(11)
    log = SelectionLog()
    p = 5
    for i in range(10_000):
        c = i % 4
        t = c % p
        log.add(c, t, prompt_id=rng.randrange(p), cosine=0.0)
    acc = task_id_accuracy(log, {i: i for i in range(p)})
    for _, (n, a) in acc.items():
        assert abs(a - 1.0 / p) < 0.05


def test_task_id_accuracy_absent_class_not_reported():
    log = SelectionLog()
    log.add(0, 0, 0, 0.5)
    acc = task_id_accuracy(log, {0: 0})
    assert 0 in acc and 1 not in acc


def test_task_id_accuracy_unmapped_prompt_errors():
    log = SelectionLog()
    log.add(0, 0, prompt_id=3, cosine=0.0)
    with pytest.raises(ConfigError):
        task_id_accuracy(log, {0: 0})


def test_key_stats_single_record():
    log = SelectionLog()
    log.add(0, task_id=2, prompt_id=0, cosine=0.4)
    stats = key_similarity_stats(log)
    assert stats[2] == (pytest.approx(0.4), pytest.approx(0.0))


def test_key_stats_identical_queries_and_keys():
    log = SelectionLog()
    for _ in range(8):
        log.add(1, task_id=0, prompt_id=1, cosine=1.0)
    mean, std = key_similarity_stats(log)[0]
    assert mean == pytest.approx(1.0) and std == pytest.approx(0.0)


def test_orthogonal_subspace_stream_gives_unit_cosine_per_task():
    """Keys fixed to per-task orthonormal directions; queries drawn inside
    each task's one-dimensional subspace with positive coefficients."""
    p = 4
    pool = make_pool(size=p, mode="similarity")
    pool.keys.data[:] = np.eye(8)[:p]
    rng = np.random.default_rng(12)
    log = SelectionLog()
    for i in range(400):
        t = i % p
        scale = float(rng.uniform(0.5, 3.0))
        q = np.zeros(8)
        q[t] = scale
        idx, cos = select_prompt(q, pool)
        log.add(class_id=t, task_id=t, prompt_id=idx, cosine=cos)
    acc = task_id_accuracy(log, {i: i for i in range(p)})
    assert all(a == 1.0 for _, a in acc.values())
    for t, (mean, std) in key_similarity_stats(log).items():
        assert mean == pytest.approx(1.0, abs=1e-9)
        assert std == pytest.approx(0.0, abs=1e-9)
