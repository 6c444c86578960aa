"""Si-Blurry scenario structure, synthetic clusters, IDX parsing, and the
reservoir buffer."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from oclbench.errors import ConfigError, FormatError
from oclbench.rng import Xoshiro256
from oclbench.stream import (Dataset, MemoryBuffer, SiBlurryConfig, idx_load,
                             load_idx_dataset, si_blurry_split, stream_batches,
                             synth_dataset)


def labels_for(counts: dict[int, int]) -> np.ndarray:
    out = []
    for c, n in counts.items():
        out.extend([c] * n)
    return np.array(out, dtype=np.int64)


def cfg(**kw) -> SiBlurryConfig:
    base = dict(num_classes=10, tasks=5, disjoint_ratio=0.5, blurry_ratio=0.1,
                batch_size=8, seed=42)
    base.update(kw)
    return SiBlurryConfig(**base)


# ---------------------------------------------------------------------------
# scenario split
# ---------------------------------------------------------------------------


def test_half_disjoint_ratio_gives_exactly_five_disjoint_classes():
    labels = labels_for({c: 20 for c in range(10)})
    assignment = si_blurry_split(cfg(), labels)
    assert assignment.kind.count("disjoint") == 5
    assert assignment.kind.count("blurry") == 5


def test_fully_disjoint_tasks_have_disjoint_label_sets():
    labels = labels_for({c: 12 for c in range(10)})
    assignment = si_blurry_split(cfg(disjoint_ratio=1.0, blurry_ratio=0.0), labels)
    label_sets = []
    for t in range(5):
        classes = {int(labels[i]) for i in range(len(labels))
                   if assignment.final_task[i] == t}
        label_sets.append(classes)
    for a in range(5):
        for b in range(a + 1, 5):
            assert not (label_sets[a] & label_sets[b])


def test_no_blurry_no_disjoint_keeps_home_tasks_only():
    labels = labels_for({c: 9 for c in range(10)})
    assignment = si_blurry_split(cfg(disjoint_ratio=0.0, blurry_ratio=0.0), labels)
    for i, c in enumerate(labels):
        assert assignment.final_task[i] == assignment.home_task[c]
    # every class appears in exactly one task
    for c in range(10):
        tasks = {int(assignment.final_task[i]) for i in range(len(labels))
                 if labels[i] == c}
        assert len(tasks) == 1


def test_disjoint_samples_never_leave_home_task():
    labels = labels_for({c: 30 for c in range(10)})
    assignment = si_blurry_split(cfg(blurry_ratio=0.7), labels)
    for i, c in enumerate(labels):
        if assignment.kind[c] == "disjoint":
            assert assignment.final_task[i] == assignment.home_task[c]


def test_reassigned_count_exact():
    labels = labels_for({c: 30 for c in range(10)})
    assignment = si_blurry_split(cfg(blurry_ratio=0.3), labels)
    blurry_total = sum(1 for c in labels if assignment.kind[c] == "blurry")
    assert blurry_total == 150
    assert assignment.reassigned == int(np.floor(0.3 * blurry_total + 1e-9)) == 45
    # draws may land back on the home task, so observed moves never exceed it
    moved = sum(1 for i, c in enumerate(labels)
                if assignment.kind[c] == "blurry"
                and assignment.final_task[i] != assignment.home_task[c])
    assert moved <= assignment.reassigned


def test_round_robin_home_tasks_are_balanced():
    labels = labels_for({c: 5 for c in range(10)})
    assignment = si_blurry_split(cfg(disjoint_ratio=1.0), labels)
    per_task = [assignment.home_task.count(t) for t in range(5)]
    assert per_task == [2, 2, 2, 2, 2]


def test_ratio_out_of_range_rejected():
    with pytest.raises(ConfigError):
        cfg(disjoint_ratio=1.5)
    with pytest.raises(ConfigError):
        cfg(blurry_ratio=-0.1)


def test_ratio_arithmetic_immune_to_float_artifacts():
    labels = labels_for({c: 1 for c in range(30)})
    # 0.1 * 30 = 3.0000000000000004 in binary floats
    assignment = si_blurry_split(cfg(num_classes=30, disjoint_ratio=0.1), labels)
    assert assignment.kind.count("disjoint") == 3


def test_split_deterministic_per_seed():
    labels = labels_for({c: 10 for c in range(10)})
    a = si_blurry_split(cfg(), labels)
    b = si_blurry_split(cfg(), labels)
    c = si_blurry_split(cfg(seed=43), labels)
    assert np.array_equal(a.final_task, b.final_task)
    assert a.kind == b.kind
    assert not np.array_equal(a.final_task, c.final_task) or a.kind != c.kind


# ---------------------------------------------------------------------------
# stream batches
# ---------------------------------------------------------------------------


def make_dataset(n_per_class=10, classes=6, dim=4, seed=1) -> Dataset:
    return synth_dataset(classes, n_per_class, dim, spread=0.5, seed=seed)


def test_stream_emits_each_sample_exactly_once():
    ds = make_dataset()
    assignment = si_blurry_split(cfg(num_classes=6, tasks=3), ds.labels)
    batches = stream_batches(assignment, ds, batch_size=7, seed=5)
    seen = np.concatenate([b.sample_ids for b in batches])
    assert sorted(seen.tolist()) == list(range(len(ds)))


def test_stream_tasks_in_order_batches_bounded():
    ds = make_dataset()
    assignment = si_blurry_split(cfg(num_classes=6, tasks=3), ds.labels)
    batches = stream_batches(assignment, ds, batch_size=7, seed=5)
    tasks = [b.task_id for b in batches]
    assert tasks == sorted(tasks)
    assert all(1 <= len(b) <= 7 for b in batches)
    assert all(src == "stream" for b in batches for src in b.sources)


def test_single_task_is_plain_shuffled_pass():
    ds = make_dataset(classes=4)
    assignment = si_blurry_split(
        cfg(num_classes=4, tasks=1, disjoint_ratio=0.0, blurry_ratio=0.0), ds.labels)
    batches = stream_batches(assignment, ds, batch_size=16, seed=9)
    assert {b.task_id for b in batches} == {0}
    order = np.concatenate([b.sample_ids for b in batches])
    assert sorted(order.tolist()) == list(range(len(ds)))
    assert not np.array_equal(order, np.arange(len(ds)))  # actually shuffled


def test_stream_bytes_identical_for_same_seed():
    ds = make_dataset()
    assignment = si_blurry_split(cfg(num_classes=6, tasks=2), ds.labels)
    a = stream_batches(assignment, ds, batch_size=5, seed=3)
    b = stream_batches(assignment, ds, batch_size=5, seed=3)
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.inputs.tobytes() == y.inputs.tobytes()
        assert np.array_equal(x.labels, y.labels)


# ---------------------------------------------------------------------------
# synthetic clusters
# ---------------------------------------------------------------------------


def test_synth_counts_exact():
    ds = synth_dataset(5, 7, 12, spread=0.5, seed=2)
    assert len(ds) == 35
    assert all(int((ds.labels == c).sum()) == 7 for c in range(5))


def test_synth_tiny_spread_collapses_clusters():
    ds = synth_dataset(3, 4, 6, spread=1e-12, seed=3)
    for c in range(3):
        rows = ds.inputs[ds.labels == c]
        assert np.allclose(rows, rows[0], atol=1e-9)


def test_synth_nearest_centroid_oracle_is_perfect_when_spread_small():
    ds = synth_dataset(4, 25, 8, spread=0.05, seed=4, separation=5.0)
    centroids = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(4)])
    d2 = ((ds.inputs[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    assert np.array_equal(d2.argmin(axis=1), ds.labels)


def test_synth_requires_positive_spread():
    with pytest.raises(ConfigError):
        synth_dataset(2, 3, 4, spread=0.0, seed=1)


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------


def write_idx_images(path, arrays: np.ndarray) -> None:
    n, r, c = arrays.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, 0x08, 3))
        fh.write(struct.pack(">III", n, r, c))
        fh.write(arrays.astype(np.uint8).tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, 0x08, 1))
        fh.write(struct.pack(">I", labels.size))
        fh.write(labels.tobytes())


def test_idx_round_trip_two_samples(tmp_path):
    imgs = np.array([[[0, 51], [102, 255]],
                     [[255, 204], [153, 0]]], dtype=np.uint8)
    path = tmp_path / "imgs.idx"
    write_idx_images(path, imgs)
    data = idx_load(path)
    assert data.shape == (2, 2, 2)
    assert np.allclose(data[0], [[0.0, 0.2], [0.4, 1.0]])
    assert np.allclose(data[1], [[1.0, 0.8], [0.6, 0.0]])


def test_idx_wrong_magic(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(b"\x01\x00\x08\x01" + b"\x00" * 8)
    with pytest.raises(FormatError) as err:
        idx_load(path)
    assert "byte 0" in str(err.value)


def test_idx_payload_length_mismatch(tmp_path):
    path = tmp_path / "trunc.idx"
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, 0x08, 2))
        fh.write(struct.pack(">II", 2, 3))
        fh.write(b"\x00" * 5)   # should be 6 bytes
    with pytest.raises(FormatError) as err:
        idx_load(path)
    assert "byte 12" in str(err.value)


def test_idx_dataset_pairing(tmp_path):
    imgs = np.arange(16, dtype=np.uint8).reshape(4, 2, 2)
    write_idx_images(tmp_path / "i.idx", imgs)
    write_idx_labels(tmp_path / "l.idx", [0, 1, 1, 0])
    ds = load_idx_dataset(tmp_path / "i.idx", tmp_path / "l.idx")
    assert ds.inputs.shape == (4, 4)
    assert np.array_equal(ds.labels, [0, 1, 1, 0])
    assert ds.num_classes == 2


def test_idx_dataset_count_mismatch(tmp_path):
    imgs = np.zeros((3, 2, 2), dtype=np.uint8)
    write_idx_images(tmp_path / "i.idx", imgs)
    write_idx_labels(tmp_path / "l.idx", [0, 1])
    with pytest.raises(FormatError):
        load_idx_dataset(tmp_path / "i.idx", tmp_path / "l.idx")


# ---------------------------------------------------------------------------
# reservoir buffer
# ---------------------------------------------------------------------------


def test_buffer_keeps_everything_under_capacity():
    buf = MemoryBuffer(capacity=10)
    rng = Xoshiro256(1)
    for i in range(5):
        buf.insert(np.array([float(i)]), i, rng)
    assert buf.size == 5
    assert {y for _, y in buf.items} == {0, 1, 2, 3, 4}


def test_buffer_reservoir_is_uniform_over_stream_position():
    """200 seeded trials of 10k insertions into capacity 10: retention per
    position-decile should match the uniform expectation within 30%."""
    capacity, n, trials = 10, 10_000, 200
    decile_counts = np.zeros(10)
    for trial in range(trials):
        buf = MemoryBuffer(capacity=capacity)
        rng = Xoshiro256(1000 + trial)
        x = np.zeros(1)
        for i in range(n):
            buf.insert(x, i, rng)
        for _, y in buf.items:
            decile_counts[int(y // (n // 10))] += 1
    expected = trials * capacity / 10
    assert np.all(np.abs(decile_counts - expected) <= 0.3 * expected), decile_counts


def test_buffer_sample_all_returns_each_item_once():
    buf = MemoryBuffer(capacity=8)
    rng = Xoshiro256(2)
    for i in range(6):
        buf.insert(np.array([float(i)]), i, rng)
    batch = buf.sample(6, Xoshiro256(3))
    assert sorted(batch.labels.tolist()) == [0, 1, 2, 3, 4, 5]
    assert all(src == "replay" for src in batch.sources)


def test_buffer_empty_sample_rejected():
    with pytest.raises(ValueError):
        MemoryBuffer(capacity=4).sample(1, Xoshiro256(1))


def test_buffer_oversample_rejected():
    buf = MemoryBuffer(capacity=4)
    buf.insert(np.zeros(1), 0, Xoshiro256(1))
    with pytest.raises(ValueError):
        buf.sample(2, Xoshiro256(2))
