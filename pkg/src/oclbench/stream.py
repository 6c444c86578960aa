"""Si-Blurry stream construction, synthetic datasets, IDX loading, replay.

The scenario splits classes into disjoint ones (confined to a home task)
and blurry ones, then reshuffles a fixed fraction of the blurry-class
samples across tasks so boundaries smear out. All randomness comes from
the package PRNG seeded by config, so a scenario is a pure function of
its inputs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .rng import Xoshiro256


def _ceil_ratio(ratio: float, n: int) -> int:
    # nudge against binary-float artifacts like 0.1 * 30 = 3.0000000000000004
    return math.ceil(ratio * n - 1e-9)


def _floor_ratio(ratio: float, n: int) -> int:
    return math.floor(ratio * n + 1e-9)


@dataclass(frozen=True)
class SiBlurryConfig:
    num_classes: int
    tasks: int
    disjoint_ratio: float
    blurry_ratio: float
    batch_size: int
    seed: int

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError("need at least one task")
        if self.num_classes < 1:
            raise ConfigError("need at least one class")
        if not 0.0 <= self.disjoint_ratio <= 1.0:
            raise ConfigError(f"disjoint_ratio {self.disjoint_ratio} outside [0, 1]")
        if not 0.0 <= self.blurry_ratio <= 1.0:
            raise ConfigError(f"blurry_ratio {self.blurry_ratio} outside [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.disjoint_ratio > 0 and self.num_classes < self.tasks:
            raise ConfigError(
                f"{self.num_classes} classes cannot fill disjoint partitions over {self.tasks} tasks")


@dataclass
class Dataset:
    inputs: np.ndarray   # [n, feature_dim]
    labels: np.ndarray   # [n] int64
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ConfigError("inputs and labels length mismatch")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)


@dataclass
class TaskAssignment:
    kind: list[str]            # per class: 'disjoint' | 'blurry'
    home_task: list[int]       # per class
    final_task: np.ndarray     # per sample
    num_tasks: int
    reassigned: int = 0        # blurry samples drawn for reassignment
                               # (a draw may land back on the home task)

    def task_classes(self, task: int) -> list[int]:
        """Classes whose home task is `task`."""
        return [c for c, t in enumerate(self.home_task) if t == task]


def si_blurry_split(cfg: SiBlurryConfig, labels: np.ndarray) -> TaskAssignment:
    """Assign every class a kind and home task, then scatter a fixed count
    of blurry-class samples across tasks.

    Classes are shuffled by seed; the first ceil(disjoint_ratio * C) become
    disjoint, the rest blurry. Each group is dealt round-robin over the T
    tasks. Exactly floor(blurry_ratio * #blurry-class samples) samples are
    then drawn without replacement and sent to a uniformly random task
    (possibly their own home task).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.num_classes):
        raise ConfigError("labels outside configured class range")
    rng = Xoshiro256(cfg.seed)
    order = list(range(cfg.num_classes))
    rng.shuffle(order)
    n_disjoint = _ceil_ratio(cfg.disjoint_ratio, cfg.num_classes)
    kind = [""] * cfg.num_classes
    home = [0] * cfg.num_classes
    for pos, c in enumerate(order[:n_disjoint]):
        kind[c] = "disjoint"
        home[c] = pos % cfg.tasks
    for pos, c in enumerate(order[n_disjoint:]):
        kind[c] = "blurry"
        home[c] = pos % cfg.tasks
    final = np.array([home[c] for c in labels], dtype=np.int64)
    blurry_samples = [i for i, c in enumerate(labels) if kind[c] == "blurry"]
    n_move = _floor_ratio(cfg.blurry_ratio, len(blurry_samples))
    for j in rng.sample_indices(len(blurry_samples), n_move):
        final[blurry_samples[j]] = rng.randrange(cfg.tasks)
    return TaskAssignment(kind=kind, home_task=home, final_task=final,
                          num_tasks=cfg.tasks, reassigned=n_move)


@dataclass
class Minibatch:
    inputs: np.ndarray
    labels: np.ndarray
    sources: list[str]            # 'stream' | 'replay' per sample
    task_id: int | None = None
    sample_ids: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)


def stream_batches(assignment: TaskAssignment, dataset: Dataset,
                   batch_size: int, seed: int) -> list[Minibatch]:
    """Tasks in order, samples shuffled within each task, chunks of at most
    batch_size. Every dataset sample is emitted exactly once."""
    rng = Xoshiro256(seed)
    batches = []
    for task in range(assignment.num_tasks):
        ids = [i for i in range(len(dataset)) if assignment.final_task[i] == task]
        rng.shuffle(ids)
        for start in range(0, len(ids), batch_size):
            chunk = np.array(ids[start:start + batch_size], dtype=np.int64)
            batches.append(Minibatch(
                inputs=dataset.inputs[chunk],
                labels=dataset.labels[chunk],
                sources=["stream"] * len(chunk),
                task_id=task,
                sample_ids=chunk,
            ))
    return batches


def synth_dataset(num_classes: int, per_class: int, feature_dim: int,
                  spread: float, seed: int, separation: float = 5.0) -> Dataset:
    """Gaussian class clusters: a random unit direction scaled by
    `separation` as mean, isotropic noise of std `spread` around it."""
    if spread <= 0:
        raise ConfigError("cluster spread must be positive")
    rng = Xoshiro256(seed)
    inputs = np.empty((num_classes * per_class, feature_dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        direction = rng.normal(feature_dim)
        direction /= np.linalg.norm(direction)
        mean = separation * direction
        for j in range(per_class):
            row = c * per_class + j
            inputs[row] = mean + spread * rng.normal(feature_dim)
            labels[row] = c
    return Dataset(inputs, labels, num_classes)


# ---------------------------------------------------------------------------
# IDX container (MNIST-style big-endian binary)
# ---------------------------------------------------------------------------

_IDX_DTYPES = {
    0x08: ("u1", 1), 0x09: ("i1", 1), 0x0B: (">i2", 2),
    0x0C: (">i4", 4), 0x0D: (">f4", 4), 0x0E: (">f8", 8),
}


def idx_load(path) -> np.ndarray:
    """Parse one IDX file. Unsigned-byte payloads of rank >= 2 (images) are
    scaled to [0, 1]; rank-1 payloads (labels) stay integral."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated magic at byte 0")
    zero1, zero2, dtype_code, ndim = struct.unpack(">BBBB", blob[:4])
    if zero1 != 0 or zero2 != 0 or dtype_code not in _IDX_DTYPES:
        raise FormatError(f"{path}: bad magic {blob[:4].hex()} at byte 0")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise FormatError(f"{path}: truncated dimension table at byte {len(blob)}")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    dtype, itemsize = _IDX_DTYPES[dtype_code]
    count = int(np.prod(dims)) if dims else 1
    expected = header_len + count * itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob) - header_len} bytes at byte {header_len}, "
            f"expected {count * itemsize} for dims {list(dims)}")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=header_len)
    data = data.reshape(dims).astype(np.float64)
    if dtype_code == 0x08 and ndim >= 2:
        data = data / 255.0
    return data


def load_idx_dataset(images_path, labels_path) -> Dataset:
    """Pair an IDX image file with an IDX label file; images flatten to rows."""
    images = idx_load(images_path)
    labels = idx_load(labels_path)
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: label file must be rank 1")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images_path}: {images.shape[0]} images vs {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1)
    labels = labels.astype(np.int64)
    return Dataset(flat, labels, int(labels.max()) + 1 if labels.size else 0)


# ---------------------------------------------------------------------------
# replay memory
# ---------------------------------------------------------------------------


@dataclass
class MemoryBuffer:
    """Reservoir-sampled replay memory: after n insertions every seen sample
    sits in the buffer with probability capacity/n."""
    capacity: int
    items: list[tuple[np.ndarray, int]] = field(default_factory=list)
    seen: int = 0

    def insert(self, x: np.ndarray, y: int, rng: Xoshiro256) -> None:
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append((np.array(x, copy=True), int(y)))
        else:
            slot = rng.randrange(self.seen)
            if slot < self.capacity:
                self.items[slot] = (np.array(x, copy=True), int(y))

    @property
    def size(self) -> int:
        return len(self.items)

    def sample(self, k: int, rng: Xoshiro256) -> Minibatch:
        """k distinct stored samples, tagged as replay."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if k > self.size:
            raise ValueError(f"requested {k} samples, buffer holds {self.size}")
        picks = rng.sample_indices(self.size, k)
        xs = np.stack([self.items[i][0] for i in picks])
        ys = np.array([self.items[i][1] for i in picks], dtype=np.int64)
        return Minibatch(inputs=xs, labels=ys, sources=["replay"] * k)
