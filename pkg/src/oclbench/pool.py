"""Prompt-pool baselines and the analytics used to probe prompt selection.

A pool holds P (prompt, key) entries; per input a query vector (the
class-token feature of the frozen, prompt-free encoder) picks an entry by
cosine similarity against the keys, by a uniform random draw, or always
entry 0. Pool entries carry per-block prefix pairs for the pooled blocks;
optionally a leading span of blocks uses one shared prompt for every
input. The selection log feeds three diagnostics: per-class selection
histograms, task-identification accuracy, and query/key cosine stats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import heads
from .autodiff import Tensor
from .encoder import Encoder, EncoderConfig
from .errors import ConfigError
from .rng import Xoshiro256

SELECTION_MODES = ("similarity", "random", "fixed")


@dataclass
class PromptPool:
    """P candidate prompts with keys, plus shared prompts for leading blocks.

    entries[p][block] = (p_k, p_v); shared[block] = (p_k, p_v).
    Keys are learnable only in similarity mode (random/fixed selection has
    nothing to align, matching the parameter-count gap between the
    similarity and random baselines).
    """
    keys: Tensor                 # [P, D]
    entries: list[dict[int, tuple[Tensor, Tensor]]]
    shared: dict[int, tuple[Tensor, Tensor]]
    mode: str = "similarity"
    pull_weight: float = 0.5

    def __post_init__(self):
        if len(self.entries) < 1:
            raise ConfigError("prompt pool needs at least one entry")
        if self.mode not in SELECTION_MODES:
            raise ConfigError(f"unknown selection mode '{self.mode}'")

    @property
    def size(self) -> int:
        return len(self.entries)

    @classmethod
    def init(cls, cfg: EncoderConfig, pool_size: int, length: int,
             shared_blocks: int, pooled_blocks: int, mode: str, seed: int,
             pull_weight: float = 0.5, std: float = 0.02) -> "PromptPool":
        if shared_blocks + pooled_blocks > cfg.depth:
            raise ConfigError(
                f"{shared_blocks} shared + {pooled_blocks} pooled blocks exceed depth {cfg.depth}")
        rng = Xoshiro256(seed)
        d = cfg.hidden_dim
        learn_keys = mode == "similarity"
        key_rows = rng.normal((pool_size, d))
        key_rows /= np.linalg.norm(key_rows, axis=1, keepdims=True)
        keys = Tensor(key_rows, requires_grad=learn_keys)
        shared = {}
        for i in range(shared_blocks):
            shared[i] = (Tensor(rng.normal((length, d), std), requires_grad=True),
                         Tensor(rng.normal((length, d), std), requires_grad=True))
        entries = []
        for _ in range(pool_size):
            per_block = {}
            for i in range(shared_blocks, shared_blocks + pooled_blocks):
                per_block[i] = (Tensor(rng.normal((length, d), std), requires_grad=True),
                                Tensor(rng.normal((length, d), std), requires_grad=True))
            entries.append(per_block)
        return cls(keys=keys, entries=entries, shared=shared, mode=mode,
                   pull_weight=pull_weight)

    def learnables(self) -> list[Tensor]:
        out = []
        if self.keys.requires_grad:
            out.append(self.keys)
        for pair in self.shared.values():
            out.extend(pair)
        for entry in self.entries:
            for pair in entry.values():
                out.extend(pair)
        return out


def query_of(encoder: Encoder, x: np.ndarray) -> np.ndarray:
    """Class-token feature of the frozen, prompt-free encoder, as a plain
    array: queries never carry gradients."""
    with ad.no_grad():
        g = encoder.encode(np.asarray(x, dtype=np.float64))
    return g.data[0]


def select_prompt(query: np.ndarray, pool: PromptPool,
                  rng: Xoshiro256 | None = None) -> tuple[int, float]:
    """Pick an entry; returns (index, cosine of query with that entry's key).

    similarity: argmax cosine, lowest index on ties. random: uniform draw.
    fixed: always entry 0.
    """
    kd = pool.keys.data
    qn = np.linalg.norm(query)
    kn = np.linalg.norm(kd, axis=1)
    cos = (kd @ query) / np.maximum(qn * kn, heads.NORM_EPS)
    if pool.mode == "similarity":
        idx = int(np.argmax(cos))
    elif pool.mode == "random":
        if rng is None:
            raise ConfigError("random selection needs an rng")
        idx = rng.randrange(pool.size)
    else:
        idx = 0
    return idx, float(cos[idx])


def key_pull_loss(query: np.ndarray, pool: PromptPool, selected: int) -> Tensor:
    """1 - cos(query, key_selected); pulls only the selected key toward the
    query (the query is a constant, so nothing flows into the encoder)."""
    if not 0 <= selected < pool.size:
        raise ConfigError(f"selected index {selected} outside pool of {pool.size}")
    q = Tensor(np.asarray(query, dtype=np.float64)[None, :])
    key_row = ad.slice_rows(pool.keys, selected, selected + 1)
    cos = heads.cosine_scores(q, key_row, tau=1.0)
    return ad.tsum(ad.affine(cos, -1.0, 1.0))


def block_prompts_for(pool: PromptPool, chosen: list[int]) -> dict[int, list[tuple[Tensor, Tensor]]]:
    """Assemble the per-block, per-sample prompt table the encoder consumes."""
    batch = len(chosen)
    table: dict[int, list[tuple[Tensor, Tensor]]] = {}
    for i, pair in pool.shared.items():
        table[i] = [pair] * batch
    pooled_blocks = pool.entries[0].keys()
    for i in pooled_blocks:
        table[i] = [pool.entries[p][i] for p in chosen]
    return table


# ---------------------------------------------------------------------------
# selection forensics
# ---------------------------------------------------------------------------


@dataclass
class SelectionRecord:
    class_id: int
    task_id: int | None
    prompt_id: int
    cosine: float


@dataclass
class SelectionLog:
    records: list[SelectionRecord] = field(default_factory=list)

    def add(self, class_id: int, task_id: int | None, prompt_id: int,
            cosine: float) -> None:
        self.records.append(SelectionRecord(class_id, task_id, prompt_id, cosine))

    def __len__(self) -> int:
        return len(self.records)


def selection_histogram(log: SelectionLog, num_classes: int,
                        pool_size: int) -> np.ndarray:
    """Counts of (class, selected prompt) pairs, [C, P]."""
    counts = np.zeros((num_classes, pool_size), dtype=np.int64)
    for rec in log.records:
        counts[rec.class_id, rec.prompt_id] += 1
    return counts


def task_id_accuracy(log: SelectionLog,
                     task_of_prompt: dict[int, int]) -> dict[int, tuple[int, float]]:
    """Per class: (record count, fraction whose selected prompt maps to the
    record's true task). Classes without records are simply absent."""
    hits: dict[int, int] = {}
    totals: dict[int, int] = {}
    for rec in log.records:
        if rec.prompt_id not in task_of_prompt:
            raise ConfigError(f"prompt {rec.prompt_id} has no task assignment")
        totals[rec.class_id] = totals.get(rec.class_id, 0) + 1
        if rec.task_id is not None and task_of_prompt[rec.prompt_id] == rec.task_id:
            hits[rec.class_id] = hits.get(rec.class_id, 0) + 1
    return {c: (n, hits.get(c, 0) / n) for c, n in sorted(totals.items())}


def key_similarity_stats(log: SelectionLog) -> dict[int, tuple[float, float]]:
    """Per true task: mean and population std of the logged query/key cosines."""
    groups: dict[int, list[float]] = {}
    for rec in log.records:
        if rec.task_id is None:
            continue
        groups.setdefault(rec.task_id, []).append(rec.cosine)
    out = {}
    for task, vals in sorted(groups.items()):
        arr = np.asarray(vals)
        out[task] = (float(arr.mean()), float(arr.std()))
    return out
