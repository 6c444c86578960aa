"""The online training loop: one pass over the stream, one Adam step per
minibatch, optional replay, and periodic held-out evaluation.

Per batch: (maybe) draw a replay batch and concatenate it behind the
stream samples, encode with the active adapter, score with the active
head, mask the logits down to the labels present in the combined batch,
take the masked cross-entropy (plus the key pull term in similarity-pool
mode), backprop, step Adam over the adapter and head, then insert the
stream samples into the buffer so nothing replays into its own step.
Evaluation never touches the training RNG streams and applies no mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import heads, pool as pool_mod
from .autodiff import Tensor
from .config import ExperimentConfig
from .encoder import Encoder, InputPrompt, PromptSet, params_from_arrays
from .errors import ConfigError
from .heads import CosineHead, LinearHead
from .metrics import AccuracyMatrix, AucRecorder, a_auc, a_last, f_last
from .pool import PromptPool, SelectionLog
from .rng import Xoshiro256, derive_seed
from .stream import (Dataset, MemoryBuffer, Minibatch, SiBlurryConfig,
                     load_idx_dataset, si_blurry_split, stream_batches,
                     synth_dataset)
from .weights import load_weights


class Adam:
    """Bias-corrected Adam. Parameters whose grad is None are skipped
    entirely (no moment decay, no step count), so parameters disconnected
    from the loss stay bit-identical."""

    def __init__(self, params: list[Tensor], lr: float = 0.005,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._state: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for slot, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(
                    f"grad shape {list(g.shape)} vs param shape {list(p.data.shape)}")
            m, v, t = self._state.get(slot, (np.zeros_like(p.data),
                                             np.zeros_like(p.data), 0))
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self._state[slot] = (m, v, t)


@dataclass
class TrainRun:
    """Everything one seeded run mutates, bundled."""
    encoder: Encoder
    head: CosineHead | LinearHead
    adapter_mode: str                     # 'prefix' | 'input' | 'pool'
    optimizer: Adam
    num_classes: int
    masking: bool = True
    prompt_set: PromptSet | None = None
    input_prompt: InputPrompt | None = None
    pool: PromptPool | None = None
    buffer: MemoryBuffer | None = None
    replay_size: int = 0                  # samples drawn per step when buffering
    selection_rng: Xoshiro256 | None = None
    buffer_rng: Xoshiro256 | None = None
    selection_log: SelectionLog = field(default_factory=SelectionLog)
    # queries are a pure function of the frozen encoder and the input, so
    # pool mode memoizes them (evaluation revisits the same samples)
    query_cache: dict[bytes, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        active = [m for m, a in (("prefix", self.prompt_set),
                                 ("input", self.input_prompt),
                                 ("pool", self.pool)) if a is not None]
        if len(active) != 1 or active[0] != self.adapter_mode:
            raise ConfigError(
                f"exactly one adapter must be active and match mode '{self.adapter_mode}'")

    def learnables(self) -> list[Tensor]:
        adapter = self.prompt_set or self.input_prompt or self.pool
        return adapter.learnables() + self.head.learnables()


def _encode_plain(run: TrainRun, inputs: np.ndarray) -> Tensor:
    """Features for the single-adapter modes; pool mode has its own path."""
    if run.adapter_mode == "prefix":
        return run.encoder.encode(inputs, prompt_set=run.prompt_set)
    if run.adapter_mode == "input":
        return run.encoder.encode(inputs, input_prompt=run.input_prompt)
    raise ConfigError(f"unexpected adapter mode '{run.adapter_mode}'")


def train_on_batch(run: TrainRun, batch: Minibatch) -> float:
    """One gradient step; returns the scalar loss value."""
    if len(batch) == 0:
        raise ValueError("train_on_batch needs a nonempty batch")
    inputs, labels = batch.inputs, batch.labels
    tasks: list[int | None] = [batch.task_id] * len(batch)
    if run.buffer is not None and run.buffer.size > 0 and run.replay_size > 0:
        k = min(run.replay_size, run.buffer.size)
        replay = run.buffer.sample(k, run.buffer_rng)
        inputs = np.concatenate([inputs, replay.inputs], axis=0)
        labels = np.concatenate([labels, replay.labels])
        tasks = tasks + [None] * k

    pulls: list[Tensor] = []
    if run.adapter_mode == "pool":
        g, pulls = _encode_pool(run, inputs, labels, tasks, run.selection_rng, log=True)
    else:
        g = _encode_plain(run, inputs)
    logits = heads.logits_for(g, run.head)
    mask = (heads.make_mask(labels, run.num_classes) if run.masking
            else heads.all_classes_mask(run.num_classes))
    loss = heads.masked_ce_loss(logits, mask, labels)
    if pulls:
        total = pulls[0]
        for p in pulls[1:]:
            total = ad.add(total, p)
        loss = ad.add(loss, ad.affine(total, run.pool.pull_weight / len(pulls)))

    run.optimizer.zero_grad()
    ad.backward(loss)
    run.optimizer.step()

    if run.buffer is not None:
        for x, y, src in zip(batch.inputs, batch.labels, batch.sources):
            if src == "stream":
                run.buffer.insert(x, y, run.buffer_rng)
    return loss.item()


def _query_cached(run: TrainRun, x: np.ndarray) -> np.ndarray:
    key = np.ascontiguousarray(x).tobytes()
    q = run.query_cache.get(key)
    if q is None:
        q = pool_mod.query_of(run.encoder, x)
        run.query_cache[key] = q
    return q


def _encode_pool(run: TrainRun, inputs: np.ndarray, labels: np.ndarray,
                 tasks: list[int | None], rng: Xoshiro256 | None,
                 log: bool) -> tuple[Tensor, list[Tensor]]:
    """Pool-mode encode: per-sample query, selection (logged), prefix table."""
    pool = run.pool
    chosen, pulls = [], []
    for s in range(inputs.shape[0]):
        q = _query_cached(run, inputs[s])
        idx, cos = pool_mod.select_prompt(q, pool, rng)
        chosen.append(idx)
        if log:
            run.selection_log.add(int(labels[s]), tasks[s], idx, cos)
        if pool.mode == "similarity" and pool.pull_weight > 0:
            pulls.append(pool_mod.key_pull_loss(q, pool, idx))
    table = pool_mod.block_prompts_for(pool, chosen)
    return run.encoder.encode_with_block_prompts(inputs, table), pulls


def evaluate(run: TrainRun, inputs: np.ndarray, labels: np.ndarray,
             rng: Xoshiro256 | None = None, chunk: int = 32) -> float:
    """Unmasked accuracy on the given samples; mutates nothing."""
    if len(labels) == 0:
        return 0.0
    correct = 0
    for start in range(0, len(labels), chunk):
        xs = inputs[start:start + chunk]
        with ad.no_grad():
            if run.adapter_mode == "pool":
                g, _ = _encode_pool(run, xs, labels[start:start + chunk],
                                    [None] * len(xs), rng, log=False)
            else:
                g = _encode_plain(run, xs)
        preds = heads.predict(g, run.head)
        correct += int(np.sum(preds == labels[start:start + chunk]))
    return correct / len(labels)


# ---------------------------------------------------------------------------
# full stream run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    metrics: dict[str, float]
    anytime: list[tuple[int, float]]
    matrix: AccuracyMatrix | None
    scenario_rows: list[tuple[int, int, str, int, int]]
    selection_log: SelectionLog
    norm_rows: list[tuple[int, int, int, float]]
    losses: list[float]
    run: TrainRun


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "idx":
        ds = load_idx_dataset(cfg.idx_images, cfg.idx_labels)
        feat = (cfg.tokens - 1) * cfg.chunk_dim
        if ds.inputs.shape[1] != feat:
            raise ConfigError(
                f"IDX feature dim {ds.inputs.shape[1]} != (tokens-1)*chunk_dim = {feat}")
        return Dataset(ds.inputs, ds.labels, cfg.classes)
    return synth_dataset(cfg.classes, cfg.samples_per_class,
                         (cfg.tokens - 1) * cfg.chunk_dim,
                         cfg.cluster_spread, cfg.data_seed,
                         cfg.cluster_separation)


def holdout_split(dataset: Dataset, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class held-out indices (test, train); fixed by the data seed."""
    rng = Xoshiro256(seed)
    test, train = [], []
    for c in range(dataset.num_classes):
        ids = [int(i) for i in np.flatnonzero(dataset.labels == c)]
        rng.shuffle(ids)
        cut = int(fraction * len(ids) + 1e-9)
        test.extend(ids[:cut])
        train.extend(ids[cut:])
    return np.array(sorted(test), dtype=np.int64), np.array(sorted(train), dtype=np.int64)


def build_run(cfg: ExperimentConfig, seed: int) -> TrainRun:
    """Assemble encoder, adapter, head, buffer, and optimizer for one seed."""
    enc_cfg = cfg.encoder_config()
    if cfg.weights_file:
        encoder = Encoder(enc_cfg, params_from_arrays(enc_cfg,
                                                      load_weights(cfg.weights_file)))
    else:
        encoder = Encoder(enc_cfg)

    if cfg.head == "cosine":
        head: CosineHead | LinearHead = CosineHead.init(
            cfg.classes, enc_cfg.hidden_dim, derive_seed(seed, "head"), cfg.tau)
    else:
        head = LinearHead.init(cfg.classes, enc_cfg.hidden_dim)

    prompt_set = input_prompt = pool = None
    if cfg.adapter == "prefix":
        prompt_set = PromptSet.init(enc_cfg, cfg.prefix_blocks, cfg.prompt_len,
                                    derive_seed(seed, "adapter"))
    elif cfg.adapter == "input":
        input_prompt = InputPrompt.init(enc_cfg, cfg.prompt_len,
                                        derive_seed(seed, "adapter"))
    elif cfg.adapter == "pool":
        pool = PromptPool.init(enc_cfg, cfg.pool_size, cfg.prompt_len,
                               cfg.pool_shared_blocks, cfg.pool_pooled_blocks,
                               cfg.selection, derive_seed(seed, "adapter"),
                               cfg.pull_weight)
    else:
        raise ConfigError(f"unknown adapter '{cfg.adapter}'")

    buffer = MemoryBuffer(cfg.buffer_capacity) if cfg.buffer_capacity > 0 else None
    run = TrainRun(
        encoder=encoder, head=head, adapter_mode=cfg.adapter,
        optimizer=Adam([], lr=cfg.lr), num_classes=cfg.classes,
        masking=cfg.masking, prompt_set=prompt_set, input_prompt=input_prompt,
        pool=pool, buffer=buffer, replay_size=cfg.batch_size if buffer else 0,
        selection_rng=Xoshiro256(derive_seed(seed, "selection")),
        buffer_rng=Xoshiro256(derive_seed(seed, "buffer")),
    )
    run.optimizer = Adam(run.learnables(), lr=cfg.lr)
    return run


def run_stream(cfg: ExperimentConfig, seed: int) -> RunResult:
    """One full seeded pass over the Si-Blurry stream with metric capture."""
    cfg.validate()
    dataset = build_dataset(cfg)
    test_idx, train_idx = holdout_split(dataset, cfg.test_fraction,
                                        derive_seed(cfg.data_seed, "holdout"))
    test, train = dataset.subset(test_idx), dataset.subset(train_idx)
    sb = SiBlurryConfig(cfg.classes, cfg.tasks, cfg.disjoint_ratio,
                        cfg.blurry_ratio, cfg.batch_size,
                        derive_seed(seed, "scenario"))
    assignment = si_blurry_split(sb, train.labels)
    batches = stream_batches(assignment, train, cfg.batch_size,
                             derive_seed(seed, "stream"))
    run = build_run(cfg, seed)

    scenario_rows = [
        (int(train_idx[i]), int(train.labels[i]), assignment.kind[train.labels[i]],
         assignment.home_task[train.labels[i]], int(assignment.final_task[i]))
        for i in range(len(train))
    ]

    by_task: dict[int, list[Minibatch]] = {t: [] for t in range(cfg.tasks)}
    for b in batches:
        by_task[b.task_id].append(b)

    matrix = AccuracyMatrix(cfg.tasks)
    recorder = AucRecorder(cfg.eval_interval)
    anytime: list[tuple[int, float]] = []
    norm_rows: list[tuple[int, int, int, float]] = []
    losses: list[float] = []
    first_seen: dict[int, int] = {}
    samples_seen = 0
    evals_done = 0
    eval_counter = 0

    def eval_rng() -> Xoshiro256:
        nonlocal eval_counter
        eval_counter += 1
        return Xoshiro256(derive_seed(seed, f"eval{eval_counter}"))

    def snapshot_norms() -> None:
        order = sorted(range(cfg.classes),
                       key=lambda c: (first_seen.get(c, np.inf), c))
        norms = heads.prototype_norms(run.head)
        for c in order:
            norm_rows.append((samples_seen, c, first_seen.get(c, -1),
                              float(norms[c])))

    def checkpoint() -> None:
        seen = sorted(first_seen)
        pick = np.isin(test.labels, seen)
        acc = evaluate(run, test.inputs[pick], test.labels[pick], eval_rng())
        recorder.record(samples_seen, acc)
        anytime.append((samples_seen, acc))
        if cfg.log_norms:
            snapshot_norms()

    total_streamed = len(train)
    for task in range(cfg.tasks):
        for batch in by_task[task]:
            for y in batch.labels:
                first_seen.setdefault(int(y), samples_seen + 1)
            losses.append(train_on_batch(run, batch))
            samples_seen += len(batch)
            while evals_done < samples_seen // cfg.eval_interval:
                evals_done += 1
                checkpoint()
        # end-of-task row: accuracy per earlier task's home classes
        for i in range(task + 1):
            classes_i = assignment.task_classes(i)
            pick = np.isin(test.labels, classes_i)
            matrix.set(task, i, evaluate(run, test.inputs[pick],
                                         test.labels[pick], eval_rng()))

    metrics: dict[str, float] = {}
    if total_streamed > 0:
        metrics["a_last"] = a_last(matrix)
        metrics["f_last"] = f_last(matrix)
        if len(recorder) > 0:
            metrics["a_auc"] = a_auc(recorder)
    if cfg.log_norms:
        snapshot_norms()
    return RunResult(seed=seed, metrics=metrics, anytime=anytime,
                     matrix=matrix if total_streamed else None,
                     scenario_rows=scenario_rows, selection_log=run.selection_log,
                     norm_rows=norm_rows, losses=losses, run=run)
