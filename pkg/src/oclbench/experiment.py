"""Experiment driver: execute every seed, write the CSV artifacts.

All floats are serialized with repr(), the shortest decimal that round
trips, and CSVs always carry a header row, so identical configs produce
byte-identical artifacts. Seeds are independent; OCLBENCH_THREADS > 1
runs them in a thread pool (each seed writes only its own files, and the
aggregate is written after every seed has finished).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import ExperimentConfig
from .metrics import aggregate_seeds
from .pool import key_similarity_stats, selection_histogram, task_id_accuracy
from .trainer import RunResult, run_stream

METRIC_ORDER = ("a_auc", "a_last", "f_last")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def seed_parallelism() -> int:
    raw = os.environ.get("OCLBENCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _write_seed_artifacts(cfg: ExperimentConfig, result: RunResult,
                          seed_dir: Path) -> None:
    seed_dir.mkdir(parents=True, exist_ok=True)
    write_csv(seed_dir / "metrics.csv", ["seed", "metric", "value"],
              [(result.seed, name, result.metrics[name])
               for name in METRIC_ORDER if name in result.metrics])
    write_csv(seed_dir / "anytime.csv", ["samples_seen", "accuracy"],
              result.anytime)
    write_csv(seed_dir / "scenario.csv",
              ["sample_id", "class_id", "kind", "home_task", "final_task"],
              result.scenario_rows)
    if cfg.log_norms:
        write_csv(seed_dir / "norms.csv",
                  ["step", "class_id", "first_seen_step", "norm"],
                  result.norm_rows)
    if cfg.adapter == "pool":
        hist = selection_histogram(result.selection_log, cfg.classes, cfg.pool_size)
        write_csv(seed_dir / "selection_histogram.csv",
                  ["class_id", "prompt_id", "count"],
                  [(c, p, int(hist[c, p]))
                   for c in range(cfg.classes) for p in range(cfg.pool_size)])
        stats = key_similarity_stats(result.selection_log)
        write_csv(seed_dir / "key_stats.csv", ["task_id", "mean_cos", "std_cos"],
                  [(t, m, s) for t, (m, s) in stats.items()])
        if cfg.pool_size == cfg.tasks:
            # prompt i <-> task i is only meaningful when the counts line up
            acc = task_id_accuracy(result.selection_log,
                                   {p: p for p in range(cfg.pool_size)})
            write_csv(seed_dir / "selection_accuracy.csv",
                      ["class_id", "n", "accuracy"],
                      [(c, n, a) for c, (n, a) in acc.items()])


class SeedFailures(RuntimeError):
    """One or more seeds failed; the message lists every one."""


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict[int, RunResult]:
    """Run every configured seed and emit all artifacts under out_dir.

    Seeds that fail are reported together (and fail the experiment) after
    every other seed has had its chance to finish.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(seed: int) -> tuple[int, RunResult | Exception]:
        try:
            result = run_stream(cfg, seed)
            _write_seed_artifacts(cfg, result, out / f"seed_{seed}")
            return seed, result
        except Exception as err:  # reported per seed below
            return seed, err

    workers = min(seed_parallelism(), len(cfg.seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = dict(pool.map(one, cfg.seeds))
    else:
        outcomes = dict(one(s) for s in cfg.seeds)

    failures = {s: r for s, r in outcomes.items() if isinstance(r, Exception)}
    if failures:
        lines = "; ".join(f"seed {s}: {err}" for s, err in sorted(failures.items()))
        raise SeedFailures(lines)
    results: dict[int, RunResult] = outcomes

    agg_rows = []
    for name in METRIC_ORDER:
        values = [results[s].metrics[name] for s in cfg.seeds
                  if name in results[s].metrics]
        if values:
            mean, std = aggregate_seeds(values)
            agg_rows.append((name, mean, std))
    write_csv(out / "aggregate.csv", ["metric", "mean", "std"], agg_rows)
    return results


def dump_scenario(cfg: ExperimentConfig, out_dir) -> list[Path]:
    """Write the scenario table for each seed without training anything."""
    # import here to avoid dragging trainer internals into light-weight use
    from .rng import derive_seed
    from .stream import SiBlurryConfig, si_blurry_split
    from .trainer import build_dataset, holdout_split

    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    test_idx, train_idx = holdout_split(dataset, cfg.test_fraction,
                                        derive_seed(cfg.data_seed, "holdout"))
    train = dataset.subset(train_idx)
    paths = []
    for seed in cfg.seeds:
        sb = SiBlurryConfig(cfg.classes, cfg.tasks, cfg.disjoint_ratio,
                            cfg.blurry_ratio, cfg.batch_size,
                            derive_seed(seed, "scenario"))
        assignment = si_blurry_split(sb, train.labels)
        rows = [(int(train_idx[i]), int(train.labels[i]),
                 assignment.kind[train.labels[i]],
                 assignment.home_task[train.labels[i]],
                 int(assignment.final_task[i]))
                for i in range(len(train))]
        path = out / f"scenario_seed{seed}.csv"
        write_csv(path, ["sample_id", "class_id", "kind", "home_task", "final_task"], rows)
        paths.append(path)
    return paths
