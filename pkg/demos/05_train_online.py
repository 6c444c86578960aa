"""A full online run at small scale: single prefix prompt, cosine head,
minibatch masking, anytime evaluation, and the three stream metrics.

Takes roughly half a minute.
"""

import time

from oclbench.config import ExperimentConfig
from oclbench.trainer import run_stream

cfg = ExperimentConfig(samples_per_class=800, eval_interval=400,
                       test_fraction=0.05, seeds=(1,))
cfg.validate()

start = time.time()
result = run_stream(cfg, seed=1)
print(f"trained on the stream in {time.time() - start:.1f}s; "
      f"{len(result.losses)} gradient steps")

print("\nanytime accuracy over classes seen so far:")
for samples_seen, acc in result.anytime:
    bar = "#" * int(40 * acc)
    print(f"  {samples_seen:5d} samples  {acc:5.3f} {bar}")

print("\naccuracy matrix (row: after task, col: on task):")
for t in range(cfg.tasks):
    row = "  ".join(f"{result.matrix.get(t, i):.2f}" for i in range(t + 1))
    print(f"  after task {t}: {row}")

print("\nmetrics:", {k: round(v, 4) for k, v in result.metrics.items()})
