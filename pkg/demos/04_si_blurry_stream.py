"""What a Si-Blurry stream looks like: disjoint classes stay in their home
task, blurry-class samples leak across task boundaries."""

import numpy as np

from oclbench.stream import (MemoryBuffer, SiBlurryConfig, si_blurry_split,
                             stream_batches, synth_dataset)
from oclbench.rng import Xoshiro256

C, T = 10, 5
ds = synth_dataset(C, per_class=60, feature_dim=16, spread=0.8, seed=7)
cfg = SiBlurryConfig(num_classes=C, tasks=T, disjoint_ratio=0.5,
                     blurry_ratio=0.1, batch_size=32, seed=42)
assignment = si_blurry_split(cfg, ds.labels)

print("class kinds:", {c: assignment.kind[c] for c in range(C)})
print("home tasks: ", {c: assignment.home_task[c] for c in range(C)})
print(f"samples drawn for cross-task reassignment: {assignment.reassigned}")

print("\nper-task class occupancy (rows: task, cols: class, cell: samples):")
table = np.zeros((T, C), dtype=int)
for i, c in enumerate(ds.labels):
    table[assignment.final_task[i], c] += 1
header = "      " + " ".join(f"c{c:<3d}" for c in range(C))
print(header)
for t in range(T):
    marks = " ".join(f"{table[t, c]:<4d}" for c in range(C))
    print(f"task{t} {marks}")

batches = stream_batches(assignment, ds, cfg.batch_size, seed=5)
print(f"\n{len(batches)} minibatches; every sample exactly once:",
      sorted(np.concatenate([b.sample_ids for b in batches]).tolist()) == list(range(len(ds))))

# reservoir replay buffer on top of the stream
buf = MemoryBuffer(capacity=20)
rng = Xoshiro256(3)
for batch in batches:
    for x, y in zip(batch.inputs, batch.labels):
        buf.insert(x, y, rng)
print(f"buffer after the stream: {buf.size}/{buf.capacity} slots, "
      f"label mix {sorted(set(y for _, y in buf.items))}")
replay = buf.sample(8, Xoshiro256(9))
print("replay draw labels:", replay.labels.tolist(), "tagged:", replay.sources[0])
