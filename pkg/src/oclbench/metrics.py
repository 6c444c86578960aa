"""Stream-evaluation metrics: final accuracy, forgetting, anytime accuracy.

a[t][i] is the accuracy on task i's test classes after training through
task t (defined for t >= i). The final metric is the mean of the last
row; forgetting averages, over each earlier task, the largest historical
drop relative to the final row (negative values are kept, not clamped).
Anytime accuracy is the mean of periodic checkpoints taken every n
training samples over the classes seen so far. All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class AccuracyMatrix:
    """Lower-triangular accuracy table over T tasks."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ValueError("need at least one task")
        self.num_tasks = num_tasks
        self._cells: dict[tuple[int, int], float] = {}

    def set(self, after_task: int, on_task: int, acc: float) -> None:
        if not 0 <= on_task <= after_task < self.num_tasks:
            raise ValueError(f"cell ({after_task}, {on_task}) outside lower triangle")
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        self._cells[(after_task, on_task)] = acc

    def get(self, after_task: int, on_task: int) -> float:
        return self._cells[(after_task, on_task)]

    def row_complete(self, after_task: int) -> bool:
        return all((after_task, i) in self._cells for i in range(after_task + 1))


def a_last(matrix: AccuracyMatrix) -> float:
    """Mean of the final row."""
    t = matrix.num_tasks - 1
    if not matrix.row_complete(t):
        raise ValueError("final row of the accuracy matrix is incomplete")
    return sum(matrix.get(t, i) for i in range(matrix.num_tasks)) / matrix.num_tasks


def f_last(matrix: AccuracyMatrix) -> float:
    """Mean over earlier tasks of max_j (a[j][i] - a[T-1][i]), j < T-1.

    For a single task there is nothing to forget: defined as 0.
    """
    t_final = matrix.num_tasks - 1
    if t_final == 0:
        return 0.0
    if not matrix.row_complete(t_final):
        raise ValueError("final row of the accuracy matrix is incomplete")
    total = 0.0
    for i in range(t_final):
        drops = [matrix.get(j, i) - matrix.get(t_final, i)
                 for j in range(i, t_final)]
        total += max(drops)
    return total / t_final


@dataclass
class AucRecorder:
    """Checkpoint accuracies taken every `interval` training samples."""
    interval: int
    checkpoints: list[tuple[int, float]] = field(default_factory=list)

    def record(self, samples_seen: int, acc: float) -> None:
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        self.checkpoints.append((samples_seen, acc))

    def __len__(self) -> int:
        return len(self.checkpoints)


def a_auc(recorder: AucRecorder) -> float:
    """Mean checkpoint accuracy over the stream."""
    if len(recorder) == 0:
        raise ValueError("no checkpoints recorded")
    return sum(acc for _, acc in recorder.checkpoints) / len(recorder)


def aggregate_seeds(values: list[float]) -> tuple[float, float]:
    """Mean and population standard deviation across per-seed results."""
    if not values:
        raise ValueError("no values to aggregate")
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)
