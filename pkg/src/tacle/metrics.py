"""Class-incremental evaluation: cumulative accuracy and average incremental accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linear_core import LinearModel


@dataclass
class EvalRecord:
    task_id: int
    cumulative_accuracy: float
    num_test_samples: int
    per_class_accuracy: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "cumulative_accuracy": self.cumulative_accuracy,
            "num_test_samples": self.num_test_samples,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
        }


def cumulative_accuracy(model: LinearModel, test_sets, task_id: int | None = None) -> EvalRecord:
    """Top-1 accuracy of the full model over the union of ``test_sets``.

    ``test_sets`` is a sequence of ``(x, y)`` pairs for tasks 1..t, with
    global class labels. ``task_id`` defaults to ``len(test_sets)``.
    """
    test_sets = list(test_sets)
    xs = [np.asarray(x, dtype=float) for x, _ in test_sets if len(x)]
    ys = [np.asarray(y) for x, y in test_sets if len(x)]
    if not xs:
        raise ValueError("no test samples")
    x, y = np.concatenate(xs), np.concatenate(ys)
    correct = model.predict(x) == y
    per_class = {int(c): float(correct[y == c].mean()) for c in np.unique(y)}
    return EvalRecord(
        task_id=len(test_sets) if task_id is None else task_id,
        cumulative_accuracy=float(correct.mean()),
        num_test_samples=int(len(y)),
        per_class_accuracy=per_class,
    )


def average_incremental_accuracy(records) -> float:
    """Mean cumulative accuracy; records must cover tasks 1..T exactly once."""
    records = list(records)
    ids = sorted(r.task_id for r in records)
    if not ids or ids != list(range(1, len(ids) + 1)):
        raise ValueError(f"records must cover task ids 1..T exactly once, got {ids}")
    return float(np.mean([r.cumulative_accuracy for r in records]))
