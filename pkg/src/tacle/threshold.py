"""Confidence gating: task-adaptive and fixed thresholds, and the ACS diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linear_core import LinearModel, softmax


@dataclass(frozen=True)
class ThresholdSchedule:
    """Either ``alpha/(1+exp(alpha*t)) + beta`` (adaptive) or a constant ``gamma`` (fixed).

    A fixed ``gamma`` of exactly 1.0 is accepted and disables pseudo-labeling,
    since the gate is strict (``max p > gamma``).
    """

    kind: str = "adaptive"
    alpha: float = 0.5
    beta: float = 0.65
    gamma: float = 0.95

    def __post_init__(self):
        if self.kind == "adaptive":
            if not self.alpha > 0:
                raise ValueError(f"alpha must be > 0, got {self.alpha}")
            if not 0 < self.beta < 1:
                raise ValueError(f"beta must be in (0, 1), got {self.beta}")
            if not self.beta + self.alpha / (1 + math.exp(self.alpha)) < 1:
                raise ValueError("alpha/(1+e^alpha) + beta must be < 1")
        elif self.kind == "fixed":
            if not 0 < self.gamma <= 1:
                raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        else:
            raise ValueError(f"unknown threshold kind {self.kind!r}")

    @classmethod
    def adaptive(cls, alpha: float = 0.5, beta: float = 0.65) -> "ThresholdSchedule":
        return cls("adaptive", alpha=alpha, beta=beta)

    @classmethod
    def fixed(cls, gamma: float = 0.95) -> "ThresholdSchedule":
        return cls("fixed", gamma=gamma)


def threshold_at(sched: ThresholdSchedule, t: int) -> float:
    """Threshold for 1-based task index ``t``."""
    if t < 1:
        raise ValueError(f"task index is 1-based, got {t}")
    if sched.kind == "fixed":
        return sched.gamma
    a = sched.alpha
    # exp overflows past ~709; the term is 0 to double precision long before that
    at = a * t
    term = a / (1.0 + math.exp(at)) if at < 700 else 0.0
    return term + sched.beta


def confident_mask(probs, thr: float) -> tuple[np.ndarray, np.ndarray]:
    """``(max p > thr, argmax p)`` per row; ties go to the lowest index."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.argmax(probs, axis=1)
    return probs.max(axis=1) > thr, labels


def average_confidence_score(model: LinearModel, unlabeled_x, current_task_only: bool = False) -> float:
    """Mean max softmax probability over ``unlabeled_x``.

    Uses every registered head by default; ``current_task_only`` restricts
    the softmax to the newest head.
    """
    x = np.asarray(unlabeled_x, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("average confidence score needs a non-empty sample set")
    heads = [len(model.heads) - 1] if current_task_only else None
    p = softmax(model.logits(x, heads))
    return float(p.max(axis=1).mean())
