"""Stage 2: classifier alignment from stored per-class Gaussian statistics.

After stage 1 the task's (optionally pseudo-label expanded) samples are
mapped to feature space, summarized as a mean and covariance per class, and
added to a ``StatsBank``. Alignment then retrains every head on features
drawn from the Gaussians of all classes seen so far. Raw samples of old
tasks are never needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .linear_core import LinearModel, SgdConfig, sgd_step, weighted_ce
from .stage1 import current_task_probs
from .streams import TaskData
from .threshold import confident_mask


@dataclass
class ClassStats:
    class_id: int
    mu: np.ndarray
    sigma: np.ndarray
    support: int

    def to_dict(self) -> dict:
        return {
            "class_id": int(self.class_id),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.reshape(-1).tolist(),
            "support": int(self.support),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassStats":
        mu = np.asarray(d["mu"], dtype=float)
        sigma = np.asarray(d["sigma"], dtype=float).reshape(len(mu), len(mu))
        return cls(int(d["class_id"]), mu, sigma, int(d["support"]))


class StatsBank:
    """Per-class statistics for every class seen so far.

    Entries are write-once: a class already in the bank cannot be replaced,
    which keeps old-task statistics verbatim across later tasks.
    """

    def __init__(self, stats=()):
        self._stats: dict[int, ClassStats] = {}
        self.add(stats)

    def add(self, stats) -> None:
        for s in stats:
            if s.class_id in self._stats:
                raise ValueError(f"class {s.class_id} is already in the bank")
            self._stats[s.class_id] = s

    def __len__(self):
        return len(self._stats)

    def __contains__(self, class_id):
        return class_id in self._stats

    def __getitem__(self, class_id) -> ClassStats:
        return self._stats[class_id]

    def classes(self) -> list[int]:
        return list(self._stats)

    def values(self):
        return self._stats.values()

    def to_json(self) -> str:
        return json.dumps({"classes": [s.to_dict() for s in self._stats.values()]})

    @classmethod
    def from_json(cls, text: str) -> "StatsBank":
        return cls(ClassStats.from_dict(d) for d in json.loads(text)["classes"])


@dataclass(frozen=True)
class Stage2Config:
    epochs: int = 5
    samples_per_class_per_epoch: int = 256
    batch_size: int = 64
    cov_regularizer: float = 1e-4
    diagonal: bool = False
    sgd: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.samples_per_class_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("samples_per_class_per_epoch and batch_size must be >= 1")
        if self.cov_regularizer < 0:
            raise ValueError("cov_regularizer must be >= 0")


def expand_label_set(task: TaskData, model: LinearModel, thr: float) -> tuple[np.ndarray, np.ndarray]:
    """Labeled samples plus confident unlabeled ones with their pseudo-labels.

    Confidence is the newest head's softmax (current-task classes only).
    Returns ``(x, global class ids)`` in input space.
    """
    x, y = task.labeled_x, task.labeled_y
    if len(task.unlabeled_x) == 0:
        return x, y
    mask, local = confident_mask(current_task_probs(model, task.unlabeled_x), thr)
    pseudo = np.asarray(task.class_set)[local[mask]]
    return np.concatenate([x, task.unlabeled_x[mask]]), np.concatenate([y, pseudo]).astype(int)


def estimate_stats(features, labels, class_set, cov_regularizer: float = 1e-4, diagonal: bool = False) -> list[ClassStats]:
    """Mean and unbiased covariance (+ ``cov_regularizer * I``) for each class.

    A class with a single sample gets a zero covariance before regularization.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    out = []
    for c in class_set:
        xc = features[labels == c]
        n = len(xc)
        if n == 0:
            raise ValueError(f"class {c} has no samples to estimate statistics from")
        mu = xc.mean(axis=0)
        d = features.shape[1]
        if n >= 2:
            centered = xc - mu
            sigma = centered.T @ centered / (n - 1)
            sigma = 0.5 * (sigma + sigma.T)
        else:
            sigma = np.zeros((d, d))
        if diagonal:
            sigma = np.diag(np.diag(sigma))
        sigma = sigma + cov_regularizer * np.eye(d)
        out.append(ClassStats(int(c), mu, sigma, n))
    return out


def psd_factor(sigma, tol: float = 1e-10) -> np.ndarray:
    """``L`` with ``L @ L.T == sigma`` via eigendecomposition, negative eigenvalues clamped to 0."""
    sigma = np.asarray(sigma, dtype=float)
    scale = max(1.0, float(np.max(np.abs(sigma))))
    if not np.allclose(sigma, sigma.T, rtol=0, atol=tol * scale):
        raise ValueError("covariance matrix is not symmetric")
    vals, vecs = np.linalg.eigh(sigma)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_gaussian(stats: ClassStats, n: int, rng: np.random.Generator, factor: np.ndarray | None = None) -> np.ndarray:
    """``n`` draws of ``mu + L eps``; ``factor`` lets callers reuse a cached ``L``."""
    L = psd_factor(stats.sigma) if factor is None else factor
    eps = rng.standard_normal((n, len(stats.mu)))
    return stats.mu + eps @ L.T


def align_classifiers(model: LinearModel, bank: StatsBank, cfg: Stage2Config, rng: np.random.Generator) -> LinearModel:
    """Retrain all heads (in place) on class-balanced draws from ``bank``.

    Each epoch draws ``samples_per_class_per_epoch`` features for every
    class, shuffles them, and takes one momentum-SGD step per minibatch on
    the full-softmax cross-entropy. The feature layer is left untouched.
    """
    if len(bank) == 0:
        raise ValueError("statistics bank is empty")
    order = model.class_order()
    pos = {c: i for i, c in enumerate(order)}
    missing = [c for c in bank.classes() if c not in pos]
    if missing:
        raise ValueError(f"bank classes without a classifier head: {missing}")
    stats = [bank[c] for c in sorted(bank.classes(), key=pos.__getitem__)]
    factors = [psd_factor(s.sigma) for s in stats]
    m = cfg.samples_per_class_per_epoch
    targets = np.repeat([pos[s.class_id] for s in stats], m)
    heads = list(range(len(model.heads)))
    velocity: dict = {}

    for _ in range(cfg.epochs):
        z = np.concatenate([sample_gaussian(s, m, rng, L) for s, L in zip(stats, factors)])
        perm = rng.permutation(len(z))
        for start in range(0, len(z), cfg.batch_size):
            b = perm[start : start + cfg.batch_size]
            _, grads = weighted_ce(
                model, z[b], targets[b], np.full(len(b), 1.0 / len(b)), heads, features_in=True
            )
            sgd_step(model.parameters(), grads, velocity, cfg.sgd)
    return model
