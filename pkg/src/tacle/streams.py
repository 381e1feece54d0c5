"""Synthetic class-incremental task streams in feature space.

Every class is an isotropic Gaussian cluster. Tasks own disjoint blocks of
consecutive class ids. Unlabeled samples keep their true class for
diagnostics only; trainers read ``TaskData.unlabeled_x`` and nothing else.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class StreamConfig:
    num_tasks: int = 5
    classes_per_task: int = 4
    samples_per_class: int = 200
    supervision_fraction: float | None = 0.02
    labeled_per_class: int | None = None
    feature_dim: int = 16
    cluster_spread: float = 1.0
    cluster_separation: float = 4.0
    imbalance_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_tasks < 1 or self.classes_per_task < 1 or self.samples_per_class < 1:
            raise ValueError("num_tasks, classes_per_task and samples_per_class must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if (self.supervision_fraction is None) == (self.labeled_per_class is None):
            raise ValueError("set exactly one of supervision_fraction and labeled_per_class")
        if self.supervision_fraction is not None and not 0 < self.supervision_fraction <= 1:
            raise ValueError(f"supervision_fraction must be in (0, 1], got {self.supervision_fraction}")
        if self.labeled_per_class is not None:
            if self.labeled_per_class < 1:
                raise ValueError("labeled_per_class must be >= 1")
            if self.labeled_per_class > self.samples_per_class:
                raise ValueError(
                    f"labeled_per_class={self.labeled_per_class} exceeds "
                    f"samples_per_class={self.samples_per_class}"
                )
        if not self.cluster_spread > 0 or not self.cluster_separation > 0:
            raise ValueError("cluster_spread and cluster_separation must be > 0")
        if not 0 < self.imbalance_ratio <= 1:
            raise ValueError(f"imbalance_ratio must be in (0, 1], got {self.imbalance_ratio}")

    @property
    def num_classes(self) -> int:
        return self.num_tasks * self.classes_per_task

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    true_class: int
    task_id: int


@dataclass
class TaskData:
    """One task. Labels are global class ids; ``class_set`` fixes their order."""

    task_id: int
    class_set: list[int]
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_y: np.ndarray = field(repr=False)  # hidden, diagnostics only

    def local(self, y) -> np.ndarray:
        """Global class ids -> positions within ``class_set``."""
        lookup = {c: i for i, c in enumerate(self.class_set)}
        return np.array([lookup[int(c)] for c in np.atleast_1d(y)], dtype=int)

    @property
    def labeled(self) -> list[Sample]:
        return [Sample(x, int(y), self.task_id) for x, y in zip(self.labeled_x, self.labeled_y)]

    @property
    def unlabeled(self) -> list[Sample]:
        return [Sample(x, int(y), self.task_id) for x, y in zip(self.unlabeled_x, self.unlabeled_y)]

    def __eq__(self, other):
        if not isinstance(other, TaskData):
            return NotImplemented
        return (
            self.task_id == other.task_id
            and self.class_set == other.class_set
            and np.array_equal(self.labeled_x, other.labeled_x)
            and np.array_equal(self.labeled_y, other.labeled_y)
            and np.array_equal(self.unlabeled_x, other.unlabeled_x)
            and np.array_equal(self.unlabeled_y, other.unlabeled_y)
        )


@dataclass
class TaskStream:
    tasks: list[TaskData]
    class_means: np.ndarray | None = None  # (num_classes, d) for generated streams
    cluster_spread: float | None = None

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> TaskData:
        return self.tasks[i]

    @property
    def feature_dim(self) -> int:
        t = self.tasks[0]
        return (t.labeled_x if len(t.labeled_x) else t.unlabeled_x).shape[1]

    def __eq__(self, other):
        if not isinstance(other, TaskStream):
            return NotImplemented
        return self.tasks == other.tasks


def imbalance_counts(n_max: int, n_classes: int, ratio: float) -> np.ndarray:
    """Per-class counts decaying geometrically from ``n_max`` to ``ratio*n_max``."""
    if not 0 < ratio <= 1:
        raise ValueError(f"imbalance ratio must be in (0, 1], got {ratio}")
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    if n_classes == 1:
        return np.array([n_max])
    k = np.arange(n_classes)
    counts = np.round(n_max * ratio ** (k / (n_classes - 1))).astype(int)
    return np.maximum(counts, 1)


def augment(x, noise_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian feature noise, the feature-space stand-in for image augmentation."""
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    x = np.asarray(x, dtype=float)
    if noise_scale == 0:
        return x.copy()
    return x + noise_scale * rng.standard_normal(x.shape)


def _seed_streams(seed: int):
    means_ss, train_ss, test_ss = np.random.SeedSequence(seed).spawn(3)
    return means_ss, train_ss, test_ss


def _class_means(cfg: StreamConfig) -> np.ndarray:
    # N(0, s^2/(2d) I) gives an expected pairwise distance close to s
    means_ss, _, _ = _seed_streams(cfg.seed)
    rng = np.random.default_rng(means_ss)
    scale = cfg.cluster_separation / math.sqrt(2 * cfg.feature_dim)
    return scale * rng.standard_normal((cfg.num_classes, cfg.feature_dim))


def _labeled_count(cfg: StreamConfig, n: int) -> int:
    if cfg.labeled_per_class is not None:
        return min(cfg.labeled_per_class, n)
    return min(max(1, int(round(cfg.supervision_fraction * n))), n)


def generate_stream(cfg: StreamConfig) -> TaskStream:
    """Deterministic stream for ``cfg`` (same config -> bitwise-identical data)."""
    means = _class_means(cfg)
    _, train_ss, _ = _seed_streams(cfg.seed)
    rng = np.random.default_rng(train_ss)
    counts = imbalance_counts(cfg.samples_per_class, cfg.classes_per_task, cfg.imbalance_ratio)
    d = cfg.feature_dim
    tasks = []
    for t in range(cfg.num_tasks):
        class_set = list(range(t * cfg.classes_per_task, (t + 1) * cfg.classes_per_task))
        lx, ly, ux, uy = [], [], [], []
        for k, c in enumerate(class_set):
            n = int(counts[k])
            x = means[c] + cfg.cluster_spread * rng.standard_normal((n, d))
            n_lab = _labeled_count(cfg, n)
            order = rng.permutation(n)
            lab, unl = order[:n_lab], order[n_lab:]
            lx.append(x[lab])
            ly.append(np.full(len(lab), c))
            ux.append(x[unl])
            uy.append(np.full(len(unl), c))
        tasks.append(
            TaskData(
                task_id=t + 1,
                class_set=class_set,
                labeled_x=np.concatenate(lx),
                labeled_y=np.concatenate(ly).astype(int),
                unlabeled_x=np.concatenate(ux).reshape(-1, d),
                unlabeled_y=np.concatenate(uy).astype(int),
            )
        )
    return TaskStream(tasks, means, cfg.cluster_spread)


def generate_test_sets(cfg: StreamConfig, per_class: int = 100) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fresh balanced draws from the stream's class Gaussians, one ``(x, y)`` per task.

    Uses its own RNG stream, so test points are never training points.
    """
    means = _class_means(cfg)
    _, _, test_ss = _seed_streams(cfg.seed)
    rng = np.random.default_rng(test_ss)
    out = []
    for t in range(cfg.num_tasks):
        classes = range(t * cfg.classes_per_task, (t + 1) * cfg.classes_per_task)
        xs = [means[c] + cfg.cluster_spread * rng.standard_normal((per_class, cfg.feature_dim)) for c in classes]
        ys = [np.full(per_class, c) for c in classes]
        out.append((np.concatenate(xs), np.concatenate(ys).astype(int)))
    return out


# ------------------------------------------------------------------------ CSV


def _header(d: int) -> list[str]:
    return ["task_id", "class_id", "labeled"] + [f"f{i}" for i in range(d)]


def write_stream_csv(stream: TaskStream, path) -> None:
    """Write ``task_id,class_id,labeled,f0..f{d-1}``; floats use ``repr`` so they round-trip."""
    d = stream.feature_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(d))
        for task in stream:
            for flag, xs, ys in ((1, task.labeled_x, task.labeled_y), (0, task.unlabeled_x, task.unlabeled_y)):
                for x, y in zip(xs, ys):
                    w.writerow([task.task_id, int(y), flag] + [repr(float(v)) for v in x])


class StreamFormatError(ValueError):
    """Malformed or inconsistent embedding file."""


def ingest_embeddings(path, expected_dim: int | None = None) -> TaskStream:
    """Read an embedding CSV into a ``TaskStream``.

    Rows are grouped by ``task_id`` (tasks ordered by id, renumbered 1..T),
    ``labeled`` must be 0 or 1, and class sets of different tasks must be
    disjoint.
    """
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise StreamFormatError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    if header[:3] != ["task_id", "class_id", "labeled"]:
        raise StreamFormatError(f"{path}:1: header must start with task_id,class_id,labeled")
    d = len(header) - 3
    if d < 1 or header[3:] != [f"f{i}" for i in range(d)]:
        raise StreamFormatError(f"{path}:1: feature columns must be f0..f{{d-1}}")
    if expected_dim is not None and d != expected_dim:
        raise StreamFormatError(f"{path}:1: header declares {d} features, expected {expected_dim}")

    rows: dict[int, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 3:
            raise StreamFormatError(
                f"{path}:{lineno}: expected {d} features (from header), found {len(row) - 3}"
            )
        try:
            task_id, class_id, labeled = int(row[0]), int(row[1]), int(row[2])
            feats = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise StreamFormatError(f"{path}:{lineno}: {exc}") from None
        if labeled not in (0, 1):
            raise StreamFormatError(f"{path}:{lineno}: labeled must be 0 or 1, got {labeled}")
        if not all(math.isfinite(v) for v in feats):
            raise StreamFormatError(f"{path}:{lineno}: non-finite feature value")
        rows.setdefault(task_id, []).append((class_id, labeled, feats))

    if not rows:
        raise StreamFormatError(f"{path}: no data rows")

    owner: dict[int, int] = {}
    tasks = []
    for new_id, task_id in enumerate(sorted(rows), start=1):
        entries = rows[task_id]
        classes = sorted({c for c, _, _ in entries})
        for c in classes:
            if c in owner:
                raise StreamFormatError(
                    f"{path}: class {c} appears in tasks {owner[c]} and {task_id}; "
                    "class sets must be disjoint"
                )
            owner[c] = task_id
        lab = [(c, f) for c, l, f in entries if l == 1]
        unl = [(c, f) for c, l, f in entries if l == 0]
        tasks.append(
            TaskData(
                task_id=new_id,
                class_set=classes,
                labeled_x=np.array([f for _, f in lab], dtype=float).reshape(-1, d),
                labeled_y=np.array([c for c, _ in lab], dtype=int),
                unlabeled_x=np.array([f for _, f in unl], dtype=float).reshape(-1, d),
                unlabeled_y=np.array([c for c, _ in unl], dtype=int),
            )
        )
    return TaskStream(tasks)
