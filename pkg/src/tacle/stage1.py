"""Stage 1: feature-representation learning on one task.

Labeled cross-entropy plus confidence-gated pseudo-label cross-entropy on
noise-augmented unlabeled features, both reweighted per class by
``2 - zeta`` where ``zeta`` is the max-normalized histogram of confident
pseudo-labels. Only the newest head and (when trainable) the feature layer
move; older heads are frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linear_core import LinearModel, SgdConfig, add_grads, sgd_step, softmax, weighted_ce
from .streams import TaskData, augment
from .threshold import ThresholdSchedule, confident_mask, threshold_at

UNSUP_MEANS = ("gated", "full_batch")


@dataclass(frozen=True)
class ClassWeightState:
    zeta: np.ndarray
    counts: np.ndarray | None = None  # confident counts behind zeta, None at init

    @property
    def zeta_bar(self) -> np.ndarray:
        return 2.0 - self.zeta


@dataclass(frozen=True)
class Stage1Config:
    epochs: int = 10
    warmup_iterations: int | None = None  # None: one pass over the labeled set
    iterations_per_epoch: int | None = None  # None: one pass over the unlabeled set
    batch_size_labeled: int = 64
    batch_size_unlabeled: int = 64
    lr_drop_epoch: int = 8
    lr_drop_factor: float = 10.0
    augment_noise: float = 0.5
    unsup_mean: str = "gated"
    feature_lr_scale: float = 0.1
    sgd: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.epochs and self.lr_drop_epoch > self.epochs:
            raise ValueError("lr_drop_epoch must be <= epochs")
        if self.unsup_mean not in UNSUP_MEANS:
            raise ValueError(f"unsup_mean must be one of {UNSUP_MEANS}")
        if self.batch_size_labeled < 1 or self.batch_size_unlabeled < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr_drop_factor <= 0 or self.augment_noise < 0 or self.feature_lr_scale < 0:
            raise ValueError("lr_drop_factor must be > 0; augment_noise, feature_lr_scale >= 0")


@dataclass
class Stage1Report:
    threshold: float
    epoch_loss: list[float] = field(default_factory=list)
    confident_fraction: list[float] = field(default_factory=list)
    pseudo_label_precision: list[float] = field(default_factory=list)
    zeta_bar: list[float] = field(default_factory=list)


def init_class_weights(num_classes: int) -> ClassWeightState:
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    return ClassWeightState(np.ones(num_classes))


def histogram_from_counts(state: ClassWeightState, counts) -> ClassWeightState:
    """Max-normalize ``counts`` into a new state; all-zero counts keep the old ``zeta``."""
    counts = np.asarray(counts)
    top = counts.max()
    if top <= 0:
        return ClassWeightState(state.zeta, counts)
    return ClassWeightState(counts / top, counts)


def current_task_probs(model: LinearModel, x, head: int | None = None) -> np.ndarray:
    head = len(model.heads) - 1 if head is None else head
    return softmax(model.logits(x, [head]))


def update_histogram(state: ClassWeightState, model: LinearModel, unlabeled_x, thr: float) -> ClassWeightState:
    """Recount confident pseudo-labels of the newest head over ``unlabeled_x``."""
    k = len(state.zeta)
    if len(unlabeled_x) == 0:
        return ClassWeightState(state.zeta, np.zeros(k, dtype=int))
    mask, labels = confident_mask(current_task_probs(model, unlabeled_x), thr)
    return histogram_from_counts(state, np.bincount(labels[mask], minlength=k))


def assign_weights(state: ClassWeightState, labeled_targets, pseudo_labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample weights looked up in ``zeta_bar`` by within-task class index."""
    zb = state.zeta_bar
    out = []
    for idx in (labeled_targets, pseudo_labels):
        idx = np.asarray(idx, dtype=int)
        if np.any(idx < 0) or np.any(idx >= len(zb)):
            raise ValueError(f"class index out of range for {len(zb)} classes")
        out.append(zb[idx])
    return out[0], out[1]


# ---------------------------------------------------------------------- training


def _schedule(task: TaskData, cfg: Stage1Config) -> tuple[int, int]:
    n_l, n_ul = len(task.labeled_y), len(task.unlabeled_x)
    warmup = cfg.warmup_iterations
    if warmup is None:
        warmup = math.ceil(n_l / cfg.batch_size_labeled)
    iters = cfg.iterations_per_epoch
    if iters is None:
        iters = max(1, math.ceil(n_ul / cfg.batch_size_unlabeled))
    return warmup, iters


def _epoch_lr(cfg: Stage1Config, epoch: int) -> float:
    lr = cfg.sgd.learning_rate
    return lr / cfg.lr_drop_factor if epoch > cfg.lr_drop_epoch else lr


def _labeled_batch(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return rng.choice(n, size=min(size, n), replace=False)


def _step(model, grads, velocity, cfg: Stage1Config, lr: float):
    params = model.parameters()
    head_grads = {k: v for k, v in grads.items() if not k.startswith("feature.")}
    feat_grads = {k: v for k, v in grads.items() if k.startswith("feature.")}
    sgd_step(params, head_grads, velocity, cfg.sgd, lr)
    if feat_grads and cfg.feature_lr_scale > 0:
        sgd_step(params, feat_grads, velocity, cfg.sgd, lr * cfg.feature_lr_scale)


def _check_task(task: TaskData):
    if len(task.labeled_y) == 0:
        raise ValueError(f"task {task.task_id} has no labeled samples")


def stage1_loss(model, head, xl, yl, wl, xu_aug, pseudo, wu, mask, unsup_mean="gated"):
    """Stage-1 loss and gradients for one minibatch; ``mask``/``pseudo`` are constants."""
    heads = [head]
    loss, grads = weighted_ce(model, xl, yl, np.asarray(wl, dtype=float) / len(yl), heads)
    n_gated = int(np.sum(mask))
    if n_gated:
        denom = n_gated if unsup_mean == "gated" else len(mask)
        lu, gu = weighted_ce(model, xu_aug[mask], pseudo[mask], np.asarray(wu)[mask] / denom, heads)
        loss += lu
        grads = add_grads(grads, gu)
    return loss, grads


def train_task_stage1(
    model: LinearModel,
    task: TaskData,
    sched: ThresholdSchedule,
    cfg: Stage1Config,
    rng: np.random.Generator,
    class_weights: bool = True,
) -> tuple[LinearModel, Stage1Report]:
    """Train the newest head (and the feature layer) on ``task`` in place.

    The caller registers the task's head before calling. ``class_weights``
    turns the ``2 - zeta`` reweighting on or off; the histogram is tracked
    either way for the report.
    """
    _check_task(task)
    head = len(model.heads) - 1
    k = len(task.class_set)
    if model.heads[head].num_classes != k:
        raise ValueError("newest head does not match the task's class count")
    thr = threshold_at(sched, task.task_id)
    lab_rng, unl_rng, aug_rng = rng.spawn(3)
    warmup, iters = _schedule(task, cfg)

    xl_all, yl_all = task.labeled_x, task.local(task.labeled_y)
    xu_all = task.unlabeled_x
    yu_hidden = task.local(task.unlabeled_y) if len(task.unlabeled_y) else np.zeros(0, dtype=int)
    n_l, n_ul = len(yl_all), len(xu_all)

    state = init_class_weights(k)
    uniform = init_class_weights(k)
    velocity: dict = {}
    report = Stage1Report(threshold=thr)

    for _ in range(warmup):
        b = _labeled_batch(lab_rng, n_l, cfg.batch_size_labeled)
        wl, _ = assign_weights(uniform, yl_all[b], [])
        _, grads = weighted_ce(model, xl_all[b], yl_all[b], wl / len(b), [head])
        _step(model, grads, velocity, cfg, cfg.sgd.learning_rate)

    bu = cfg.batch_size_unlabeled
    for epoch in range(1, cfg.epochs + 1):
        lr = _epoch_lr(cfg, epoch)
        weights_state = state if class_weights else uniform
        perm = unl_rng.permutation(n_ul) if n_ul else None
        losses = []
        for it in range(iters):
            b = _labeled_batch(lab_rng, n_l, cfg.batch_size_labeled)
            if n_ul:
                start = (it * bu) % n_ul
                u = np.take(perm, np.arange(start, start + min(bu, n_ul)), mode="wrap")
                xu = xu_all[u]
                mask, pseudo = confident_mask(current_task_probs(model, xu, head), thr)
                xu_aug = augment(xu, cfg.augment_noise, aug_rng)
            else:
                mask, pseudo, xu_aug = np.zeros(0, bool), np.zeros(0, int), np.zeros((0, model.input_dim))
            wl, wu = assign_weights(weights_state, yl_all[b], pseudo)
            loss, grads = stage1_loss(
                model, head, xl_all[b], yl_all[b], wl, xu_aug, pseudo, wu, mask, cfg.unsup_mean
            )
            _step(model, grads, velocity, cfg, lr)
            losses.append(loss)

        state = update_histogram(state, model, xu_all, thr)
        report.epoch_loss.append(float(np.mean(losses)))
        if n_ul:
            mask, labels = confident_mask(current_task_probs(model, xu_all, head), thr)
            report.confident_fraction.append(float(mask.mean()))
            report.pseudo_label_precision.append(
                float(np.mean(labels[mask] == yu_hidden[mask])) if mask.any() else float("nan")
            )
    report.zeta_bar = (state if class_weights else uniform).zeta_bar.tolist()
    return model, report


def train_task_labeled_only(
    model: LinearModel, task: TaskData, cfg: Stage1Config, rng: np.random.Generator
) -> tuple[LinearModel, Stage1Report]:
    """Supervised-only stage 1 with the same iteration and RNG discipline as
    ``train_task_stage1``: unlabeled features are never read, only counted."""
    _check_task(task)
    head = len(model.heads) - 1
    lab_rng, _, _ = rng.spawn(3)
    warmup, iters = _schedule(task, cfg)
    xl_all, yl_all = task.labeled_x, task.local(task.labeled_y)
    n_l = len(yl_all)
    ones = np.ones(min(cfg.batch_size_labeled, n_l))
    velocity: dict = {}
    report = Stage1Report(threshold=float("inf"))

    for _ in range(warmup):
        b = _labeled_batch(lab_rng, n_l, cfg.batch_size_labeled)
        _, grads = weighted_ce(model, xl_all[b], yl_all[b], ones / len(b), [head])
        _step(model, grads, velocity, cfg, cfg.sgd.learning_rate)

    for epoch in range(1, cfg.epochs + 1):
        lr = _epoch_lr(cfg, epoch)
        losses = []
        for _ in range(iters):
            b = _labeled_batch(lab_rng, n_l, cfg.batch_size_labeled)
            loss, grads = weighted_ce(model, xl_all[b], yl_all[b], ones / len(b), [head])
            _step(model, grads, velocity, cfg, lr)
            losses.append(loss)
        report.epoch_loss.append(float(np.mean(losses)))
    report.zeta_bar = [1.0] * len(task.class_set)
    return model, report


def with_epochs(cfg: Stage1Config, epochs: int) -> Stage1Config:
    return replace(cfg, epochs=epochs, lr_drop_epoch=min(cfg.lr_drop_epoch, epochs))
