# Train on a single task of a synthetic stream and look at what stage 1
# and stage 2 do to the classifier.
import numpy as np

from tacle import LinearModel, StreamConfig, ThresholdSchedule, generate_stream, threshold_at
from tacle.stage1 import Stage1Config, train_task_labeled_only, train_task_stage1
from tacle.stage2 import Stage2Config, StatsBank, align_classifiers, estimate_stats, expand_label_set

cfg = StreamConfig(num_tasks=1, classes_per_task=4, samples_per_class=200, feature_dim=16, seed=3)
task = generate_stream(cfg)[0]
print(f"{len(task.labeled_y)} labelled and {len(task.unlabeled_y)} unlabelled samples, classes {task.class_set}")


def accuracy(model):
    pred = model.predict(task.unlabeled_x)
    return np.mean(pred == task.unlabeled_y)


# %% baseline: labelled samples only
base = LinearModel.identity(cfg.feature_dim)
base.add_head(task.class_set)
train_task_labeled_only(base, task, Stage1Config(), np.random.default_rng(0))
print("labelled only, accuracy on the unlabelled pool:", round(accuracy(base), 4))

# %% stage 1 with pseudo-labels above the task-1 cutoff
sched = ThresholdSchedule.adaptive()
model = LinearModel.identity(cfg.feature_dim)
model.add_head(task.class_set)
_, report = train_task_stage1(model, task, sched, Stage1Config(), np.random.default_rng(0))
print("cutoff", round(report.threshold, 5))
print("confident fraction per epoch", np.round(report.confident_fraction, 3))
print("pseudo-label precision per epoch", np.round(report.pseudo_label_precision, 3))
print("stage 1 accuracy:", round(accuracy(model), 4))

# %% stage 2: estimate a Gaussian per class from labelled + confident samples,
# then realign the classifier on draws from those Gaussians
x, y = expand_label_set(task, model, threshold_at(sched, 1))
print(f"expanded set: {len(y)} samples (from {len(task.labeled_y)} labelled)")
bank = StatsBank(estimate_stats(model.features(x), y, task.class_set))
align_classifiers(model, bank, Stage2Config(), np.random.default_rng(1))
print("after alignment:", round(accuracy(model), 4))

# the bank is plain JSON and is all that survives of this task
print(bank.to_json()[:120], "...")
