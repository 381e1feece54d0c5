# The two small ideas that drive pseudo-labelling: a confidence cutoff that
# relaxes as tasks go by, and per-class weights that favour classes the
# model is rarely confident about.
import numpy as np

from tacle import ThresholdSchedule, threshold_at
from tacle.stage1 import assign_weights, histogram_from_counts, init_class_weights

# %% the cutoff starts high and settles towards beta
sched = ThresholdSchedule.adaptive(alpha=0.5, beta=0.65)
for t in (1, 2, 3, 5, 10, 20):
    print(f"task {t:2d}: cutoff {threshold_at(sched, t):.5f}")

# a fixed cutoff for comparison
print("fixed:", threshold_at(ThresholdSchedule.fixed(0.95), 7))

# %% beta moves the whole curve, alpha sets how far above beta it starts
for beta in (0.6, 0.65, 0.7):
    row = [threshold_at(ThresholdSchedule.adaptive(0.5, beta), t) for t in range(1, 6)]
    print(f"beta={beta}:", np.round(row, 4))

# %% class weights from a histogram of confident predictions
# class 0 was confidently predicted 50 times, class 1 twenty, class 2 never
state = histogram_from_counts(init_class_weights(3), [50, 20, 0])
print("zeta     ", state.zeta)
print("zeta bar ", state.zeta_bar)  # 1 for the most common class, 2 for unseen ones

# weights are looked up by (pseudo-)label
w_labeled, w_unlabeled = assign_weights(state, labeled_targets=[2, 0], pseudo_labels=[1, 1, 0])
print(w_labeled, w_unlabeled)
