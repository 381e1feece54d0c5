# Run the whole pipeline and its ablations over a five-task stream and
# compare average incremental accuracy. Takes about ten seconds.
from dataclasses import replace

import numpy as np

from tacle.experiment import Ablation, ExperimentConfig, run_experiment

base = ExperimentConfig(seeds=(0, 1, 2))

# the fixed-cutoff pipeline keeps class weights and unlabelled statistics,
# only the cutoff itself changes; the last three rows add one piece at a time
variants = {
    "labelled only": replace(base, pipeline="labeled_only"),
    "fixed cutoff, all on": replace(base, pipeline="fixed_threshold"),
    "adaptive cutoff only": replace(base, ablation=Ablation(True, False, False)),
    "+ class weights": replace(base, ablation=Ablation(True, True, False)),
    "+ unlabelled stats": base,
}

for name, cfg in variants.items():
    runs = run_experiment(cfg, persist=False)
    accs = [r.average_incremental_accuracy for r in runs]
    curve = np.mean([r.cumulative_accuracies for r in runs], axis=0)
    print(f"{name:22s} {np.mean(accs):.4f} +/- {np.std(accs):.4f}   per task {np.round(curve, 3)}")

# %% confidence on each new task drifts down when only labels are used
runs = run_experiment(variants["labelled only"], persist=False)
print("mean ACS per task:", np.round(np.mean([r.acs for r in runs], axis=0), 3))

# %% the harder settings are a config change away
one_shot = ExperimentConfig.from_dict({"stream": {"labeled_per_class": 1, "supervision_fraction": None}})
imbalanced = ExperimentConfig.from_dict({"stream": {"imbalance_ratio": 0.01}})
for name, cfg in (("one-shot", one_shot), ("imbalanced", imbalanced)):
    runs = run_experiment(replace(cfg, seeds=(0,)), persist=False)
    print(name, round(runs[0].average_incremental_accuracy, 4))
