# Results are written next to the exact config that produced them, and any
# stored run can be re-executed and compared byte for byte.
import tempfile
from dataclasses import replace
from pathlib import Path

from tacle.experiment import ExperimentConfig, emit_plot_data, load_results, rerun_from_disk, run_experiment, sweep_threshold

out = Path(tempfile.mkdtemp())
cfg = replace(ExperimentConfig(), seeds=(0, 1), output_dir=str(out))
run_experiment(cfg)
for p in sorted(out.iterdir()):
    print(p.name)

stored, fresh = rerun_from_disk(out, cfg.config_hash(), seed=1)
print("byte identical:", stored == fresh)

# %% plot-ready CSVs
emit_plot_data(load_results(out), "cumulative_curve", out / "curve.csv")
print((out / "curve.csv").read_text())

# %% a small threshold sweep
sweep = sweep_threshold(replace(cfg, seeds=(0,)), [0.45, 0.5, 0.55], [0.6, 0.65, 0.7], out / "sweep.csv")
print((out / "sweep.csv").read_text())
