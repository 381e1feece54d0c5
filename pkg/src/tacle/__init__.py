"""Exemplar-free semi-supervised class-incremental learning on feature vectors.

Two stages per task: pseudo-label training of a linear feature map and the
task's classifier head with a task-adaptive confidence threshold and
class-aware loss weights, then alignment of all heads on features sampled
from stored per-class Gaussians.
"""

from .experiment import (
    Ablation,
    ExperimentConfig,
    ModelConfig,
    RunResult,
    SweepResult,
    ThresholdParams,
    emit_plot_data,
    load_config,
    run_experiment,
    run_seed,
    save_config,
    sweep_threshold,
)
from .linear_core import LinearModel, SgdConfig, backward_weighted_ce, cross_entropy, forward, sgd_step, softmax
from .metrics import EvalRecord, average_incremental_accuracy, cumulative_accuracy
from .stage1 import ClassWeightState, Stage1Config, Stage1Report, train_task_stage1
from .stage2 import ClassStats, Stage2Config, StatsBank, align_classifiers, estimate_stats, sample_gaussian
from .streams import StreamConfig, TaskData, TaskStream, generate_stream, ingest_embeddings
from .threshold import ThresholdSchedule, average_confidence_score, confident_mask, threshold_at

__version__ = "0.1.0"
