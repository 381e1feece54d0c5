"""End-to-end runs over a task stream: the TACLE pipeline, its ablations and
the two baselines, plus seed aggregation, threshold sweeps and CSV/JSON output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .linear_core import LinearModel, SgdConfig
from .metrics import EvalRecord, average_incremental_accuracy, cumulative_accuracy
from .stage1 import Stage1Config, train_task_labeled_only, train_task_stage1
from .stage2 import StatsBank, Stage2Config, align_classifiers, estimate_stats, expand_label_set
from .streams import StreamConfig, generate_stream, generate_test_sets
from .threshold import ThresholdSchedule, average_confidence_score, threshold_at

log = logging.getLogger(__name__)

PIPELINES = ("tacle", "fixed_threshold", "labeled_only")
PIPELINE_ALIASES = {"fixed": "fixed_threshold", "labeled": "labeled_only"}


@dataclass(frozen=True)
class Ablation:
    c1_adaptive_threshold: bool = True
    c2_class_weights: bool = True
    c3_unlabeled_stats: bool = True


@dataclass(frozen=True)
class ThresholdParams:
    """Adaptive schedule parameters, used when C1 is on; ``gamma`` otherwise."""

    alpha: float = 0.5
    beta: float = 0.65
    gamma: float = 0.95

    def schedule(self, adaptive: bool) -> ThresholdSchedule:
        return ThresholdSchedule.adaptive(self.alpha, self.beta) if adaptive else ThresholdSchedule.fixed(self.gamma)


@dataclass(frozen=True)
class ModelConfig:
    activation: str = "identity"
    feature_trainable: bool = True
    head_init_scale: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    pipeline: str = "tacle"
    ablation: Ablation = field(default_factory=Ablation)
    threshold: ThresholdParams = field(default_factory=ThresholdParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    test_per_class: int = 100
    seeds: tuple[int, ...] = (0, 1, 2)
    output_dir: str | None = None

    def __post_init__(self):
        pipeline = PIPELINE_ALIASES.get(self.pipeline, self.pipeline)
        if pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}; expected one of {PIPELINES}")
        object.__setattr__(self, "pipeline", pipeline)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if pipeline == "labeled_only":
            object.__setattr__(self, "ablation", Ablation(False, False, False))
        elif pipeline == "fixed_threshold":
            object.__setattr__(self, "ablation", replace(self.ablation, c1_adaptive_threshold=False))
        # validates the schedule that will actually be used
        self.threshold.schedule(self.ablation.c1_adaptive_threshold)
        if self.test_per_class < 1:
            raise ValueError("test_per_class must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d)

    def semantic_dict(self) -> dict:
        """Fields that change results for a given seed."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("output_dir")
        d["stream"].pop("seed")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_NESTED = {
    "stream": StreamConfig,
    "ablation": Ablation,
    "threshold": ThresholdParams,
    "model": ModelConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "sgd": SgdConfig,
}


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise ValueError(f"{cls.__name__} section must be an object, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        kwargs[k] = _build(_NESTED[k], v) if k in _NESTED and isinstance(v, dict) else v
    return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; missing keys take their defaults."""
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


def save_config(cfg: ExperimentConfig, path) -> None:
    """Write the config with every default filled in."""
    _atomic_write(path, json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------------ runs


@dataclass
class RunResult:
    config_hash: str
    seed: int
    pipeline: str
    records: list[EvalRecord]
    average_incremental_accuracy: float
    acs: list[float]
    confident_fraction: list[float]
    pseudo_label_precision: list[float]
    wall_clock_seconds: float = 0.0

    @property
    def cumulative_accuracies(self) -> list[float]:
        return [r.cumulative_accuracy for r in self.records]

    def payload(self) -> dict:
        """Everything reproducible from (config, seed); wall clock is excluded."""
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "pipeline": self.pipeline,
            "average_incremental_accuracy": self.average_incremental_accuracy,
            "records": [r.to_dict() for r in self.records],
            "acs": _nan_to_none(self.acs),
            "confident_fraction": _nan_to_none(self.confident_fraction),
            "pseudo_label_precision": _nan_to_none(self.pseudo_label_precision),
        }

    def to_json(self) -> str:
        return json.dumps(self.payload(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_payload(cls, d: dict, wall_clock_seconds: float = 0.0) -> "RunResult":
        records = [
            EvalRecord(
                r["task_id"],
                r["cumulative_accuracy"],
                r["num_test_samples"],
                {int(k): v for k, v in r["per_class_accuracy"].items()},
            )
            for r in d["records"]
        ]
        nan = float("nan")
        return cls(
            d["config_hash"],
            d["seed"],
            d["pipeline"],
            records,
            d["average_incremental_accuracy"],
            [nan if v is None else v for v in d["acs"]],
            [nan if v is None else v for v in d["confident_fraction"]],
            [nan if v is None else v for v in d["pseudo_label_precision"]],
            wall_clock_seconds,
        )


def _nan_to_none(xs):
    return [None if (v is None or v != v) else v for v in xs]


def _tasks_once(stream):
    # hand out each task exactly once; nothing of task t survives into t+1
    tasks = list(stream.tasks)
    stream.tasks.clear()
    while tasks:
        yield tasks.pop(0)


def run_seed(cfg: ExperimentConfig, seed: int) -> RunResult:
    """One full pass over the stream for ``seed``."""
    start = time.perf_counter()
    stream_cfg = replace(cfg.stream, seed=seed)
    stream = generate_stream(stream_cfg)
    test_sets = generate_test_sets(stream_cfg, cfg.test_per_class)
    task_seeds = np.random.SeedSequence([seed, 1]).spawn(stream_cfg.num_tasks)

    mc = cfg.model
    model = LinearModel.identity(stream_cfg.feature_dim, mc.activation, mc.feature_trainable)
    bank = StatsBank()
    ab = cfg.ablation
    sched = cfg.threshold.schedule(ab.c1_adaptive_threshold)
    records, acs, conf, prec = [], [], [], []

    for i, task in enumerate(_tasks_once(stream)):
        s1_rng, s2_rng, init_rng = (np.random.default_rng(s) for s in task_seeds[i].spawn(3))
        model.add_head(task.class_set, mc.head_init_scale, init_rng)

        if cfg.pipeline == "labeled_only":
            _, report = train_task_labeled_only(model, task, cfg.stage1, s1_rng)
        else:
            _, report = train_task_stage1(model, task, sched, cfg.stage1, s1_rng, class_weights=ab.c2_class_weights)

        if ab.c3_unlabeled_stats:
            x, y = expand_label_set(task, model, threshold_at(sched, task.task_id))
        else:
            x, y = task.labeled_x, task.labeled_y
        bank.add(estimate_stats(model.features(x), y, task.class_set, cfg.stage2.cov_regularizer, cfg.stage2.diagonal))
        align_classifiers(model, bank, cfg.stage2, s2_rng)

        acs.append(average_confidence_score(model, task.unlabeled_x) if len(task.unlabeled_x) else float("nan"))
        conf.append(report.confident_fraction[-1] if report.confident_fraction else float("nan"))
        prec.append(report.pseudo_label_precision[-1] if report.pseudo_label_precision else float("nan"))
        records.append(cumulative_accuracy(model, test_sets[: i + 1], task.task_id))
        log.debug("seed %d task %d: acc %.4f", seed, task.task_id, records[-1].cumulative_accuracy)

    return RunResult(
        config_hash=cfg.config_hash(),
        seed=seed,
        pipeline=cfg.pipeline,
        records=records,
        average_incremental_accuracy=average_incremental_accuracy(records),
        acs=acs,
        confident_fraction=conf,
        pseudo_label_precision=prec,
        wall_clock_seconds=time.perf_counter() - start,
    )


def run_experiment(cfg: ExperimentConfig, persist: bool = True) -> list[RunResult]:
    """Run every seed in ``cfg.seeds``; persist under ``cfg.output_dir`` when set."""
    results = []
    for seed in cfg.seeds:
        res = run_seed(cfg, seed)
        log.info(
            "%s seed %d: avg incremental accuracy %.4f (%.1fs)",
            cfg.pipeline, seed, res.average_incremental_accuracy, res.wall_clock_seconds,
        )
        results.append(res)
    if persist and cfg.output_dir:
        persist_results(cfg, results, cfg.output_dir)
    return results


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std())


# ----------------------------------------------------------------- persistence


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def result_path(out_dir, config_hash: str, seed: int) -> Path:
    return Path(out_dir) / f"{config_hash}_seed{seed}.json"


def persist_results(cfg: ExperimentConfig, results, out_dir) -> list[Path]:
    """Write ``<hash>.config.json``, one ``<hash>_seed<k>.json`` per result and
    a ``.timing.json`` sidecar holding the non-reproducible wall clock."""
    out = Path(out_dir)
    h = cfg.config_hash()
    save_config(cfg, out / f"{h}.config.json")
    paths = []
    for r in results:
        p = result_path(out, r.config_hash, r.seed)
        _atomic_write(p, r.to_json())
        _atomic_write(p.with_suffix(".timing.json"), json.dumps({"wall_clock_seconds": r.wall_clock_seconds}) + "\n")
        paths.append(p)
    return paths


def load_results(out_dir) -> list[RunResult]:
    results = []
    for p in sorted(Path(out_dir).glob("*_seed*.json")):
        if p.name.endswith(".timing.json"):
            continue
        timing = p.with_suffix(".timing.json")
        wall = json.loads(timing.read_text())["wall_clock_seconds"] if timing.exists() else 0.0
        results.append(RunResult.from_payload(json.loads(p.read_text(encoding="utf-8")), wall))
    return results


def rerun_from_disk(out_dir, config_hash: str, seed: int) -> tuple[str, str]:
    """Re-execute a persisted run; returns ``(stored payload text, fresh payload text)``."""
    out = Path(out_dir)
    cfg = load_config(out / f"{config_hash}.config.json")
    stored = result_path(out, config_hash, seed).read_text(encoding="utf-8")
    return stored, run_seed(cfg, seed).to_json()


# ---------------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    alphas: list[float]
    betas: list[float]
    grid: np.ndarray  # (len(alphas), len(betas)) seed-mean average incremental accuracy


def sweep_threshold(cfg: ExperimentConfig, alphas, betas, out_path=None) -> SweepResult:
    """Seed-mean average incremental accuracy over an alpha x beta grid."""
    alphas, betas = [float(a) for a in alphas], [float(b) for b in betas]
    for a in alphas:
        for b in betas:
            ThresholdSchedule.adaptive(a, b)
    grid = np.zeros((len(alphas), len(betas)))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            cell = replace(cfg, threshold=replace(cfg.threshold, alpha=a, beta=b), output_dir=None)
            results = run_experiment(cell, persist=False)
            grid[i, j] = np.mean([r.average_incremental_accuracy for r in results])
    sweep = SweepResult(alphas, betas, grid)
    if out_path is not None:
        emit_plot_data(sweep, "sweep_grid", out_path)
    return sweep


# ------------------------------------------------------------------- plot data

PLOT_KINDS = ("cumulative_curve", "acs_curve", "sweep_grid")


def emit_plot_data(results, kind: str, path) -> Path:
    """Write plot-ready CSV.

    ``cumulative_curve`` and ``acs_curve`` take a list of ``RunResult`` and
    write ``task,mean,stddev`` rows (population stddev over seeds);
    ``sweep_grid`` takes a ``SweepResult`` and writes one row per alpha with
    one column per beta.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    buf = []
    if kind == "sweep_grid":
        if not isinstance(results, SweepResult):
            raise ValueError("sweep_grid needs a SweepResult")
        buf.append(["alpha\\beta"] + [repr(b) for b in results.betas])
        for a, row in zip(results.alphas, results.grid):
            buf.append([repr(a)] + [repr(float(v)) for v in row])
    else:
        results = list(results)
        if not results:
            raise ValueError("no results to plot")
        series = np.array([r.cumulative_accuracies if kind == "cumulative_curve" else r.acs for r in results], dtype=float)
        buf.append(["task", "mean", "stddev"])
        for t in range(series.shape[1]):
            m, s = mean_std(series[:, t])
            buf.append([str(t + 1), repr(m), repr(s)])
    text = io.StringIO()
    csv.writer(text, lineterminator="\n").writerows(buf)
    _atomic_write(path, text.getvalue())
    return Path(path)


def read_sweep_csv(path) -> SweepResult:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    betas = [float(b) for b in rows[0][1:]]
    alphas = [float(r[0]) for r in rows[1:]]
    grid = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return SweepResult(alphas, betas, grid)
