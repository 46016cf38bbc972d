"""Reference synthetic experiment: cohorts, evaluation hook and the ablation comparison.

The comparison shares the first ``phase_switch_iter`` iterations between
the two arms.  Mode does not influence phase 1, so a similarity-only run
resumed from the shared checkpoint is the same run it would have been from
scratch, at half the cost.
"""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DataSpec, RunConfig
from .data import Dataset, generate_dataset
from .evaluation import (
    ProbeResult,
    extract_representations,
    pca,
    permutation_control,
    probe_experiment,
    separation_scores,
)
from .trainer import Trainer, read_metrics, run_training

log = logging.getLogger(__name__)

PROBE_SUBJECTS = 8
PROBE_TRAIN_FIRST_ID = 1000
PROBE_EVAL_FIRST_ID = 2000


@dataclass
class Cohorts:
    pretrain: Dataset
    probe_train: Dataset
    probe_eval: Dataset


def reference_cohorts(spec: DataSpec) -> Cohorts:
    """Pre-training cohort from ``spec`` plus two disjoint held-out probe cohorts."""
    held_out = dict(n_subjects=PROBE_SUBJECTS)
    return Cohorts(
        generate_dataset(spec),
        generate_dataset(_reseed(spec, 1, **held_out), first_subject_id=PROBE_TRAIN_FIRST_ID),
        generate_dataset(_reseed(spec, 2, **held_out), first_subject_id=PROBE_EVAL_FIRST_ID),
    )


def _reseed(spec: DataSpec, offset: int, **changes) -> DataSpec:
    d = {**spec.__dict__, **changes, "seed": spec.seed + 7919 * offset}
    return DataSpec(**d)


def evaluate_probe(net, probe_train: Dataset, probe_eval: Dataset) -> ProbeResult:
    """Frozen protocol: probe fit on one cohort, scored on held-out subjects."""
    _, _, _, y_train = probe_train.stacked()
    _, _, _, y_eval = probe_eval.stacked()
    return probe_experiment(
        extract_representations(net, probe_train), y_train, extract_representations(net, probe_eval), y_eval
    )


def representation_std(net, dataset: Dataset) -> float:
    """Mean per-feature standard deviation of representations over ``dataset``."""
    return float(extract_representations(net, dataset).std(axis=0).mean())


def make_eval_hook(probe_train: Dataset | None, probe_eval: Dataset):
    """Metrics hook for ``run_training``; without a probe-train cohort only ``rep_std`` is logged."""

    def hook(trainer: Trainer) -> dict:
        out = {"rep_std": representation_std(trainer.student, probe_eval)}
        if probe_train is not None:
            r = evaluate_probe(trainer.student, probe_train, probe_eval)
            out.update(probe_accuracy=r.accuracy, probe_sensitivity=r.sensitivity, probe_specificity=r.specificity)
        return out

    return hook


# ---------------------------------------------------------------------------
# structure of the representation space


@dataclass
class StructureReport:
    subject_scores: np.ndarray
    event_scores: np.ndarray
    subject_control: np.ndarray  # [n_perm, k]
    event_control: np.ndarray
    explained_variance: np.ndarray

    @property
    def subject_component(self) -> int:
        return int(np.argmax(self.subject_scores))

    @property
    def event_component(self) -> int:
        return int(np.argmax(self.event_scores))

    def margin_in_sd(self, which: str) -> float:
        """Best score minus the control mean of the same component, in control SDs."""
        scores, control = (
            (self.subject_scores, self.subject_control) if which == "subject" else (self.event_scores, self.event_control)
        )
        c = int(np.argmax(scores))
        sd = control[:, c].std()
        gap = scores[c] - control[:, c].mean()
        return float(gap / sd) if sd > 0 else (np.inf if gap > 0 else 0.0)

    def to_dict(self) -> dict:
        return {
            "subject_component": self.subject_component,
            "event_component": self.event_component,
            "subject_scores": self.subject_scores.tolist(),
            "event_scores": self.event_scores.tolist(),
            "subject_margin_sd": self.margin_in_sd("subject"),
            "event_margin_sd": self.margin_in_sd("event"),
            "explained_variance": self.explained_variance.tolist(),
        }


def representation_structure(net, dataset: Dataset, k: int = 8, n_perm: int = 20, seed: int = 0) -> StructureReport:
    reps = extract_representations(net, dataset)
    _, sid, _, labels = dataset.stacked()
    result = pca(reps, k, seed=seed)
    s = separation_scores(result, sid, labels)
    ctrl_s, ctrl_e = permutation_control(result, sid, labels, n_perm=n_perm, seed=seed)
    return StructureReport(s.subject, s.event, ctrl_s, ctrl_e, result.explained_variance)


# ---------------------------------------------------------------------------
# ablation comparison


@dataclass
class Comparison:
    debs: ProbeResult
    similarity_only: ProbeResult
    curves: dict[str, list[tuple[int, float]]] = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.debs.accuracy - self.similarity_only.accuracy

    def to_dict(self) -> dict:
        return {
            "debs": self.debs.to_dict(),
            "similarity_only": self.similarity_only.to_dict(),
            "delta_accuracy": self.delta,
            "curves": {k: [list(p) for p in v] for k, v in self.curves.items()},
        }


def accuracy_curve(rows: list[dict]) -> list[tuple[int, float]]:
    return [(int(r["iteration"]) + 1, float(r["probe_accuracy"])) for r in rows if "probe_accuracy" in r]


def run_comparison(config: RunConfig, cohorts: Cohorts, out_dir, eval_every: int | None = None) -> Comparison:
    """Train DEBS and the similarity-only ablation on a shared phase-1 prefix and probe both.

    Writes ``debs/`` and ``similarity-only/`` run directories under ``out_dir``.
    """
    out = Path(out_dir)
    if eval_every is not None:
        config = config.override(train={"eval_every": eval_every})
    debs_cfg = config.override(train={"mode": "debs"})
    sim_cfg = config.override(train={"mode": "similarity-only"})
    hook = make_eval_hook(cohorts.probe_train, cohorts.probe_eval)
    switch = config.train.phase_switch_iter

    debs_dir, sim_dir = out / "debs", out / "similarity-only"
    run_training(debs_cfg, cohorts.pretrain, debs_dir, stop_at=switch, eval_hook=hook)
    sim_dir.mkdir(parents=True, exist_ok=True)
    for name in ("checkpoint.bin", "metrics.csv"):
        shutil.copyfile(debs_dir / name, sim_dir / name)
    log.info("shared prefix done at iteration %d", switch)

    debs = run_training(debs_cfg, cohorts.pretrain, debs_dir, resume=debs_dir / "checkpoint.bin", eval_hook=hook)
    # the stored hash names the debs config; the schedules agree up to the switch
    sim = run_training(
        sim_cfg, cohorts.pretrain, sim_dir, resume=sim_dir / "checkpoint.bin", eval_hook=hook, force=True
    )
    return Comparison(
        evaluate_probe(debs.student, cohorts.probe_train, cohorts.probe_eval),
        evaluate_probe(sim.student, cohorts.probe_train, cohorts.probe_eval),
        {
            "debs": accuracy_curve(read_metrics(debs_dir / "metrics.csv")),
            "similarity_only": accuracy_curve(read_metrics(sim_dir / "metrics.csv")),
        },
    )
