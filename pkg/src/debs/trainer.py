"""Two-phase teacher/student training loop.

Phase 1 regresses the teacher's similarity projection of one segment from
the student's similarity prediction of another segment of the same subject.
At ``phase_switch_iter`` the teacher is reset to a copy of the student and
phase 2 trains the dissimilarity path only: push the prediction for
``X[t-i]`` away from the teacher projection of ``X[t+j]`` (weighted by
``alpha``) and pull the prediction for ``X[t]`` toward the interpolation of
the teacher projections of both ends.
"""

from __future__ import annotations

import csv
import logging
import signal
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt
from .config import RunConfig
from .data import Dataset, PairBatch, Sampler, TripletBatch
from .encoder import PatchEncoder
from .errors import CheckpointError, ContractViolation, NumericFault, SamplerContractError
from .heads import BatchNorm, HeadStack
from .numeric import forward_backward
from .objectives import AdamState, adam_step, ema_update, loss_dis_path, loss_sim

log = logging.getLogger(__name__)

METRIC_FIELDS = [
    "iteration", "phase", "loss", "loss_sim", "loss_dis", "loss_gra",
    "probe_accuracy", "probe_sensitivity", "probe_specificity", "rep_std",
]
LOSS_SLACK = 1e-5


class DebsNet(nn.Module):
    """Encoder plus head stack; the teacher variant has no predictors."""

    def __init__(self, config: RunConfig, student: bool = True):
        super().__init__()
        self.encoder = PatchEncoder(config.encoder)
        self.heads = HeadStack(config.encoder.model_dim, config.heads, student=student)

    def representation(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)


def make_teacher(student: DebsNet, config: RunConfig) -> DebsNet:
    teacher = DebsNet(config, student=False)
    teacher.load_state_dict(student.state_dict(), strict=False)
    for p in teacher.parameters():
        p.requires_grad_(False)
    for m in teacher.modules():
        if isinstance(m, BatchNorm):
            m.update_running = False
    return teacher


def paired_state(teacher: nn.Module, student: nn.Module) -> tuple[dict, dict]:
    """Teacher tensors and the student tensors of the same names (parameters and buffers)."""
    t = dict(teacher.state_dict(keep_vars=True))
    s = dict(student.state_dict(keep_vars=True))
    return {k: v.data for k, v in t.items()}, {k: s[k].data for k in t}


def _t(x: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).to(dtype)


class Trainer:
    def __init__(self, config: RunConfig, dataset: Dataset):
        self.config = config
        self.tc = tc = config.train
        if config.encoder.input_len != dataset.segment_len:
            raise ContractViolation(
                f"encoder input_len {config.encoder.input_len} != dataset segment length {dataset.segment_len}"
            )
        torch.manual_seed(tc.seed)
        self.student = DebsNet(config, student=True)
        self.teacher = make_teacher(self.student, config)
        self.sampler = Sampler(dataset, tc.window_segments, seed=_sampler_seed(tc.seed), constrain_pairs=tc.constrain_pairs)
        if tc.mode == "debs":
            self.sampler.check_triplets()
        self.opt = AdamState()
        self.iteration = 0
        self.transitioned = False
        self.rows: list[dict] = []
        self._params = dict(self.student.named_parameters())
        self._sim_names = [n for n in self._params if n.startswith("heads.") and "_sim." in n]
        self._dis_names = [n for n in self._params if n.startswith("heads.") and "_dis." in n]
        enc = [n for n in self._params if n.startswith("encoder.")]
        self._active = {1: enc + self._sim_names, 2: enc + self._dis_names}

    # -- schedule ---------------------------------------------------------

    @property
    def phase(self) -> int:
        if self.tc.mode == "similarity-only" or self.iteration < self.tc.phase_switch_iter:
            return 1
        return 2

    def phase_transition(self) -> None:
        if self.transitioned:
            raise ContractViolation("phase_transition called twice")
        if self.tc.mode != "debs":
            raise ContractViolation("similarity-only runs never switch phase")
        t, s = paired_state(self.teacher, self.student)
        with torch.no_grad():
            for name, tensor in t.items():
                tensor.copy_(s[name])
        if self.tc.reset_optimizer:
            self.opt = AdamState()
        self.transitioned = True
        log.info("phase transition at iteration %d", self.iteration)

    def _ema(self) -> None:
        t, s = paired_state(self.teacher, self.student)
        ema_update(t, s, self.tc.tau)

    # -- steps ------------------------------------------------------------

    def _optimize(self, loss: torch.Tensor, phase: int) -> None:
        active = self._active[phase]
        grads = forward_backward(loss, {n: self._params[n] for n in active})
        adam_step(self._params, grads, self.opt, self.tc.lr, self.tc.weight_decay, active=active)
        self._ema()

    def _x(self, arr: np.ndarray) -> torch.Tensor:
        return _t(arr, self.student.encoder.embed.weight.dtype)

    def _predict(self, rep: torch.Tensor, which: str) -> torch.Tensor:
        proj = self.student.heads.project(rep, which)
        return self.student.heads.predict(proj, which) if self.tc.use_predictor else proj

    def phase1_loss(self, batch: PairBatch) -> torch.Tensor:
        if not np.array_equal(batch.subject1, batch.subject2):
            raise SamplerContractError("similarity pair drawn from two different subjects")
        s, t = self.student, self.teacher
        s.train()
        t.train()
        x1, x2 = self._x(batch.x1), self._x(batch.x2)
        both = torch.cat([x1, x2]) if self.tc.symmetric else x1
        z = s.encoder(both)
        with torch.no_grad():
            zt = t.encoder(torch.cat([x2, x1]) if self.tc.symmetric else x2)
        n = len(x1)
        q1 = self._predict(z[:n], "sim")
        t2 = t.heads.project(zt[:n], "sim")
        loss = loss_sim(t2, q1).mean()
        if self.tc.symmetric:
            q2 = self._predict(z[n:], "sim")
            t1 = t.heads.project(zt[n:], "sim")
            loss = 0.5 * (loss + loss_sim(t1, q2).mean())
        return loss

    def phase2_loss(self, batch: TripletBatch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        i, j = batch.i, batch.j
        if (i < 1).any() or (j < 1).any() or (i + j > self.tc.window_segments).any():
            raise SamplerContractError("triplet separation outside the window")
        s, t = self.student, self.teacher
        s.train()
        t.train()
        n = len(i)
        z = s.encoder(torch.cat([self._x(batch.x_prev), self._x(batch.x_mid)]))
        q_prev = self._predict(z[:n], "dis")
        q_mid = self._predict(z[n:], "dis")
        with torch.no_grad():
            zt = t.encoder(torch.cat([self._x(batch.x_prev), self._x(batch.x_next)]))
            t_prev = t.heads.project(zt[:n], "dis")
            t_next = t.heads.project(zt[n:], "dis")
        total, dis, gra = loss_dis_path(
            q_mid, q_prev, t_prev, t_next, torch.from_numpy(i), torch.from_numpy(j), self.tc.alpha
        )
        return total.mean(), dis.mean(), gra.mean()

    def train_step_phase1(self, batch: PairBatch) -> float:
        if self.phase != 1:
            raise ContractViolation("phase-1 step requested during phase 2")
        loss = self.phase1_loss(batch)
        value = self._check(loss, 2.0)
        self._optimize(loss, 1)
        self._record(1, value, loss_sim=value)
        return value

    def train_step_phase2(self, batch: TripletBatch) -> float:
        if self.phase != 2:
            raise ContractViolation("phase-2 step requested before the phase switch")
        loss, dis, gra = self.phase2_loss(batch)
        value = self._check(loss, 2.0 + 2.0 * self.tc.alpha)
        self._optimize(loss, 2)
        self._record(2, value, loss_dis=dis.item(), loss_gra=gra.item())
        return value

    def _check(self, loss: torch.Tensor, upper: float) -> float:
        value = loss.item()
        if not np.isfinite(value):
            raise NumericFault(f"non-finite loss at iteration {self.iteration}")
        if not -LOSS_SLACK <= value <= upper + LOSS_SLACK:
            raise NumericFault(f"loss {value} outside [0, {upper}] at iteration {self.iteration}")
        return value

    def _record(self, phase: int, loss: float, **terms) -> None:
        row = {"iteration": self.iteration, "phase": phase, "loss": loss}
        row.update(terms)
        self.rows.append(row)
        self.iteration += 1

    def step(self) -> float:
        if self.phase == 2 and not self.transitioned:
            self.phase_transition()
        if self.phase == 1:
            return self.train_step_phase1(self.sampler.pairs(self.tc.batch_size))
        return self.train_step_phase2(self.sampler.triplets(self.tc.batch_size))

    # -- persistence ------------------------------------------------------

    def state(self) -> tuple[dict[str, torch.Tensor], dict]:
        tensors: dict[str, torch.Tensor] = {}
        for k, v in self.student.state_dict().items():
            tensors[f"student.{k}"] = v
        for k, v in self.teacher.state_dict().items():
            tensors[f"teacher.{k}"] = v
        for k, v in self.opt.exp_avg.items():
            tensors[f"adam.m.{k}"] = v
        for k, v in self.opt.exp_avg_sq.items():
            tensors[f"adam.v.{k}"] = v
        meta = {
            "format": "debs-checkpoint",
            "config": self.config.to_dict(),
            "config_hash": self.config.model_hash(),
            "iteration": self.iteration,
            "adam_step": self.opt.step,
            "transitioned": self.transitioned,
            "sampler_state": self.sampler.get_state(),
        }
        return tensors, meta

    def save(self, path) -> None:
        tensors, meta = self.state()
        ckpt.save(path, tensors, meta)

    def load_state(self, tensors: dict[str, torch.Tensor], meta: dict) -> None:
        def section(prefix):
            return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

        self.student.load_state_dict(section("student."))
        self.teacher.load_state_dict(section("teacher."))
        self.opt = AdamState(meta["adam_step"], section("adam.m."), section("adam.v."))
        self.iteration = int(meta["iteration"])
        self.transitioned = bool(meta["transitioned"])
        self.sampler.set_state(meta["sampler_state"])

    @classmethod
    def from_checkpoint(cls, path, dataset: Dataset, config: RunConfig | None = None, force: bool = False) -> "Trainer":
        tensors, meta = ckpt.load(path)
        stored = RunConfig.from_dict(meta["config"])
        config = config or stored
        if config.model_hash() != meta["config_hash"] and not force:
            raise CheckpointError("config hash differs from the checkpoint's; pass force to override")
        trainer = cls(config, dataset)
        trainer.load_state(tensors, meta)
        return trainer


def _sampler_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, 0x5A]).generate_state(1)[0])


def load_network(path) -> tuple[DebsNet, RunConfig, dict]:
    """Student network (eval mode) from a checkpoint file."""
    tensors, meta = ckpt.load(path)
    config = RunConfig.from_dict(meta["config"])
    net = DebsNet(config, student=True)
    net.load_state_dict({k[8:]: v for k, v in tensors.items() if k.startswith("student.")})
    net.eval()
    return net, config, meta


# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([_fmt(r.get(f)) for f in METRIC_FIELDS])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                if v == "":
                    continue
                row[k] = int(v) if k in ("iteration", "phase") else float(v)
            out.append(row)
        return out


EvalHook = Callable[[Trainer], dict]


def run_training(
    config: RunConfig,
    dataset: Dataset,
    out_dir=None,
    resume=None,
    stop_at: int | None = None,
    eval_hook: EvalHook | None = None,
    force: bool = False,
) -> Trainer:
    """Run (or continue) the full schedule.

    With ``out_dir`` the metrics CSV and ``checkpoint.bin`` are written
    there; on SIGINT the current state is flushed before exiting.
    ``stop_at`` halts early at that iteration (used to test resumption).
    """
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, dataset, config, force=force)
        metrics_path = Path(out_dir) / "metrics.csv" if out_dir else None
        if metrics_path is not None and metrics_path.exists():
            trainer.rows = [r for r in read_metrics(metrics_path) if r["iteration"] < trainer.iteration]
    else:
        trainer = Trainer(config, dataset)

    tc = config.train
    end = tc.total_iters if stop_at is None else min(stop_at, tc.total_iters)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def flush():
        if out is not None:
            trainer.save(out / "checkpoint.bin")
            write_metrics(trainer.rows, out / "metrics.csv")

    interrupted = []
    previous = None
    try:
        previous = signal.signal(signal.SIGINT, lambda *_: interrupted.append(True))
    except ValueError:  # not in the main thread
        previous = None
    try:
        while trainer.iteration < end:
            trainer.step()
            it = trainer.iteration
            if eval_hook is not None and tc.eval_every and it % tc.eval_every == 0:
                trainer.rows[-1].update(eval_hook(trainer))
            if tc.checkpoint_every and it % tc.checkpoint_every == 0:
                flush()
            if interrupted:
                log.warning("interrupted at iteration %d; checkpoint flushed", it)
                flush()
                raise KeyboardInterrupt
        flush()
    finally:
        if previous is not None:
            signal.signal(signal.SIGINT, previous)
    return trainer
