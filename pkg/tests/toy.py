"""Two-token model used by the full-pipeline gradient checks."""

import numpy as np
import torch

from debs.config import EncoderConfig, HeadConfig, RunConfig, TrainConfig
from debs.data import Dataset, SubjectRecord
from debs.trainer import Trainer, paired_state


def toy_dataset(seed):
    rng = np.random.default_rng(seed)
    subjects = [
        SubjectRecord(k, rng.normal(size=(20, 8)).astype(np.float32), np.zeros(20, np.uint8)) for k in range(2)
    ]
    return Dataset(subjects, segment_len=8)


def toy_trainer(seed):
    """Depth 1, width 8, two tokens of four samples, float64."""
    cfg = RunConfig(
        encoder=EncoderConfig(input_len=8, patch_size=4, depth=1, heads=2, model_dim=8, mlp_hidden=16),
        heads=HeadConfig(proj_dim=6, pred_hidden=5),
        train=TrainConfig(total_iters=4, phase_switch_iter=2, batch_size=4, window_segments=6, seed=seed),
    )
    tr = Trainer(cfg, toy_dataset(seed))
    tr.student.double()
    tr.teacher.double()
    # the check wants a generic point: at init the stacked 0.02-scale head layers
    # give outputs smaller than any usable step, so redraw everything at unit-ish
    # scale and move the teacher off the student
    with torch.no_grad():
        g = torch.Generator().manual_seed(seed)
        for p in tr.student.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) / max(p.shape[-1], 1) ** 0.5)
        t, s = paired_state(tr.teacher, tr.student)
        for k in t:
            t[k].copy_(s[k])
        for p in tr.teacher.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return tr


def loss_closure(tr, phase, batch_size=4):
    if phase == 1:
        batch = tr.sampler.pairs(batch_size)
        return lambda: tr.phase1_loss(batch)
    batch = tr.sampler.triplets(batch_size)
    return lambda: tr.phase2_loss(batch)[0]


def active_params(tr, phase):
    return {n: p for n, p in tr.student.named_parameters() if n in tr._active[phase]}
