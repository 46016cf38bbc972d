"""Projector and predictor MLPs for the similarity and dissimilarity paths."""

from __future__ import annotations

import torch
from torch import nn

from .config import HeadConfig
from .errors import ContractViolation

PATHS = ("sim", "dis")


class BatchNorm(nn.Module):
    """Feature batch-norm with a switch to freeze running statistics.

    Teacher copies set ``update_running = False``: they normalise with batch
    statistics but their running buffers move only through the EMA rule.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.update_running = True
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.register_buffer("running_mean", torch.zeros(dim))
        self.register_buffer("running_var", torch.ones(dim))

    def forward(self, x):
        if self.training:
            if x.shape[0] < 2:
                raise ContractViolation("train-mode batch-norm needs a batch of at least 2")
            mean = x.mean(dim=0)
            var = x.var(dim=0, unbiased=False)
            if self.update_running:
                with torch.no_grad():
                    n = x.shape[0]
                    self.running_mean.lerp_(mean.detach(), self.momentum)
                    self.running_var.lerp_(var.detach() * n / (n - 1), self.momentum)
        else:
            mean, var = self.running_mean, self.running_var
        return (x - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias


class MLP(nn.Module):
    """linear -> batch-norm -> ReLU -> linear"""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, cfg: HeadConfig):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.bn = BatchNorm(hidden, cfg.bn_momentum, cfg.bn_eps)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x):
        return self.fc2(torch.relu(self.bn(self.fc1(x))))


class HeadStack(nn.Module):
    """Two projectors, plus two predictors when ``student`` is true."""

    def __init__(self, rep_dim: int, cfg: HeadConfig = HeadConfig(), student: bool = True):
        super().__init__()
        self.student = student
        p = cfg.proj_dim
        self.projector_sim = MLP(rep_dim, p, p, cfg)
        self.projector_dis = MLP(rep_dim, p, p, cfg)
        if student:
            self.predictor_sim = MLP(p, cfg.pred_hidden, p, cfg)
            self.predictor_dis = MLP(p, cfg.pred_hidden, p, cfg)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04)
                nn.init.zeros_(m.bias)

    def project(self, rep: torch.Tensor, which: str) -> torch.Tensor:
        if which not in PATHS:
            raise ContractViolation(f"unknown path {which!r}")
        return getattr(self, f"projector_{which}")(rep)

    def predict(self, proj: torch.Tensor, which: str) -> torch.Tensor:
        if not self.student:
            raise ContractViolation("predict called on a teacher head stack")
        if which not in PATHS:
            raise ContractViolation(f"unknown path {which!r}")
        return getattr(self, f"predictor_{which}")(proj)

    def path_parameters(self, which: str):
        mods = [getattr(self, f"projector_{which}")]
        if self.student:
            mods.append(getattr(self, f"predictor_{which}"))
        for m in mods:
            yield from m.parameters()
