"""Training objectives, the EMA teacher rule and the Adam update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import torch

from .errors import ContractViolation
from .numeric import cosine_similarity


def loss_sim(teacher_proj: torch.Tensor, student_pred: torch.Tensor) -> torch.Tensor:
    """``1 - cos`` between a teacher projection and a student prediction."""
    return 1.0 - cosine_similarity(teacher_proj, student_pred)


def loss_dis(teacher_proj: torch.Tensor, student_pred: torch.Tensor) -> torch.Tensor:
    """``1 + cos``; minimised when the prediction points away from the target."""
    return 1.0 + cosine_similarity(teacher_proj, student_pred)


def par(z_prev: torch.Tensor, z_next: torch.Tensor, i, j) -> torch.Tensor:
    """Distance-weighted interpolation ``(z_prev * j + z_next * i) / (i + j)``.

    ``i`` is the offset back to ``z_prev`` and ``j`` the offset forward to
    ``z_next``, so the nearer endpoint gets the larger weight. ``i``/``j`` may
    be scalars or per-row tensors. The result is detached.
    """
    if z_prev.shape != z_next.shape:
        raise ContractViolation("par: endpoint shapes differ")
    i = torch.as_tensor(i, dtype=z_prev.dtype)
    j = torch.as_tensor(j, dtype=z_prev.dtype)
    if bool(((i + j) == 0).any()):
        raise ContractViolation("par: i + j must be non-zero")
    if i.dim() == 1 and z_prev.dim() == 2:
        i, j = i[:, None], j[:, None]
    return ((z_prev * j + z_next * i) / (i + j)).detach()


def loss_gra(student_pred: torch.Tensor, par_target: torch.Tensor) -> torch.Tensor:
    return 1.0 - cosine_similarity(student_pred, par_target.detach())


def loss_dis_path(pred_mid, pred_prev, teacher_prev, teacher_next, i, j, alpha: float):
    """``alpha * loss_dis(teacher_next, pred_prev) + loss_gra(pred_mid, par(teacher_prev, teacher_next))``.

    Returns ``(total, dis_term, gra_term)`` with the same batch shape.
    """
    dis = loss_dis(teacher_next, pred_prev)
    gra = loss_gra(pred_mid, par(teacher_prev, teacher_next, i, j))
    return alpha * dis + gra, dis, gra


@torch.no_grad()
def ema_update(teacher: Mapping[str, torch.Tensor], student: Mapping[str, torch.Tensor], tau: float) -> None:
    """In place ``teacher <- tau * teacher + (1 - tau) * student`` for every floating tensor."""
    if teacher.keys() != student.keys():
        raise ContractViolation("ema_update: teacher and student tensor names differ")
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ContractViolation(f"ema_update: shape mismatch for {name}")
        if not t.is_floating_point():
            t.copy_(s)
        elif tau == 0.0:
            t.copy_(s)
        elif tau != 1.0:
            t.mul_(tau).add_(s, alpha=1.0 - tau)


@dataclass
class AdamState:
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    active: Iterable[str] | None = None,
) -> None:
    """One Adam step with decoupled weight decay, in place.

    Only names in ``active`` (default: all of ``params``) are touched; moments
    of inactive parameters are left as they are. A missing gradient counts as
    zero for an active parameter.
    """
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    names = list(params) if active is None else list(active)
    for name in names:
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = torch.zeros_like(p)
            state.exp_avg_sq[name] = torch.zeros_like(p)
        v = state.exp_avg_sq[name]
        if weight_decay:
            p.mul_(1.0 - lr * weight_decay)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)
