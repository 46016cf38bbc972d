"""Array arithmetic core: cosine similarity, gradient maps and finite-difference checks.

Tensors and reverse-mode differentiation come from torch. Teacher-side
values are "constant-marked" by living outside autograd (``requires_grad``
false or produced under ``torch.no_grad``), which is all the stop-gradient
convention needs.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np
import torch

from .errors import ContractViolation, NonDeterministicError, NumericFault

COSINE_EPS = 1e-8

GradMap = dict[str, torch.Tensor]


def cosine_similarity(a: torch.Tensor, b: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """``a.b / max(|a| |b|, 1e-8)`` along ``dim``.

    The floor is applied with ``clamp`` so that, once active, it acts as a
    constant and passes no gradient to the norms. The result is clamped to
    [-1, 1], since float32 round-off can otherwise push parallel vectors
    just past 1.
    """
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape != b.shape:
        raise ContractViolation(f"cosine_similarity: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    dot = (a * b).sum(dim=dim)
    norms = torch.linalg.vector_norm(a, dim=dim) * torch.linalg.vector_norm(b, dim=dim)
    return (dot / norms.clamp(min=COSINE_EPS)).clamp(-1.0, 1.0)


def forward_backward(loss: torch.Tensor, leaves: Mapping[str, torch.Tensor]) -> GradMap:
    """Return ``dloss/dleaf`` for every trainable leaf the loss depends on.

    Constant-marked leaves and leaves the loss never touched are absent from
    the result, so an empty dict means nothing upstream is trainable.
    """
    if loss.numel() != 1:
        raise ContractViolation(f"loss must be scalar, got shape {tuple(loss.shape)}")
    names = [n for n, t in leaves.items() if t.requires_grad]
    if not loss.requires_grad or not names:
        return {}
    grads = torch.autograd.grad(loss.reshape(()), [leaves[n] for n in names], allow_unused=True)
    return {n: g for n, g in zip(names, grads) if g is not None}


def ensure_finite(x: torch.Tensor, what: str, iteration: int | None = None) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        where = f" at iteration {iteration}" if iteration is not None else ""
        raise NumericFault(f"non-finite values in {what}{where}")
    return x


def finite_difference_check(
    f: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    epsilon: float = 1e-3,
    grad_fn: Callable[[], Mapping[str, torch.Tensor]] | None = None,
    coords_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative deviation between analytic and central-difference gradients.

    ``f`` is a closure reading ``params`` (which are perturbed in place, one
    coordinate at a time, and restored). The analytic gradient comes from
    autograd unless ``grad_fn`` supplies one. Deviation per coordinate is
    ``|g - cd| / max(|g|, |cd|, 1e-6)``. With ``coords_per_tensor`` only
    that many randomly chosen coordinates of each tensor are probed.
    """
    if epsilon <= 0:
        raise ContractViolation("epsilon must be positive")
    base = f().detach().clone()
    if not torch.equal(base, f().detach()):
        raise NonDeterministicError("f returned different values for identical inputs")

    if grad_fn is None:
        leaves = {n: p for n, p in params.items()}
        for p in leaves.values():
            p.requires_grad_(True)
        analytic = forward_backward(f(), leaves)
    else:
        analytic = dict(grad_fn())

    worst = 0.0
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, p in params.items():
            g = analytic.get(name)
            g = torch.zeros_like(p) if g is None else g.detach()
            flat = p.view(-1)
            gflat = g.reshape(-1)
            coords = range(flat.numel())
            if coords_per_tensor is not None and flat.numel() > coords_per_tensor:
                coords = rng.choice(flat.numel(), coords_per_tensor, replace=False).tolist()
            for k in coords:
                orig = flat[k].item()
                flat[k] = orig + epsilon
                up = f().item()
                flat[k] = orig - epsilon
                down = f().item()
                flat[k] = orig
                cd = (up - down) / (2 * epsilon)
                ga = gflat[k].item()
                dev = abs(ga - cd) / max(abs(ga), abs(cd), 1e-6)
                worst = max(worst, dev)
    return worst
