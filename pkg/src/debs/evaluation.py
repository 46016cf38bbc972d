"""Frozen-representation evaluation: linear probe, PCA and separation scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset
from .errors import ContractViolation, ConvergenceError


def extract_representations(net, dataset: Dataset, batch_size: int = 256) -> np.ndarray:
    """Eval-mode encoder outputs, one row per segment in dataset iteration order."""
    x, *_ = dataset.stacked()
    encoder = net.encoder if hasattr(net, "encoder") else net
    if x.shape[1] != encoder.config.input_len:
        raise ContractViolation(f"dataset segment length {x.shape[1]} != encoder input_len {encoder.config.input_len}")
    was_training = encoder.training
    encoder.eval()
    out = np.zeros((len(x), encoder.config.model_dim), dtype=np.float32)
    with torch.no_grad():
        for lo in range(0, len(x), batch_size):
            out[lo : lo + batch_size] = encoder(torch.from_numpy(x[lo : lo + batch_size])).numpy()
    encoder.train(was_training)
    return out


# ---------------------------------------------------------------------------
# linear probe


@dataclass
class LinearProbe:
    """Linear max-margin classifier: ``sign(w.x + b)`` on standardised features."""

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x, dtype=np.float64) - self.mean) / self.scale) @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.decision_function(x) > 0).astype(np.int64)


def fit_probe(
    x: np.ndarray,
    labels: np.ndarray,
    reg: float = 1e-3,
    epochs: int = 200,
    lr: float = 0.1,
    decay: float = 0.05,
    batch_size: int = 32,
    seed: int = 0,
) -> LinearProbe:
    """Mini-batch sub-gradient descent on the L2-regularised hinge loss.

    Labels are {0, 1} with 1 the event (positive) class. The step size at
    epoch ``e`` is ``lr / (1 + decay * e)``.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ContractViolation("probe training needs both classes")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xs = (x - mean) / scale
    y = np.where(labels == 1, 1.0, -1.0)
    n, d = xs.shape
    w = np.zeros(d)
    b = 0.0
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        step = lr / (1.0 + decay * epoch)
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            margin = y[idx] * (xs[idx] @ w + b)
            viol = margin < 1
            gw = reg * w - (y[idx, None] * xs[idx])[viol].sum(axis=0) / len(idx)
            gb = -y[idx][viol].sum() / len(idx)
            w -= step * gw
            b -= step * gb
    return LinearProbe(w, b, mean, scale)


def predict(probe: LinearProbe, x: np.ndarray) -> np.ndarray:
    return probe.predict(x)


@dataclass
class ProbeResult:
    accuracy: float
    sensitivity: float
    specificity: float
    confusion: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "confusion": dict(self.confusion),
        }


def metrics(predictions, labels) -> ProbeResult:
    """Accuracy, sensitivity and specificity in percent; class 1 is positive.

    A rate whose denominator is empty (no positives, or no negatives) is 0.
    """
    p = np.asarray(predictions).astype(np.int64)
    y = np.asarray(labels).astype(np.int64)
    if p.shape != y.shape:
        raise ContractViolation("predictions and labels differ in length")
    if p.size == 0:
        raise ContractViolation("metrics of an empty set")
    tp = int(np.sum((p == 1) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    pct = lambda a, b: 100.0 * a / b if b else 0.0
    return ProbeResult(
        accuracy=pct(tp + tn, tp + tn + fp + fn),
        sensitivity=pct(tp, tp + fn),
        specificity=pct(tn, tn + fp),
        confusion={"tp": tp, "tn": tn, "fp": fp, "fn": fn},
    )


def probe_experiment(train_x, train_y, eval_x, eval_y, seed: int = 0) -> ProbeResult:
    """Frozen protocol: fit on one cohort, score on held-out subjects."""
    probe = fit_probe(train_x, train_y, seed=seed)
    return metrics(probe.predict(eval_x), eval_y)


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaResult:
    components: np.ndarray  # [k, d], rows orthonormal
    explained_variance: np.ndarray  # [k]
    scores: np.ndarray  # [n, k]
    mean: np.ndarray


def _power_iteration(cov: np.ndarray, basis: list[np.ndarray], v: np.ndarray, tol: float, max_iter: int, index: int):
    def orth(u):
        for _ in range(2):  # second pass removes round-off leakage
            for b in basis:
                u = u - (b @ u) * b
        return u

    floor = 1e-12 * max(float(np.trace(cov)), np.finfo(float).tiny)

    v = orth(v)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ConvergenceError(f"component {index}: start vector lies in the found subspace")
    v /= norm
    prev_step = np.inf
    for _ in range(max_iter):
        w = orth(cov @ v)
        norm = np.linalg.norm(w)
        if norm <= floor:
            return v, 0.0  # remaining subspace is numerically null
        w /= norm
        if w @ v < 0:
            w = -w
        step = float(np.linalg.norm(w - v))
        # steps shrink geometrically; extrapolate the tail to bound the remaining error
        rate = step / prev_step if prev_step > 0 else 0.0
        remaining = step * rate / (1 - rate) if rate < 1 else np.inf
        if max(step, remaining) < tol:
            return w, float(w @ cov @ w)
        prev_step = step
        v = w
    raise ConvergenceError(f"power iteration did not converge for component {index} in {max_iter} iterations")


def pca(reps: np.ndarray, k: int, tol: float = 1e-8, max_iter: int = 10_000, seed: int = 0) -> PcaResult:
    """Top-``k`` principal axes by power iteration with deflation against found axes.

    Each component's sign is fixed so its largest-magnitude entry is positive.
    """
    x = np.asarray(reps, dtype=np.float64)
    n, d = x.shape
    if not n > k:
        raise ContractViolation(f"need more rows ({n}) than components ({k})")
    if k > d:
        raise ContractViolation(f"k={k} exceeds dimension {d}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    rng = np.random.default_rng(seed)
    basis: list[np.ndarray] = []
    variances = []
    for c in range(k):
        v, lam = _power_iteration(cov, basis, rng.standard_normal(d), tol, max_iter, c)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        basis.append(v)
        variances.append(max(lam, 0.0))
    comps = np.array(basis)
    return PcaResult(comps, np.array(variances), xc @ comps.T, mean)


def reconstruction_error(reps: np.ndarray, result: PcaResult) -> float:
    xc = np.asarray(reps, dtype=np.float64) - result.mean
    recon = result.scores @ result.components
    return float(np.sum((xc - recon) ** 2))


# ---------------------------------------------------------------------------
# separation scores


def silhouette_1d(values: np.ndarray, groups: np.ndarray) -> float:
    """Mean silhouette of scalar values grouped by ``groups``; groups of size < 2 are dropped."""
    v = np.asarray(values, dtype=np.float64)
    g = np.asarray(groups)
    uniq, counts = np.unique(g, return_counts=True)
    keep = np.isin(g, uniq[counts >= 2])
    v, g = v[keep], g[keep]
    labels = np.unique(g)
    if len(labels) < 2:
        return 0.0
    dist = np.abs(v[:, None] - v[None, :])
    member = g[:, None] == labels[None, :]  # [n, L]
    sums = dist @ member
    sizes = member.sum(axis=0).astype(np.float64)
    own = member.argmax(axis=1)
    a = sums[np.arange(len(v)), own] / (sizes[own] - 1)
    other = sums / sizes
    other[np.arange(len(v)), own] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def standardized_mean_difference(values: np.ndarray, labels: np.ndarray) -> float:
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels)
    pos, neg = v[y == 1], v[y == 0]
    if len(pos) < 2 or len(neg) < 2:
        return 0.0
    pooled = np.sqrt(0.5 * (pos.var(ddof=1) + neg.var(ddof=1)))
    if pooled == 0:
        return 0.0 if pos.mean() == neg.mean() else np.inf
    return float(abs(pos.mean() - neg.mean()) / pooled)


@dataclass
class SeparationScores:
    subject: np.ndarray  # per component silhouette
    event: np.ndarray  # per component |standardised mean difference|

    @property
    def best_subject_component(self) -> int:
        return int(np.argmax(self.subject))

    @property
    def best_event_component(self) -> int:
        return int(np.argmax(self.event))


def separation_scores(result: PcaResult, subject_ids, event_labels) -> SeparationScores:
    scores = result.scores
    k = scores.shape[1]
    subj = np.array([silhouette_1d(scores[:, c], subject_ids) for c in range(k)])
    ev = np.array([standardized_mean_difference(scores[:, c], event_labels) for c in range(k)])
    return SeparationScores(subj, ev)


def permutation_control(result: PcaResult, subject_ids, event_labels, n_perm: int = 20, seed: int = 0):
    """Per-component separation scores under shuffled labels: ``(subject [P, k], event [P, k])``."""
    rng = np.random.default_rng(seed)
    subj, ev = [], []
    for _ in range(n_perm):
        s = separation_scores(result, rng.permutation(subject_ids), rng.permutation(event_labels))
        subj.append(s.subject)
        ev.append(s.event)
    return np.array(subj), np.array(ev)


# ---------------------------------------------------------------------------
# output files


def write_scores_csv(path, result: PcaResult, subject_ids, segment_index, labels) -> None:
    k = result.scores.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "segment_index", "label"] + [f"pc{c + 1}" for c in range(k)])
        for r in range(len(result.scores)):
            w.writerow([int(subject_ids[r]), int(segment_index[r]), int(labels[r])] + [repr(float(v)) for v in result.scores[r]])


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def write_svg_scatter(path, result: PcaResult, cx: int, cy: int, groups, title: str = "", size: int = 480) -> None:
    """Scatter of components ``cx`` vs ``cy`` (0-based), coloured by ``groups``."""
    xs, ys = result.scores[:, cx], result.scores[:, cy]
    pad = 40
    span = lambda v: (v.min(), v.max() if v.max() > v.min() else v.min() + 1.0)
    (x0, x1), (y0, y1) = span(xs), span(ys)
    sx = lambda v: pad + (v - x0) / (x1 - x0) * (size - 2 * pad)
    sy = lambda v: size - pad - (v - y0) / (y1 - y0) * (size - 2 * pad)
    colours = {g: _PALETTE[k % len(_PALETTE)] for k, g in enumerate(np.unique(groups))}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{size / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">PC{cx + 1}</text>',
        f'<text x="12" y="{size / 2}" font-size="12" transform="rotate(-90 12 {size / 2})">PC{cy + 1}</text>',
    ]
    for x, y, g in zip(xs, ys, groups):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{colours[g]}" fill-opacity="0.7"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
