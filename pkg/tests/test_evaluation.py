import numpy as np
import pytest
import torch

from debs.config import DataSpec, EncoderConfig
from debs.data import generate_dataset
from debs.encoder import PatchEncoder
from debs.errors import ContractViolation
from debs.evaluation import (
    extract_representations,
    fit_probe,
    metrics,
    pca,
    probe_experiment,
    reconstruction_error,
    separation_scores,
    silhouette_1d,
    standardized_mean_difference,
    write_scores_csv,
    write_svg_scatter,
)


def test_metrics_examples():
    # TP=3, FN=1, TN=4, FP=2
    labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    preds = [1, 1, 1, 0, 0, 0, 0, 0, 1, 1]
    r = metrics(preds, labels)
    assert r.accuracy == pytest.approx(70.0)
    assert r.sensitivity == pytest.approx(75.0)
    assert round(r.specificity, 1) == 66.7
    assert r.confusion == {"tp": 3, "tn": 4, "fp": 2, "fn": 1}

    perfect = metrics(labels, labels)
    assert (perfect.accuracy, perfect.sensitivity, perfect.specificity) == (100.0, 100.0, 100.0)

    negative = metrics([0] * 10, labels)
    assert negative.sensitivity == 0.0 and negative.specificity == 100.0


def test_metrics_errors():
    with pytest.raises(ContractViolation):
        metrics([], [])
    with pytest.raises(ContractViolation):
        metrics([1, 0], [1])


def test_metrics_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        y = rng.integers(0, 2, n)
        p = rng.integers(0, 2, n)
        tp = tn = fp = fn = 0
        for a, b in zip(p, y):
            if a and b:
                tp += 1
            elif not a and not b:
                tn += 1
            elif a:
                fp += 1
            else:
                fn += 1
        r = metrics(p, y)
        assert r.confusion == {"tp": tp, "tn": tn, "fp": fp, "fn": fn}
        assert r.accuracy == 100.0 * (tp + tn) / n
        assert r.sensitivity == (100.0 * tp / (tp + fn) if tp + fn else 0.0)
        assert r.specificity == (100.0 * tn / (tn + fp) if tn + fp else 0.0)
        assert all(0 <= v <= 100 for v in (r.accuracy, r.sensitivity, r.specificity))


# -- probe --------------------------------------------------------------------


def test_probe_separable_2d():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.normal([2, 2], 0.5, (50, 2)), rng.normal([-2, -2], 0.5, (50, 2))])
    y = np.r_[np.ones(50), np.zeros(50)].astype(int)
    probe = fit_probe(x, y)
    assert metrics(probe.predict(x), y).accuracy == 100.0


def test_probe_single_class_rejected():
    with pytest.raises(ContractViolation):
        fit_probe(np.zeros((4, 2)), np.ones(4))


def test_probe_deterministic():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(60, 5)), rng.integers(0, 2, 60)
    a, b = fit_probe(x, y, seed=3), fit_probe(x, y, seed=3)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_probe_feature_permutation_equivariant():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(80, 6))
    y = (x[:, 0] + 0.5 * x[:, 3] > 0).astype(int)
    perm = rng.permutation(6)
    a, b = fit_probe(x, y), fit_probe(x[:, perm], y)
    np.testing.assert_allclose(a.weights[perm], b.weights, atol=1e-9)
    np.testing.assert_allclose(a.decision_function(x), b.decision_function(x[:, perm]), atol=1e-6)


def test_probe_shuffled_labels_near_majority_rate():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(300, 8))
    y = (x[:, 0] > 0).astype(int)
    xe = rng.normal(size=(300, 8))
    ye = (xe[:, 0] > 0).astype(int)
    # one shuffle fits a random direction; chance level holds on average
    accs = [probe_experiment(x, rng.permutation(y), xe, ye, seed=k).accuracy for k in range(10)]
    majority = 100.0 * max(ye.mean(), 1 - ye.mean())
    assert abs(np.mean(accs) - majority) <= 5.0
    assert probe_experiment(x, y, xe, ye).accuracy > 90


# -- PCA -----------------------------------------------------------------------


def test_pca_line():
    t = np.linspace(-3, 3, 50)
    pts = np.c_[t, 2 * t] + 1.0
    r = pca(pts, 2)
    np.testing.assert_allclose(np.abs(r.components[0]), np.array([1, 2]) / np.sqrt(5), atol=1e-7)
    assert r.explained_variance[1] < 1e-10


def test_pca_isotropic():
    rng = np.random.default_rng(6)
    r = pca(rng.standard_normal((4000, 4)), 4)
    assert r.explained_variance.max() / r.explained_variance.min() < 1.2


def _eigh_oracle(x, k):
    xc = x - x.mean(axis=0)
    w, v = np.linalg.eigh(xc.T @ xc / (len(x) - 1))
    order = np.argsort(w)[::-1][:k]
    return w[order], v[:, order].T


def test_pca_matches_dense_eigensolver():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.normal(size=(10, 5))
        r = pca(x, 5)
        w, v = _eigh_oracle(x, 5)
        np.testing.assert_allclose(r.explained_variance, w, atol=1e-6)
        for got, ref in zip(r.components, v):
            assert min(np.abs(got - ref).max(), np.abs(got + ref).max()) < 1e-6


def test_pca_orthonormal_and_ordered():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(200, 12)) @ rng.normal(size=(12, 12))
    r = pca(x, 8)
    np.testing.assert_allclose(r.components @ r.components.T, np.eye(8), atol=1e-5)
    assert np.all(np.diff(r.explained_variance) <= 1e-12)
    errs = [reconstruction_error(x, pca(x, k)) for k in range(1, 9)]
    assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))


def test_pca_preconditions():
    with pytest.raises(ContractViolation):
        pca(np.zeros((3, 5)), 3)


# -- separation ------------------------------------------------------------------


def test_silhouette_perfect_groups():
    values = np.repeat([0.0, 5.0, 10.0], 4)
    groups = np.repeat([1, 2, 3], 4)
    assert silhouette_1d(values, groups) == 1.0


def test_silhouette_drops_singletons():
    values = np.array([0.0, 0.0, 5.0, 5.0, 100.0])
    groups = np.array([1, 1, 2, 2, 3])
    assert silhouette_1d(values, groups) == 1.0


def test_event_separation_independent_labels():
    rng = np.random.default_rng(9)
    v = rng.normal(size=20_000)
    y = rng.integers(0, 2, 20_000)
    assert standardized_mean_difference(v, y) < 0.05


def test_separation_scores_shapes():
    rng = np.random.default_rng(10)
    sid = np.repeat(np.arange(6), 20)
    ev = np.tile(np.r_[np.zeros(10), np.ones(10)], 6).astype(int)
    x = np.c_[sid * 3.0, ev * 1.0, rng.normal(size=(120, 4)) * 0.1] + rng.normal(size=(120, 6)) * 0.05
    s = separation_scores(pca(x, 5), sid, ev)
    assert s.best_subject_component == 0 and s.best_event_component == 1
    assert s.subject.shape == s.event.shape == (5,)


# -- extraction and files --------------------------------------------------------


@pytest.fixture(scope="module")
def small():
    ds = generate_dataset(DataSpec(n_subjects=3, segments_per_subject=6, seed=4))
    torch.manual_seed(0)
    enc = PatchEncoder(EncoderConfig(depth=1, model_dim=16, mlp_hidden=32))
    return ds, enc


def test_extract_representations(small):
    ds, enc = small
    a = extract_representations(enc, ds, batch_size=5)
    b = extract_representations(enc, ds)
    assert a.shape == (18, 16) and np.isfinite(a).all()
    assert np.array_equal(a, b)


def test_extract_dimension_mismatch(small):
    ds, _ = small
    with pytest.raises(ContractViolation):
        extract_representations(PatchEncoder(EncoderConfig(input_len=500, depth=1, model_dim=16)), ds)


def test_output_files(tmp_path, small):
    ds, enc = small
    reps = extract_representations(enc, ds)
    _, sid, idx, lab = ds.stacked()
    r = pca(reps, 5)
    write_scores_csv(tmp_path / "pca.csv", r, sid, idx, lab)
    header = (tmp_path / "pca.csv").read_text().splitlines()[0].split(",")
    assert header[3:] == ["pc1", "pc2", "pc3", "pc4", "pc5"]
    write_svg_scatter(tmp_path / "s.svg", r, 0, 1, sid, title="subjects")
    svg = (tmp_path / "s.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<circle") == 18
